#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fabseg/autograd.hpp"
#include "fabseg/params.hpp"
#include "fabseg/prompt_gen.hpp"
#include "fabseg/raster.hpp"

namespace fabseg {

struct SamConfig {
    int image_height = 256;
    int image_width = 256;
    int in_channels = 3;
    int patch_size = 16;
    int embed_dim = 64;
    int encoder_depth = 4;
    int encoder_heads = 4;
    int mlp_ratio = 4;
    int prompt_dim = 64;        // c
    int mask_in_channels = 16;  // width of the mask-prompt conv stack
    int decoder_depth = 2;
    int decoder_heads = 4;
    int decoder_mlp_dim = 128;
    int attention_downsample = 2;  // cross-attention works in c / downsample dims

    int grid_h() const { return image_height / patch_size; }
    int grid_w() const { return image_width / patch_size; }
    void validate() const;
};

enum class Head { Region, Boundary };

Head parse_head(std::string_view name);
std::string_view head_name(Head head);
/// "sam.decoder_region." or "sam.decoder_boundary."
std::string decoder_prefix(Head head);

inline constexpr std::string_view kImageEncoderPrefix = "sam.image_encoder.";
inline constexpr std::string_view kPromptEncoderPrefix = "sam.prompt_encoder.";

/// Both decoders start from the same random stream, so they are identical
/// until fine-tuned.
ParamStore init_sam_params(const SamConfig& config, std::uint64_t seed);
std::vector<std::string> sam_frozen_manifest();

/// [1, C, H, W] image in [0, 1] -> F_I as [1, c, h, w].
ag::Var encode_image(const ag::Var& image, const SamConfig& config, ParamBinder& params);

struct PromptEmbeddings {
    ag::Var dense;   // F_mp, [1, c, h, w]
    ag::Var sparse;  // F_pp, [N, c]
};

/// Either prompt may be null. A missing mask prompt yields the learned
/// no-mask vector broadcast over the grid; missing points yield N = 0.
PromptEmbeddings encode_prompts(const RealRaster* mask_prompt, const PointPromptSet* points, const SamConfig& config,
                                ParamBinder& params);

/// Fixed Fourier encoding of (x, y) pixel centres, one c-vector per point.
Tensor point_positional_encoding(const PointPromptSet& points, const SamConfig& config, const Tensor& gaussian);
/// Fourier encoding of the embedding-grid cell centres as [h*w, c].
Tensor dense_positional_encoding(const SamConfig& config, const Tensor& gaussian);

/// Region or boundary logits at the input resolution, [1, 1, H, W].
ag::Var decode_mask(const ag::Var& image_embedding, const ag::Var& dense, const ag::Var& sparse, Head head,
                    const SamConfig& config, ParamBinder& params);

}  // namespace fabseg
