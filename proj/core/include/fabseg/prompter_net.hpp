#pragma once

#include <cstdint>
#include <vector>

#include "fabseg/autograd.hpp"
#include "fabseg/params.hpp"

namespace fabseg {

/// Deeplabv3+-style encoder-decoder. The backbone has four residual stages;
/// stages 1-3 halve the resolution and stage 4 keeps it with dilation 2, so
/// after the stride-2 stem the output stride is 16.
struct PrompterConfig {
    std::vector<int> backbone_channels{16, 32, 64, 128};
    int blocks_per_stage = 1;
    std::vector<int> aspp_rates{1, 6, 12, 18};
    int aspp_channels = 64;
    int low_level_channels = 16;
    int decoder_channels = 64;
    int aux_channels = 32;
    int num_classes = 2;
    int input_height = 256;
    int input_width = 256;
    int in_channels = 3;

    void validate() const;
};

struct PrompterOutput {
    ag::Var main_logits;  // [N, 2, H, W]
    ag::Var aux_logits;   // [N, 2, H, W], training only
};

/// Fresh parameters under the `prompter.` prefix.
ParamStore init_prompter_params(const PrompterConfig& config, std::uint64_t seed);

/// `image` is [N, C, H, W] in [0, 1].
PrompterOutput prompter_forward(const ag::Var& image, const PrompterConfig& config, ParamBinder& params, bool training);

/// conv3x3 -> BN -> conv1x1 -> bilinear upsample to the input resolution.
ag::Var aux_head_forward(const ag::Var& features, const PrompterConfig& config, ParamBinder& params, bool training);

/// Foreground-minus-background logit per pixel of sample `n`, as [H, W].
Tensor mask_logits(const Tensor& main_logits, std::int64_t n = 0);

}  // namespace fabseg
