#pragma once

#include <cstdint>
#include <vector>

#include "fabseg/checkpoint.hpp"
#include "fabseg/config.hpp"
#include "fabseg/data_pipeline.hpp"
#include "fabseg/metrics.hpp"
#include "fabseg/postprocess.hpp"

namespace fabseg {

/// Frozen Prompter logits (fg minus bg) for one tile.
RealRaster prompter_mask_logits(const PrompterConfig& config, const ParamStore& params, const ByteRaster& tile);

/// F_I for one tile as a [1, c, h, w] tensor.
Tensor image_embedding(const SamConfig& config, const ParamStore& params, const ByteRaster& tile);

/// Single-decoder logits for one tile given precomputed F_I and prompts.
RealRaster decode_tile(const SamConfig& config, const ParamStore& params, const Tensor& embedding,
                       const RealRaster* mask_prompt, const PointPromptSet* points, Head head);

/// Prompts for one tile: the mask prompt and, if possible, sampled points.
/// An empty point set is returned when no pixel is eligible.
PointPromptSet sample_points(const RealRaster& mask_prompt, const PromptGenConfig& config, std::uint64_t seed);

struct Models {
    PipelineConfig config;
    ParamStore prompter;
    ParamStore sam;  // image and prompt encoder plus the region decoder from the region run, boundary decoder from the boundary run
};

/// Combines the three stage checkpoints; configs come from their snapshots.
Models assemble_models(const Checkpoint& prompter, const Checkpoint& sam_region, const Checkpoint& sam_boundary);

struct TilePrediction {
    RealRaster prompter_logits;
    RealRaster region_logits;
    RealRaster boundary_logits;
    PointPromptSet points;
};

TilePrediction predict_tile(const Models& models, const ByteRaster& tile, const AblationFlags& flags, std::uint64_t seed);

struct ScenePrediction {
    ByteRaster prompter;  // binarized Prompter mask
    ByteRaster region;
    ByteRaster boundary;
    ByteRaster fused;     // region XOR boundary
    ParcelMap parcels;
};

/// Crops into model-sized tiles, predicts each, stitches the logits back to
/// the scene extent, then binarizes, fuses and extracts parcels.
ScenePrediction predict_scene(const Models& models, const ByteRaster& image, const AblationFlags& flags,
                              std::uint64_t seed);

/// Pixel accuracy of argmax Prompter logits against region labels.
double prompter_pixel_accuracy(const PrompterConfig& config, const ParamStore& params, const std::vector<Sample>& data);

/// Micro-averaged metrics of scene predictions against the samples' labels.
metrics::MetricsReport evaluate_samples(const Models& models, const std::vector<Sample>& data, const AblationFlags& flags,
                                        std::uint64_t seed);

}  // namespace fabseg
