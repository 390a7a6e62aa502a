#pragma once

#include <cstdint>
#include <vector>

#include "fabseg/raster.hpp"

namespace fabseg {

struct PointPrompt {
    int row = 0;
    int col = 0;
    bool foreground = true;
    bool operator==(const PointPrompt&) const = default;
};

struct PointPromptSet {
    std::vector<PointPrompt> points;
    int requested_fg = 0;
    int requested_bg = 0;
    int shortfall_fg = 0;  // requested minus available candidates, when positive
    int shortfall_bg = 0;

    std::size_t size() const { return points.size(); }
    bool operator==(const PointPromptSet&) const = default;
};

struct PromptGenConfig {
    int n_fg = 4;
    int n_bg = 4;
    double t_fg = 0.7;
    double t_bg = 0.3;

    void validate() const;
};

/// Single-channel Logits raster from an [H, W] tensor of fg-minus-bg logits.
RealRaster mask_prompt_from_logits(const Tensor& logits);

/// Elementwise sigmoid; NumericalError on non-finite logits.
RealRaster to_probability_map(const RealRaster& mp);

/// Weighted sampling without replacement: foreground candidates (P > t_fg)
/// are drawn with weight P, background candidates (P < t_bg) with weight
/// 1 - P. Foreground draws come first from one seeded stream.
PointPromptSet generate_point_prompts(const RealRaster& probability, int n_fg, int n_bg, std::uint64_t seed,
                                      double t_fg = 0.7, double t_bg = 0.3);

inline PointPromptSet generate_point_prompts(const RealRaster& probability, const PromptGenConfig& c, std::uint64_t seed) {
    return generate_point_prompts(probability, c.n_fg, c.n_bg, seed, c.t_fg, c.t_bg);
}

}  // namespace fabseg
