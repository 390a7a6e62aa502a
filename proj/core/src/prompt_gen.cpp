#include "fabseg/prompt_gen.hpp"

#include <cmath>

#include "fabseg/errors.hpp"
#include "fabseg/random.hpp"

namespace fabseg {

namespace {

struct Candidate {
    int index;
    double weight;
};

std::vector<int> draw_without_replacement(std::vector<Candidate> pool, int count, Rng& rng) {
    std::vector<int> picked;
    while (static_cast<int>(picked.size()) < count && !pool.empty()) {
        double total = 0.0;
        for (const auto& c : pool) total += c.weight;
        const double target = rng.uniform() * total;
        std::size_t chosen = pool.size() - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            acc += pool[i].weight;
            if (target < acc) {
                chosen = i;
                break;
            }
        }
        picked.push_back(pool[chosen].index);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
    return picked;
}

}  // namespace

void PromptGenConfig::validate() const {
    require(n_fg >= 0 && n_bg >= 0, ErrorKind::InvalidArgument, "point counts must be non-negative");
    require(0.0 <= t_bg && t_bg < t_fg && t_fg <= 1.0, ErrorKind::InvalidArgument, "thresholds must satisfy 0 <= t_bg < t_fg <= 1");
}

RealRaster mask_prompt_from_logits(const Tensor& logits) {
    require(logits.rank() == 2, ErrorKind::ShapeError, "mask prompt expects [H, W] logits");
    return tensor_to_grid(logits, Domain::Logits);
}

RealRaster to_probability_map(const RealRaster& mp) {
    require(mp.channels() == 1, ErrorKind::ShapeError, "mask prompt must be single-channel");
    RealRaster p(mp.height(), mp.width(), 1, Domain::Probability);
    for (std::size_t i = 0; i < mp.size(); ++i) {
        const double v = mp.pixels()[i];
        require(std::isfinite(v), ErrorKind::NumericalError, "non-finite mask prompt logit");
        p.pixels()[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return p;
}

PointPromptSet generate_point_prompts(const RealRaster& probability, int n_fg, int n_bg, std::uint64_t seed, double t_fg,
                                      double t_bg) {
    PromptGenConfig{n_fg, n_bg, t_fg, t_bg}.validate();
    require(probability.channels() == 1, ErrorKind::ShapeError, "probability map must be single-channel");
    validate_domain(probability);

    std::vector<Candidate> fg, bg;
    const auto& px = probability.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (px[i] > t_fg) fg.push_back({static_cast<int>(i), px[i]});
        if (px[i] < t_bg) bg.push_back({static_cast<int>(i), 1.0 - px[i]});
    }
    require(!fg.empty() || !bg.empty(), ErrorKind::NoEligiblePixels,
            "no pixel is above the foreground threshold or below the background threshold");

    PointPromptSet out;
    out.requested_fg = n_fg;
    out.requested_bg = n_bg;
    out.shortfall_fg = std::max(0, n_fg - static_cast<int>(fg.size()));
    out.shortfall_bg = std::max(0, n_bg - static_cast<int>(bg.size()));

    Rng rng(seed);
    const int w = probability.width();
    for (int idx : draw_without_replacement(std::move(fg), n_fg, rng)) out.points.push_back({idx / w, idx % w, true});
    for (int idx : draw_without_replacement(std::move(bg), n_bg, rng)) out.points.push_back({idx / w, idx % w, false});
    return out;
}

}  // namespace fabseg
