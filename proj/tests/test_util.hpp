#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fabseg/config.hpp"
#include "fabseg/data_pipeline.hpp"
#include "fabseg/errors.hpp"
#include "fabseg/random.hpp"
#include "fabseg/raster.hpp"

namespace fabseg::testutil {

/// True when `fn` throws a fabseg::Error of exactly `kind`.
inline bool throws_kind(ErrorKind kind, const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind() == kind;
    }
    return false;
}

inline ByteRaster random_mask(Rng& rng, int h, int w, double p = 0.5) {
    ByteRaster m(h, w, 1, Domain::Binary);
    for (auto& v : m.pixels()) v = rng.uniform() < p ? 1 : 0;
    return m;
}

inline std::vector<Sample> synthetic_samples(int n, int size, std::uint64_t seed = 1, int parcels = 4) {
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) {
        auto s = generate_synthetic_scene(derive_seed(seed, static_cast<std::uint64_t>(i)), parcels, size);
        out.push_back({"s" + std::to_string(i), s.image, s.region_mask, s.boundary_mask});
    }
    return out;
}

inline std::string toy_config_path() { return std::string(FABSEG_SOURCE_DIR) + "/configs/toy.ini"; }

}  // namespace fabseg::testutil
