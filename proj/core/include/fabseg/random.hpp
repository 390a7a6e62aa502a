#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace fabseg {

/// Seeded generator with platform-independent derived draws. The standard
/// distributions are implementation-defined, so uniform/normal/bounded draws
/// are computed here directly from the mt19937_64 stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller.
    double normal();

    std::string state() const;
    void set_state(const std::string& state);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Mixes several integers into one seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace fabseg
