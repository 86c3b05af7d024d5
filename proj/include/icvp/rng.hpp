#pragma once

#include <cstdint>
#include <random>

namespace icvp {

/// Thin wrapper around mt19937 with pinned float conversions so that a seed
/// reproduces the exact same draws everywhere.
struct Rng {
    explicit Rng(std::uint32_t seed) : gen(seed) {}

    std::uint32_t next_u32() { return gen(); }

    /// Uniform in [0,1) with 24 bits of precision.
    float uniform() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo,hi] inclusive.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u32() % static_cast<std::uint32_t>(hi - lo + 1));
    }

    bool bernoulli(float p) { return uniform() < p; }

    std::mt19937 gen;
};

/// splitmix32 finalizer; derives independent sub-stream seeds.
inline std::uint32_t mix_seed(std::uint32_t base, std::uint32_t stream) {
    std::uint32_t z = base + 0x9e3779b9u * (stream + 1);
    z ^= z >> 16;
    z *= 0x85ebca6bu;
    z ^= z >> 13;
    z *= 0xc2b2ae35u;
    z ^= z >> 16;
    return z;
}

} // namespace icvp
