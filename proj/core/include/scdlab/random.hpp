#pragma once

#include <cstdint>
#include <random>

namespace scdlab {

using Rng = std::mt19937_64;

// std::*_distribution output is implementation-defined; these transforms are
// fixed so that seeded artifacts are byte-identical across standard libraries.

// Uniform integer in [0, n). n must be > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Uniform real in [0, 1) with 53 bits of precision.
double uniform01(Rng& rng);

double uniform_real(Rng& rng, double lo, double hi);

// Box-Muller; draws two uniforms per call, no cached second value.
double standard_normal(Rng& rng);

bool bernoulli(Rng& rng, double p);

// Derives an independent stream seed from a master seed and a tag (splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag);

template <typename It>
void shuffle(It first, It last, Rng& rng) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        auto j = uniform_index(rng, i);
        using std::swap;
        swap(first[i - 1], first[j]);
    }
}

} // namespace scdlab
