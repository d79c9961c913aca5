#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ma3e {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds from a root seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline Rng split_rng(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) {
    return Rng(mix_seed(mix_seed(mix_seed(root) ^ a) ^ b));
}

// Uniform in [0, 1) with 53 random bits. Defined here rather than through
// std::uniform_real_distribution so streams are identical across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Uniform integer in [0, n), rejection sampled.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Standard normal via Box-Muller; one draw per call, no cached state.
inline double normal(Rng& rng) {
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace ma3e
