#pragma once

#include <cstdint>
#include <random>

namespace dxp {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds from a root seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) noexcept {
    return mix64(mix64(root) ^ (stream * 0x632be59bd9b4e019ULL + 1));
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline bool coin(Rng& rng, double p = 0.5) {
    return uniform01(rng) < p;
}

}  // namespace dxp
