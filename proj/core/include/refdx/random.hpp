#pragma once

#include <cstdint>
#include <random>

namespace refdx {

/// SplitMix64 finalizer; used to derive independent seeds from tuples.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed for the (seed, pass, item) substream.
constexpr std::uint64_t substream_key(std::uint64_t seed, std::uint64_t pass,
                                      std::uint64_t item) noexcept {
    return mix64(mix64(mix64(seed) ^ pass) ^ item);
}

/// Uniform double in [0, 1) from the top 53 bits; unlike
/// std::uniform_real_distribution this is identical across standard libraries.
inline double uniform01(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace refdx
