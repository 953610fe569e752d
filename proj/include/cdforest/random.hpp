#pragma once

#include <cstdint>
#include <random>

namespace cdforest {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Independent generator for (seed, stream, index). Used so that tree growth
/// and Monte Carlo replications do not depend on scheduling order.
inline Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    std::uint64_t h = detail::splitmix64(seed);
    h = detail::splitmix64(h ^ (stream * 0xd1b54a32d192ed03ULL));
    h = detail::splitmix64(h ^ (index * 0x8cb92ba72f3d8dd7ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(stream)};
    return Rng(seq);
}

/// Uniform draw on [0, 1).
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace cdforest
