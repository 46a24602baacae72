#ifndef GEKF_RNG_HPP
#define GEKF_RNG_HPP

#include <cstdint>
#include <random>

namespace gekf {

// All randomness in the library flows through std::mt19937_64, whose
// algorithm is pinned by the C++ standard, so identical seeds reproduce
// identical streams on every platform.
using Rng = std::mt19937_64;

namespace detail {

// SplitMix64 finalizer (Steele, Lea & Flood 2014). Used only to derive
// decorrelated child seeds from (base_seed, stream_index).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

} // namespace detail

/// Seed for independent stream `index` under a user-facing base seed.
inline std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index) {
    return detail::splitmix64(base_seed + 0x9E3779B97F4A7C15ull * (index + 1));
}

/// Uniform draw in [0,1) with 53-bit resolution.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace gekf

#endif
