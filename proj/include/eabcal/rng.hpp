#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace eabcal {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

// Counter-based substream: the generator for (master, keys...) depends only on
// its arguments, never on how many draws other streams consumed. Parallel
// evaluation order therefore cannot change results.
inline std::uint64_t mix_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = detail::splitmix64(master);
    for (auto k : keys) h = detail::splitmix64(h ^ detail::splitmix64(k + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng substream(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
    return Rng(mix_seed(master, keys));
}

}  // namespace eabcal
