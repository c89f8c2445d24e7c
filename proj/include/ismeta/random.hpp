#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ismeta {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based seed split: the seed of stream (name, index) depends only on
/// the parent seed and that pair, so adding a stream never shifts another.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view name, std::uint64_t index = 0) noexcept {
    return mix64(mix64(parent ^ hash_name(name)) + mix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace ismeta
