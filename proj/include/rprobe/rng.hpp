#pragma once

// Portable seeded randomness. std::mt19937_64 is fully specified by the
// standard, but the std distributions and std::shuffle are not, so the
// derived draws live here to keep outputs byte-identical across toolchains.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace rprobe {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Seed for a sub-stream identified by (seed, key, salt).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key, std::uint64_t salt = 0);

// Uniform integer in [0, n). n must be positive.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Uniform double in [0, 1).
double uniform_unit(Rng& rng);

double uniform_real(Rng& rng, double lo, double hi);

// Standard normal via Box-Muller.
double standard_normal(Rng& rng);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

}  // namespace rprobe
