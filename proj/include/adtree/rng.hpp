#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace adtree {

/// SplitMix64 finalizer. Used both as a hash and as a counter-mode generator,
/// so every random quantity is a pure function of its key.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) noexcept {
    return mix64(seed ^ (v + 0x632BE59BD9B4E019ULL + (seed << 6) + (seed >> 2)));
}

inline std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = 0x243F6A8885A308D3ULL;
    for (auto k : keys) h = hash_combine(h, k);
    return h;
}

/// Deterministic, platform-independent random stream.
///
/// Uniforms take the top 53 bits; normals use Box-Muller with no cached
/// second value so the stream position only depends on the call count.
class Rng {
public:
    explicit Rng(std::uint64_t key = 0) noexcept : state_(mix64(key)) {}

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double normal() noexcept {
        // 1 - u keeps the log argument in (0, 1].
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [lo, hi] (inclusive), by rejection to avoid modulo bias.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64());
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return lo + static_cast<std::int64_t>(x % span);
    }

private:
    std::uint64_t state_;
};

}  // namespace adtree
