#pragma once

#include <cstdint>
#include <string>

#include "adtree/errors.hpp"

namespace adtree {

using Token = std::int32_t;
using Condition = std::uint64_t;

/// Codebook of K token ids in [0, K).
struct VocabSpec {
    std::int32_t size = 0;

    bool contains(Token t) const noexcept { return t >= 0 && t < size; }
    void validate() const { require(size >= 2, "vocab size must be >= 2"); }
    friend bool operator==(const VocabSpec&, const VocabSpec&) = default;
};

struct GridPos {
    std::int32_t row = 0;
    std::int32_t col = 0;
    friend bool operator==(const GridPos&, const GridPos&) = default;
};

/// H x W token grid in raster order: t = row * W + col.
struct GridSpec {
    std::int32_t height = 0;
    std::int32_t width = 0;

    std::int32_t length() const noexcept { return height * width; }
    GridPos pos(std::int32_t t) const noexcept { return {t / width, t % width}; }
    std::int32_t index(GridPos p) const noexcept { return p.row * width + p.col; }
    bool contains(GridPos p) const noexcept {
        return p.row >= 0 && p.row < height && p.col >= 0 && p.col < width;
    }
    void validate() const { require(height >= 1 && width >= 1, "grid dimensions must be positive"); }
    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

enum class Temperature { greedy = 0, sample = 1 };

inline Temperature temperature_from_int(int t) {
    if (t == 0) return Temperature::greedy;
    if (t == 1) return Temperature::sample;
    throw PreconditionError("temperature must be 0 or 1, got " + std::to_string(t));
}

inline int to_int(Temperature t) noexcept { return t == Temperature::greedy ? 0 : 1; }

}  // namespace adtree
