#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "adtree/errors.hpp"
#include "adtree/grid.hpp"
#include "adtree/rng.hpp"

namespace adtree {

struct IntRange {
    int lo = 0;
    int hi = 0;  ///< inclusive

    int clamp(int v) const noexcept { return std::clamp(v, lo, hi); }
    bool contains(int v) const noexcept { return v >= lo && v <= hi; }
    int midpoint() const noexcept { return lo + (hi - lo) / 2; }
};

/// A (depth, top-k) pair.
struct DepthWidth {
    int depth = 1;
    int width = 1;
    friend bool operator==(const DepthWidth&, const DepthWidth&) = default;
};

enum class InitStrategy { horizontal, vertical, random, tokenflock };

inline const char* to_string(InitStrategy s) noexcept {
    switch (s) {
        case InitStrategy::horizontal: return "horizontal";
        case InitStrategy::vertical: return "vertical";
        case InitStrategy::random: return "random";
        case InitStrategy::tokenflock: return "tokenflock";
    }
    return "?";
}

inline std::optional<InitStrategy> parse_strategy(const std::string& s) {
    if (s == "horizontal") return InitStrategy::horizontal;
    if (s == "vertical") return InitStrategy::vertical;
    if (s == "random") return InitStrategy::random;
    if (s == "tokenflock") return InitStrategy::tokenflock;
    return std::nullopt;
}

struct FlockConfig {
    double radius = 1.5;  ///< Euclidean radius delta, in grid cells

    void validate() const { require(radius > 0.0 && std::isfinite(radius), "tokenflock radius must be > 0"); }
    friend bool operator==(const FlockConfig&, const FlockConfig&) = default;
};

/// Bisectional adaptation settings. Depth and width bounds are open
/// intervals; the usable inclusive ranges are [min+1, max-1].
struct AdaptationConfig {
    double beta = 1.0;
    int depth_step = 1;
    int width_step = 3;
    int depth_min = 0;
    int depth_max = 10;
    int width_min = 3;
    int width_max = 14;
    InitStrategy strategy = InitStrategy::horizontal;
    FlockConfig flock;
    /// Apply the width clamp even when the adapted depth is 1.
    bool clamp_width_at_depth_one = false;
    /// Parameters for a position with no decoded neighbor; defaults to the range midpoints.
    std::optional<DepthWidth> initial;

    IntRange depth_range() const noexcept { return {depth_min + 1, depth_max - 1}; }
    IntRange width_range() const noexcept { return {width_min + 1, width_max - 1}; }
    DepthWidth start() const noexcept {
        return initial.value_or(DepthWidth{depth_range().midpoint(), width_range().midpoint()});
    }

    void validate() const {
        require(std::isfinite(beta) && beta > 0.0, "beta must be a positive real");
        require(depth_step >= 0 && width_step >= 0, "adaptation steps must be >= 0");
        require(depth_min + 1 <= depth_max - 1, "empty depth range");
        require(width_min + 1 <= width_max - 1, "empty width range");
        require(depth_min >= 0, "depth lower bound must be >= 0");
        require(width_min >= 0, "width lower bound must be >= 0");
        if (strategy == InitStrategy::tokenflock) flock.validate();
        if (initial) {
            require(depth_range().contains(initial->depth), "initial depth outside the depth range");
            require(initial->width >= 1, "initial width must be >= 1");
        }
    }

    friend bool operator==(const AdaptationConfig&, const AdaptationConfig&) = default;
};

/// Positive status (alpha >= beta) deepens and narrows, negative
/// status shallows and widens; then clamp. The width clamp only applies when
/// the adapted depth exceeds 1 unless `clamp_width_at_depth_one` is set.
inline DepthWidth adapt(DepthWidth init, double alpha, const AdaptationConfig& cfg) {
    require(alpha >= 0.0 && alpha <= 1.0, "acceptance rate must lie in [0,1]");
    const bool positive = alpha >= cfg.beta;
    DepthWidth out;
    out.depth = positive ? init.depth + cfg.depth_step : init.depth - cfg.depth_step;
    out.width = positive ? init.width - cfg.width_step : init.width + cfg.width_step;
    out.depth = cfg.depth_range().clamp(out.depth);
    if (out.depth > 1 || cfg.clamp_width_at_depth_one) out.width = cfg.width_range().clamp(out.width);
    out.width = std::max(out.width, 1);
    return out;
}

/// What the controller stores for a decoded grid position: the parameters of
/// the tree that emitted it and that round's acceptance.
struct PositionRecord {
    DepthWidth params;
    int tau = 0;
    double alpha = 0.0;
    std::int32_t round_start = 0;
};

class ControllerState {
public:
    ControllerState(GridSpec grid, std::uint64_t random_seed)
        : grid_(grid), records_(static_cast<std::size_t>(grid.length())), rng_(random_seed) {}

    GridSpec grid() const noexcept { return grid_; }

    const PositionRecord* at(GridPos p) const {
        if (!grid_.contains(p)) return nullptr;
        const auto& r = records_[static_cast<std::size_t>(grid_.index(p))];
        return r ? &*r : nullptr;
    }

    /// Stores the outcome of a round that started at `start` and emitted
    /// `emitted` tokens; every emitted position gets the round's record.
    /// Returns alpha = tau / depth.
    double record_outcome(std::int32_t start, DepthWidth used, int tau, int emitted = 1) {
        require(used.depth >= 1, "record_outcome: depth must be >= 1");
        require(tau >= 0 && tau <= used.depth, "record_outcome: tau exceeds the tree depth");
        require(start >= 0 && start < grid_.length(), "record_outcome: position outside the grid");
        const double alpha = static_cast<double>(tau) / used.depth;
        const PositionRecord rec{used, tau, alpha, start};
        const std::int32_t end = std::min(grid_.length(), start + std::max(emitted, 1));
        for (std::int32_t t = start; t < end; ++t) records_[static_cast<std::size_t>(t)] = rec;
        last_alpha_ = alpha;
        return alpha;
    }

    std::optional<double> last_alpha() const noexcept { return last_alpha_; }
    Rng& random_stream() noexcept { return rng_; }

private:
    GridSpec grid_;
    std::vector<std::optional<PositionRecord>> records_;
    Rng rng_;
    std::optional<double> last_alpha_;
};

/// Initial (d̃, k̃) from every decoded position within `radius` of `pos`,
/// weighted by (radius - dy + 1) / radius and normalized to sum 1, rounded
/// half-up and clamped. Returns nullopt when no decoded position is in range.
inline std::optional<DepthWidth> flock_init(GridPos pos, const ControllerState& state, const FlockConfig& flock,
                                            const AdaptationConfig& cfg) {
    flock.validate();
    const GridSpec grid = state.grid();
    const double r = flock.radius;
    const int reach = static_cast<int>(std::floor(r));
    const std::int32_t here = grid.index(pos);
    // (r - dy + 1)/r normalized by its sum; the 1/r factor cancels, and
    // summing unscaled weights keeps exact .5 cases exact for r in {1, 1.5, 2, ...}.
    double weight_sum = 0.0, depth_acc = 0.0, width_acc = 0.0;
    bool any = false;
    for (int row = std::max(0, pos.row - reach); row <= pos.row; ++row) {
        for (int col = std::max(0, pos.col - reach); col <= std::min(grid.width - 1, pos.col + reach); ++col) {
            const GridPos q{row, col};
            if (grid.index(q) >= here) continue;
            const double dx = pos.col - col, dy = pos.row - row;
            if (std::sqrt(dx * dx + dy * dy) > r) continue;
            const PositionRecord* rec = state.at(q);
            if (!rec) continue;
            const double w = r - dy + 1.0;
            weight_sum += w;
            depth_acc += w * rec->params.depth;
            width_acc += w * rec->params.width;
            any = true;
        }
    }
    if (!any) return std::nullopt;
    depth_acc /= weight_sum;
    width_acc /= weight_sum;
    DepthWidth out;
    out.depth = cfg.depth_range().clamp(static_cast<int>(std::floor(depth_acc + 0.5)));
    out.width = cfg.width_range().clamp(static_cast<int>(std::floor(width_acc + 0.5)));
    return out;
}

struct InitResult {
    DepthWidth params;
    InitStrategy used;     ///< strategy that produced the value, after fallbacks
    bool fallback_start;   ///< no neighbor available; the configured start was used
};

/// Adjacent initialization with the documented fallbacks: horizontal at a
/// row start falls back to vertical, vertical in the first row to the start
/// value, and an empty TokenFlock neighborhood to horizontal.
inline InitResult init_params(InitStrategy strategy, GridPos pos, ControllerState& state,
                              const AdaptationConfig& cfg) {
    auto vertical = [&]() -> InitResult {
        if (const auto* above = state.at({pos.row - 1, pos.col}))
            return {above->params, InitStrategy::vertical, false};
        return {cfg.start(), InitStrategy::vertical, true};
    };
    auto horizontal = [&]() -> InitResult {
        if (const auto* left = state.at({pos.row, pos.col - 1}))
            return {left->params, InitStrategy::horizontal, false};
        return vertical();
    };
    switch (strategy) {
        case InitStrategy::horizontal: return horizontal();
        case InitStrategy::vertical: return vertical();
        case InitStrategy::random: {
            auto& rng = state.random_stream();
            const IntRange dr = cfg.depth_range(), wr = cfg.width_range();
            const int d = static_cast<int>(rng.uniform_int(dr.lo, dr.hi));
            const int k = static_cast<int>(rng.uniform_int(wr.lo, wr.hi));
            return {{d, k}, InitStrategy::random, false};
        }
        case InitStrategy::tokenflock:
            if (auto v = flock_init(pos, state, cfg.flock, cfg)) return {*v, InitStrategy::tokenflock, false};
            return horizontal();
    }
    return {cfg.start(), strategy, true};
}

/// One controller decision, logged per round.
struct ControllerDecision {
    GridPos pos;
    InitStrategy strategy = InitStrategy::horizontal;
    DepthWidth initial;
    std::optional<double> alpha;  ///< previous round's acceptance; absent on the first round
    DepthWidth adapted;
};

/// ADT-Tree per-run controller: init_params -> adapt, then record_outcome.
class AdtController {
public:
    AdtController(AdaptationConfig cfg, GridSpec grid, std::uint64_t random_seed)
        : cfg_(std::move(cfg)), state_(grid, random_seed) {
        cfg_.validate();
    }

    const AdaptationConfig& config() const noexcept { return cfg_; }
    const ControllerState& state() const noexcept { return state_; }

    ControllerDecision decide(GridPos pos) {
        ControllerDecision d;
        d.pos = pos;
        const InitResult init = init_params(cfg_.strategy, pos, state_, cfg_);
        d.strategy = init.used;
        d.initial = init.params;
        d.alpha = state_.last_alpha();
        d.adapted = d.alpha ? adapt(d.initial, *d.alpha, cfg_) : d.initial;
        return d;
    }

    double record_outcome(std::int32_t start, DepthWidth used, int tau, int emitted) {
        return state_.record_outcome(start, used, tau, emitted);
    }

private:
    AdaptationConfig cfg_;
    ControllerState state_;
};

}  // namespace adtree
