#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "adtree/errors.hpp"

namespace adtree {

/// Abstract cost units; nothing here is wall-clock time.
struct CostModel {
    double draft_layer = 0.15;     ///< T_S, one draft forward per tree layer
    double mask_per_token = 0.002; ///< T_N, tree-mask build per draft token
    double verify = 1.0;           ///< T_V, one parallel target pass per round
    double base = 1.0;             ///< T_base, one vanilla target step

    void validate() const {
        for (double c : {draft_layer, mask_per_token, verify, base})
            require(std::isfinite(c) && c >= 0.0, "cost model entries must be finite and >= 0");
        require(base > 0.0, "vanilla step cost must be > 0");
    }

    friend bool operator==(const CostModel&, const CostModel&) = default;
};

/// Drafting time cost C_T = T_S * d + T_N * N (verification billed separately).
inline double round_time_cost(int depth, long n_tokens, const CostModel& cm) {
    require(depth >= 1, "round_time_cost: depth must be >= 1");
    require(n_tokens >= 1, "round_time_cost: token count must be >= 1");
    return cm.draft_layer * depth + cm.mask_per_token * static_cast<double>(n_tokens);
}

/// Peak node count of a fully expanded tree, C_S = k^2 (d - 1) + k.
inline long peak_nodes(int depth, int width) {
    require(depth >= 1 && width >= 1, "peak_nodes: depth and width must be >= 1");
    const long k = width;
    return k * k * (depth - 1) + k;
}

struct LedgerEntry {
    double draft = 0.0;
    double mask = 0.0;
    double verify = 0.0;
    int emitted = 0;
    long live_nodes = 0;

    double total() const noexcept { return draft + mask + verify; }
};

/// Per-run accounting. Totals are kept as integer layer/node/pass counts
/// times the unit costs, so a vanilla run's SR is exactly 1 whenever
/// T_base == T_V.
class CostLedger {
public:
    explicit CostLedger(CostModel cm = {}) : cm_(cm) { cm_.validate(); }

    /// A draft-then-verify round over a tree with `depth` layers and `nodes` tokens.
    void add_round(int depth, long nodes, long peak_live, int emitted) {
        require(depth >= 1, "a drafting round needs depth >= 1");
        require(emitted >= 1, "a round must emit at least one token");
        LedgerEntry e;
        e.draft = cm_.draft_layer * depth;
        e.mask = cm_.mask_per_token * static_cast<double>(nodes);
        e.verify = cm_.verify;
        e.emitted = emitted;
        e.live_nodes = peak_live;
        layers_ += depth;
        nodes_ += nodes;
        push(e);
    }

    /// One plain target step, no drafting.
    void add_vanilla_step() {
        LedgerEntry e;
        e.verify = cm_.verify;
        e.emitted = 1;
        push(e);
    }

    const CostModel& cost_model() const noexcept { return cm_; }
    const std::vector<LedgerEntry>& entries() const noexcept { return entries_; }
    std::size_t rounds() const noexcept { return entries_.size(); }
    long tokens_emitted() const noexcept { return tokens_; }
    double draft_cost() const noexcept { return cm_.draft_layer * static_cast<double>(layers_); }
    double mask_cost() const noexcept { return cm_.mask_per_token * static_cast<double>(nodes_); }
    double verify_cost() const noexcept { return cm_.verify * static_cast<double>(entries_.size()); }
    double total_cost() const noexcept { return draft_cost() + mask_cost() + verify_cost(); }
    long peak_live_nodes() const noexcept { return peak_live_; }

private:
    void push(const LedgerEntry& e) {
        entries_.push_back(e);
        tokens_ += e.emitted;
        peak_live_ = std::max(peak_live_, e.live_nodes);
    }

    CostModel cm_;
    std::vector<LedgerEntry> entries_;
    long layers_ = 0;
    long nodes_ = 0;
    long tokens_ = 0;
    long peak_live_ = 0;
};

/// SR = tokens * T_base / accumulated cost.
inline double speedup(long tokens_emitted, double total_cost, const CostModel& cm) {
    require(tokens_emitted >= 1, "speedup: no tokens emitted");
    if (!(total_cost > 0.0)) throw PreconditionError("speedup: zero total cost");
    return static_cast<double>(tokens_emitted) * cm.base / total_cost;
}

inline double speedup(const CostLedger& ledger) {
    return speedup(ledger.tokens_emitted(), ledger.total_cost(), ledger.cost_model());
}

}  // namespace adtree
