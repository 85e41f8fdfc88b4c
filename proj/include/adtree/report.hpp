#pragma once

#include <fmt/format.h>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adtree/controller.hpp"
#include "adtree/cost.hpp"
#include "adtree/errors.hpp"
#include "adtree/grid.hpp"
#include "adtree/model.hpp"

namespace adtree {

/// One drafting-verification round (or one vanilla step, with depth 0).
struct RoundRecord {
    int index = 0;
    std::int32_t start = 0;
    GridPos pos;
    std::string region = "unknown";
    int depth = 0;
    int width = 0;
    int tau = 0;
    int emitted = 1;
    long nodes = 0;
    long peak_live = 0;
    double cost = 0.0;
    double alpha = 0.0;
    std::vector<int> topk_locations;
};

struct ControllerLogEntry {
    int round = 0;
    ControllerDecision decision;
    int tau = 0;
};

struct RegionStats {
    long rounds = 0;
    double tau_mean = 0.0;
    double depth_mean = 0.0;
    friend bool operator==(const RegionStats&, const RegionStats&) = default;
};

struct RunReport {
    std::uint64_t seed = 0;
    GridSpec grid;
    long rounds = 0;
    long tokens = 0;
    double draft_cost = 0.0;
    double mask_cost = 0.0;
    double verify_cost = 0.0;
    double total_cost = 0.0;
    double speedup = 0.0;
    double tau_mean = 0.0;
    double depth_mean = 0.0;
    double tokens_per_round = 0.0;
    long peak_live_nodes = 0;
    std::map<int, long> accept_hist;
    std::map<int, long> topk_hist;
    std::vector<int> depth_matrix;   ///< H*W, depth of the round that emitted each token
    std::vector<double> top1_map;    ///< H*W, target top-1 mass at each position
    std::map<std::string, RegionStats> by_region;

    // Written to their own files, not to report.json.
    std::vector<RoundRecord> round_log;
    std::vector<ControllerLogEntry> controller_log;
};

/// Builds the aggregate report. `top1` holds the target top-1 mass per
/// emitted position and must cover the whole grid.
inline RunReport build_report(const std::vector<RoundRecord>& rounds, const CostLedger& ledger, GridSpec grid,
                              const std::vector<double>& top1, std::uint64_t seed) {
    if (rounds.empty()) throw PreconditionError("build_report: empty run");
    require(top1.size() == static_cast<std::size_t>(grid.length()), "build_report: top-1 map size mismatch");
    RunReport r;
    r.seed = seed;
    r.grid = grid;
    r.rounds = static_cast<long>(rounds.size());
    r.tokens = ledger.tokens_emitted();
    r.draft_cost = ledger.draft_cost();
    r.mask_cost = ledger.mask_cost();
    r.verify_cost = ledger.verify_cost();
    r.total_cost = ledger.total_cost();
    r.speedup = speedup(ledger);
    r.peak_live_nodes = ledger.peak_live_nodes();
    r.depth_matrix.assign(static_cast<std::size_t>(grid.length()), 0);
    r.top1_map = top1;

    long tau_sum = 0, depth_sum = 0, emitted_sum = 0;
    struct Sums {
        long rounds = 0, tau = 0, depth = 0;
    };
    std::map<std::string, Sums> region_sums;
    for (const auto& rd : rounds) {
        tau_sum += rd.tau;
        depth_sum += rd.depth;
        emitted_sum += rd.emitted;
        ++r.accept_hist[rd.tau];
        for (int loc : rd.topk_locations) ++r.topk_hist[loc];
        for (int i = 0; i < rd.emitted; ++i) r.depth_matrix.at(static_cast<std::size_t>(rd.start + i)) = rd.depth;
        auto& sums = region_sums[rd.region];
        ++sums.rounds;
        sums.tau += rd.tau;
        sums.depth += rd.depth;
    }
    for (const auto& [name, s] : region_sums) {
        const auto k = static_cast<double>(s.rounds);
        r.by_region[name] = {s.rounds, static_cast<double>(s.tau) / k, static_cast<double>(s.depth) / k};
    }
    const auto n = static_cast<double>(rounds.size());
    r.tau_mean = static_cast<double>(tau_sum) / n;
    r.depth_mean = static_cast<double>(depth_sum) / n;
    r.tokens_per_round = static_cast<double>(emitted_sum) / n;
    r.round_log = rounds;
    return r;
}

namespace detail {

inline nlohmann::json hist_to_json(const std::map<int, long>& h) {
    auto arr = nlohmann::json::array();
    for (const auto& [k, v] : h) arr.push_back({k, v});
    return arr;
}

inline std::map<int, long> hist_from_json(const nlohmann::json& j) {
    std::map<int, long> h;
    for (const auto& e : j) h[e.at(0).get<int>()] = e.at(1).get<long>();
    return h;
}

template <typename T>
nlohmann::json grid_to_json(const std::vector<T>& v, GridSpec g) {
    auto rows = nlohmann::json::array();
    for (int i = 0; i < g.height; ++i) {
        auto row = nlohmann::json::array();
        for (int j = 0; j < g.width; ++j) row.push_back(v[static_cast<std::size_t>(i * g.width + j)]);
        rows.push_back(std::move(row));
    }
    return rows;
}

template <typename T>
std::vector<T> grid_from_json(const nlohmann::json& rows, GridSpec g) {
    std::vector<T> v;
    v.reserve(static_cast<std::size_t>(g.length()));
    if (rows.size() != static_cast<std::size_t>(g.height)) throw ConfigError("report grid has wrong row count");
    for (const auto& row : rows) {
        if (row.size() != static_cast<std::size_t>(g.width)) throw ConfigError("report grid has wrong column count");
        for (const auto& x : row) v.push_back(x.get<T>());
    }
    return v;
}

}  // namespace detail

/// report.json body: metrics, histograms, matrices. No method or config echo,
/// so runs that behave identically serialize identically.
inline nlohmann::ordered_json report_to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["seed"] = r.seed;
    j["grid"] = {{"height", r.grid.height}, {"width", r.grid.width}};
    j["rounds"] = r.rounds;
    j["tokens"] = r.tokens;
    j["speedup"] = r.speedup;
    j["tau_mean"] = r.tau_mean;
    j["depth_mean"] = r.depth_mean;
    j["tokens_per_round"] = r.tokens_per_round;
    j["cost"] = {{"draft", r.draft_cost}, {"mask", r.mask_cost}, {"verify", r.verify_cost}, {"total", r.total_cost}};
    j["peak_live_nodes"] = r.peak_live_nodes;
    nlohmann::ordered_json regions = nlohmann::ordered_json::object();
    for (const auto& [name, st] : r.by_region)
        regions[name] = {{"rounds", st.rounds}, {"tau_mean", st.tau_mean}, {"depth_mean", st.depth_mean}};
    j["by_region"] = regions;
    j["accept_hist"] = detail::hist_to_json(r.accept_hist);
    j["topk_hist"] = detail::hist_to_json(r.topk_hist);
    j["depth_matrix"] = detail::grid_to_json(r.depth_matrix, r.grid);
    j["top1_map"] = detail::grid_to_json(r.top1_map, r.grid);
    return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
    try {
        RunReport r;
        r.seed = j.at("seed").get<std::uint64_t>();
        r.grid = {j.at("grid").at("height").get<int>(), j.at("grid").at("width").get<int>()};
        r.rounds = j.at("rounds").get<long>();
        r.tokens = j.at("tokens").get<long>();
        r.speedup = j.at("speedup").get<double>();
        r.tau_mean = j.at("tau_mean").get<double>();
        r.depth_mean = j.at("depth_mean").get<double>();
        r.tokens_per_round = j.at("tokens_per_round").get<double>();
        r.draft_cost = j.at("cost").at("draft").get<double>();
        r.mask_cost = j.at("cost").at("mask").get<double>();
        r.verify_cost = j.at("cost").at("verify").get<double>();
        r.total_cost = j.at("cost").at("total").get<double>();
        r.peak_live_nodes = j.at("peak_live_nodes").get<long>();
        for (const auto& [name, st] : j.at("by_region").items())
            r.by_region[name] = {st.at("rounds").get<long>(), st.at("tau_mean").get<double>(),
                                 st.at("depth_mean").get<double>()};
        r.accept_hist = detail::hist_from_json(j.at("accept_hist"));
        r.topk_hist = detail::hist_from_json(j.at("topk_hist"));
        r.depth_matrix = detail::grid_from_json<int>(j.at("depth_matrix"), r.grid);
        r.top1_map = detail::grid_from_json<double>(j.at("top1_map"), r.grid);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
}

enum class PlotKind { accept_hist, topk_hist, depth_matrix, top1_map };

inline std::optional<PlotKind> parse_plot_kind(const std::string& s) {
    if (s == "accept_hist") return PlotKind::accept_hist;
    if (s == "topk_hist") return PlotKind::topk_hist;
    if (s == "depth_matrix") return PlotKind::depth_matrix;
    if (s == "top1_map") return PlotKind::top1_map;
    return std::nullopt;
}

inline const char* to_string(PlotKind k) noexcept {
    switch (k) {
        case PlotKind::accept_hist: return "accept_hist";
        case PlotKind::topk_hist: return "topk_hist";
        case PlotKind::depth_matrix: return "depth_matrix";
        case PlotKind::top1_map: return "top1_map";
    }
    return "?";
}

/// Plot-ready CSV. Histograms are headerless `key,count` lines; matrices are
/// H lines of W comma-separated values.
inline std::string plot_csv(const RunReport& r, PlotKind kind) {
    std::string out;
    auto hist = [&](const std::map<int, long>& h) {
        for (const auto& [k, v] : h) out += fmt::format("{},{}\n", k, v);
    };
    auto matrix = [&](const auto& v) {
        for (int i = 0; i < r.grid.height; ++i) {
            for (int j = 0; j < r.grid.width; ++j) {
                if (j) out += ',';
                out += fmt::format("{}", v[static_cast<std::size_t>(i * r.grid.width + j)]);
            }
            out += '\n';
        }
    };
    switch (kind) {
        case PlotKind::accept_hist: hist(r.accept_hist); break;
        case PlotKind::topk_hist: hist(r.topk_hist); break;
        case PlotKind::depth_matrix: matrix(r.depth_matrix); break;
        case PlotKind::top1_map: matrix(r.top1_map); break;
    }
    return out;
}

inline std::string rounds_csv(const std::vector<RoundRecord>& rounds) {
    std::string out = "round,start,row,col,region,depth,width,tau,emitted,nodes,peak_live,cost,alpha,topk_locations\n";
    for (const auto& r : rounds) {
        std::string locs;
        for (std::size_t i = 0; i < r.topk_locations.size(); ++i)
            locs += (i ? ";" : "") + std::to_string(r.topk_locations[i]);
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.index, r.start, r.pos.row, r.pos.col,
                           r.region, r.depth, r.width, r.tau, r.emitted, r.nodes, r.peak_live, r.cost, r.alpha, locs);
    }
    return out;
}

inline std::string controller_log_csv(const std::vector<ControllerLogEntry>& log) {
    std::string out = "round,row,col,strategy,init_depth,init_width,alpha,depth,width,tau\n";
    for (const auto& e : log) {
        const auto& d = e.decision;
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", e.round, d.pos.row, d.pos.col, to_string(d.strategy),
                           d.initial.depth, d.initial.width, d.alpha ? fmt::format("{}", *d.alpha) : std::string(),
                           d.adapted.depth, d.adapted.width, e.tau);
    }
    return out;
}

}  // namespace adtree
