#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "adtree/config.hpp"
#include "adtree/controller.hpp"
#include "adtree/cost.hpp"
#include "adtree/draft_tree.hpp"
#include "adtree/model.hpp"
#include "adtree/neighborhood.hpp"
#include "adtree/report.hpp"
#include "adtree/trace.hpp"
#include "adtree/verifier.hpp"

namespace adtree {

inline constexpr const char* kOutputRootEnv = "ADTREE_OUTPUT_ROOT";

inline TextureGridSpec texture_spec(const TextureModelConfig& m, double cfg_scale) {
    TextureGridSpec s;
    s.grid = {m.height, m.width};
    s.vocab = {m.vocab};
    try {
        s.grid.validate();
    } catch (const PreconditionError& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    if (!m.region_rows.empty()) {
        if (m.region_rows.size() != static_cast<std::size_t>(m.height))
            throw ConfigError("model.region_rows: expected one row per grid row");
        for (const auto& row : m.region_rows) {
            if (row.size() != static_cast<std::size_t>(m.width))
                throw ConfigError("model.region_rows: row length must equal the grid width");
            for (char c : row) {
                if (c == 'S' || c == 's') s.regions.push_back(Region::simple);
                else if (c == 'C' || c == 'c') s.regions.push_back(Region::complex);
                else throw ConfigError("model.region_rows: cells must be 'S' or 'C'");
            }
        }
    } else {
        const auto layout = parse_layout(m.layout);
        if (!layout) throw ConfigError("model.layout: unknown layout '" + m.layout + "'");
        s.regions = make_region_map(s.grid, *layout);
    }
    s.simple_concentration = m.simple_concentration;
    s.complex_concentration = m.complex_concentration;
    s.simple_top1_cap = m.simple_top1_cap;
    s.complex_top1_floor = m.complex_top1_floor;
    s.divergence = m.divergence;
    s.simple_noise = m.simple_noise;
    s.complex_noise = m.complex_noise;
    s.context_window = m.context_window;
    s.guidance_scale = cfg_scale;
    s.seed = m.seed;
    return s;
}

inline ModelPair build_model(const ScenarioConfig& cfg) {
    if (const auto* t = std::get_if<TextureModelConfig>(&cfg.model)) {
        TextureGridSpec spec = texture_spec(*t, cfg.cfg_scale);
        try {
            return ModelPair(std::make_shared<TextureGridModel>(std::move(spec)), cfg.cfg_scale);
        } catch (const PreconditionError& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
    }
    const auto& tr = std::get<TraceModelConfig>(cfg.model);
    if (!std::filesystem::exists(tr.path)) throw ConfigError("model.path: trace file not found: " + tr.path);
    auto trace = read_trace_file(tr.path);
    if (tr.vocab && *tr.vocab != trace.header.vocab.size)
        throw ModelError(fmt::format("trace vocabulary {} does not match configured vocabulary {}",
                                     trace.header.vocab.size, *tr.vocab));
    return ModelPair(std::make_shared<TraceLogitSource>(std::move(trace)), cfg.cfg_scale);
}

/// Condition used for one seed's run; every seed decodes a different sample.
inline Condition run_condition(Condition base, std::uint64_t seed) { return hash_keys({base, seed, 0xC0DEULL}); }

inline std::uint64_t decode_stream_seed(std::uint64_t seed) { return hash_keys({seed, 0xDEC0DEULL}); }
inline std::uint64_t controller_stream_seed(std::uint64_t seed) { return hash_keys({seed, 0xADA97ULL}); }

struct SeedRun {
    RunReport report;
    std::vector<Token> sequence;
};

namespace detail {

inline std::string region_label(const std::optional<std::vector<Region>>& regions, std::int32_t t) {
    if (!regions) return "unknown";
    return to_string((*regions)[static_cast<std::size_t>(t)]);
}

inline std::unique_ptr<NeighborhoodProvider> make_neighborhood(const ScenarioConfig& cfg, const AdtRelaxedMethod& m,
                                                               VocabSpec vocab) {
    if (m.neighborhood == NeighborhoodKind::none) return std::make_unique<EmptyNeighborhood>();
    std::uint64_t seed = 0;
    if (const auto* t = std::get_if<TextureModelConfig>(&cfg.model)) seed = t->seed;
    return std::make_unique<EmbeddingNeighborhood>(vocab, m.embedding_dim, std::min(m.neighbors, vocab.size - 1),
                                                   seed);
}

}  // namespace detail

/// Decodes the whole grid for one seed with the configured method.
inline SeedRun run_decoding(const ModelPair& model, const ScenarioConfig& cfg, std::uint64_t seed) {
    const GridSpec grid = model.grid();
    const auto T = static_cast<std::size_t>(grid.length());
    const Condition cond = run_condition(cfg.condition, seed);
    const auto regions = model.source().regions();
    Rng rng(decode_stream_seed(seed));
    CostLedger ledger(cfg.cost);
    std::vector<RoundRecord> rounds;
    std::vector<ControllerLogEntry> clog;
    std::vector<double> top1(T, 0.0);
    std::vector<Token> seq;
    seq.reserve(T);

    std::optional<AdtController> controller;
    std::optional<StaticMethod> fixed;
    std::unique_ptr<NeighborhoodProvider> neighborhood;
    VerifyOptions vopt;
    vopt.temperature = cfg.temperature;
    const bool vanilla = std::holds_alternative<VanillaMethod>(cfg.method);
    if (const auto* s = std::get_if<StaticMethod>(&cfg.method)) fixed = *s;
    if (const auto* a = std::get_if<AdtMethod>(&cfg.method))
        controller.emplace(a->adaptation, grid, controller_stream_seed(seed));
    if (const auto* a = std::get_if<AdtRelaxedMethod>(&cfg.method)) {
        controller.emplace(a->adaptation, grid, controller_stream_seed(seed));
        neighborhood = detail::make_neighborhood(cfg, *a, model.vocab());
        vopt.relaxed = RelaxedRule{neighborhood.get(), a->delta, a->neighbors};
    }
    const GrowOptions gopt{cfg.temperature == Temperature::greedy ? ExpansionMode::top_k : ExpansionMode::sample_k};

    while (seq.size() < T) {
        const auto start = static_cast<std::int32_t>(seq.size());
        RoundRecord rd;
        rd.index = static_cast<int>(rounds.size());
        rd.start = start;
        rd.pos = grid.pos(start);
        rd.region = detail::region_label(regions, start);

        if (vanilla) {
            const Distribution p = model.target(seq, cond);
            top1[seq.size()] = p.max();
            seq.push_back(sample(p, rng, cfg.temperature));
            ledger.add_vanilla_step();
            rd.cost = ledger.entries().back().total();
            rounds.push_back(std::move(rd));
            continue;
        }

        TreeParams params;
        std::optional<ControllerDecision> decision;
        if (fixed) {
            params = {fixed->depth, fixed->width, fixed->rerank};
        } else {
            decision = controller->decide(rd.pos);
            params = {decision->adapted.depth, decision->adapted.width, std::nullopt};
        }
        params.depth = std::min(params.depth, static_cast<int>(T - seq.size()));

        DraftTree tree = grow_tree(model, seq, cond, params, gopt, &rng);
        const long peak_live = static_cast<long>(tree.peak_live_nodes);
        if (params.rerank_budget) tree = prune(tree, rerank(tree, *params.rerank_budget));

        const VerifyOutcome out = verify(tree, model, rng, vopt);
        std::vector<Token> emitted = out.emitted();
        emitted.resize(std::min(emitted.size(), T - seq.size()));
        for (std::size_t i = 0; i < emitted.size(); ++i) top1[seq.size() + i] = out.target_top1.at(i);
        seq.insert(seq.end(), emitted.begin(), emitted.end());

        const int depth = tree.depth();
        const int n_emitted = static_cast<int>(emitted.size());
        ledger.add_round(depth, static_cast<long>(tree.size()), peak_live, n_emitted);
        rd.depth = depth;
        rd.width = params.width;
        rd.tau = out.tau;
        rd.emitted = n_emitted;
        rd.nodes = static_cast<long>(tree.size());
        rd.peak_live = peak_live;
        rd.cost = ledger.entries().back().total();
        rd.alpha = static_cast<double>(out.tau) / depth;
        rd.topk_locations = out.topk_locations;
        if (controller) {
            controller->record_outcome(start, {depth, params.width}, out.tau, n_emitted);
            clog.push_back({rd.index, *decision, out.tau});
        }
        rounds.push_back(std::move(rd));
    }

    SeedRun run;
    run.report = build_report(rounds, ledger, grid, top1, seed);
    run.report.controller_log = std::move(clog);
    run.sequence = std::move(seq);
    return run;
}

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;  ///< sample standard deviation; 0 for a single seed
};

inline MetricSummary summarize(const std::vector<double>& xs) {
    require(!xs.empty(), "summarize: no values");
    MetricSummary s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

struct MethodResult {
    std::string name;
    std::string method;
    nlohmann::json base;
    std::vector<RunReport> reports;
    MetricSummary speedup, tau, depth;
};

inline void aggregate(MethodResult& r) {
    std::vector<double> sr, tau, depth;
    for (const auto& rep : r.reports) {
        sr.push_back(rep.speedup);
        tau.push_back(rep.tau_mean);
        depth.push_back(rep.depth_mean);
    }
    r.speedup = summarize(sr);
    r.tau = summarize(tau);
    r.depth = summarize(depth);
}

inline nlohmann::ordered_json result_to_json(const MethodResult& r) {
    auto metric = [](const MetricSummary& m) { return nlohmann::ordered_json{{"mean", m.mean}, {"std", m.stddev}}; };
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["method"] = r.method;
    j["base"] = r.base;
    auto per_seed = nlohmann::ordered_json::array();
    for (const auto& rep : r.reports)
        per_seed.push_back({{"seed", rep.seed},
                            {"speedup", rep.speedup},
                            {"tau_mean", rep.tau_mean},
                            {"depth_mean", rep.depth_mean}});
    j["per_seed"] = per_seed;
    j["aggregate"] = {{"speedup", metric(r.speedup)}, {"tau_mean", metric(r.tau)}, {"depth_mean", metric(r.depth)}};
    return j;
}

/// Reads result.json; per-seed reports carry only the summary metrics.
inline MethodResult result_from_json(const nlohmann::json& j) {
    try {
        MethodResult r;
        r.name = j.at("name").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.base = j.at("base");
        for (const auto& s : j.at("per_seed")) {
            RunReport rep;
            rep.seed = s.at("seed").get<std::uint64_t>();
            rep.speedup = s.at("speedup").get<double>();
            rep.tau_mean = s.at("tau_mean").get<double>();
            rep.depth_mean = s.at("depth_mean").get<double>();
            r.reports.push_back(std::move(rep));
        }
        if (r.reports.empty()) throw ConfigError("result has no seeds");
        aggregate(r);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed result: ") + e.what());
    }
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

/// Explicit override, else the config's output_dir, else runs/<name>.
/// Relative results are placed under $ADTREE_OUTPUT_ROOT when it is set.
inline std::filesystem::path resolve_output_dir(const ScenarioConfig& cfg,
                                                const std::optional<std::filesystem::path>& override_dir = {}) {
    if (override_dir) return *override_dir;
    std::filesystem::path p = cfg.output_dir.empty()
                                  ? std::filesystem::path("runs") / (cfg.name.empty() ? "scenario" : cfg.name)
                                  : std::filesystem::path(cfg.output_dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv(kOutputRootEnv); root && *root) p = std::filesystem::path(root) / p;
    }
    return p;
}

inline void write_seed_outputs(const std::filesystem::path& dir, const RunReport& rep) {
    write_text_file(dir / "report.json", report_to_json(rep).dump(2) + "\n");
    write_text_file(dir / "rounds.csv", rounds_csv(rep.round_log));
    write_text_file(dir / "controller_log.csv", controller_log_csv(rep.controller_log));
    for (PlotKind k : {PlotKind::accept_hist, PlotKind::topk_hist, PlotKind::depth_matrix, PlotKind::top1_map})
        write_text_file(dir / (std::string(to_string(k)) + ".csv"), plot_csv(rep, k));
}

/// Runs every seed and, when `out_dir` is given, writes config.json,
/// result.json and seed_<s>/ report files. Seeds may run on `jobs` threads.
inline MethodResult run_scenario(const ScenarioConfig& cfg, const std::optional<std::filesystem::path>& out_dir = {},
                                 int jobs = 1) {
    const ModelPair model = build_model(cfg);
    MethodResult result;
    result.name = cfg.name;
    result.method = method_label(cfg.method);
    result.base = scenario_base(cfg);
    result.reports.resize(cfg.seeds.size());

    std::exception_ptr failure;
    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= cfg.seeds.size() || failure) return;
                i = next++;
            }
            try {
                result.reports[i] = run_decoding(model, cfg, cfg.seeds[i]).report;
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int n = std::clamp(jobs, 1, static_cast<int>(cfg.seeds.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    aggregate(result);

    if (out_dir) {
        write_text_file(*out_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
        write_text_file(*out_dir / "result.json", result_to_json(result).dump(2) + "\n");
        for (const auto& rep : result.reports) write_seed_outputs(*out_dir / fmt::format("seed_{}", rep.seed), rep);
    }
    return result;
}

struct ComparisonTable {
    std::string csv;
    std::string markdown;
};

/// Side-by-side SR, tau and d̄; all results must share the same scenario base.
inline ComparisonTable compare_methods(const std::vector<MethodResult>& results) {
    if (results.size() < 2) throw ConfigError("compare needs at least two results");
    for (const auto& r : results)
        if (r.base != results.front().base)
            throw ConfigError("cannot compare '" + r.name + "' with '" + results.front().name +
                              "': scenario bases differ");
    ComparisonTable t;
    t.csv = "name,method,sr_mean,sr_std,tau_mean,tau_std,depth_mean,depth_std\n";
    t.markdown = "| Scenario | Method | SR | τ | d̄ |\n|---|---|---|---|---|\n";
    for (const auto& r : results) {
        t.csv += fmt::format("{},{},{},{},{},{},{},{}\n", r.name, r.method, r.speedup.mean, r.speedup.stddev,
                             r.tau.mean, r.tau.stddev, r.depth.mean, r.depth.stddev);
        t.markdown += fmt::format("| {} | {} | {:.2f}× | {:.2f} | {:.2f} |\n", r.name, r.method, r.speedup.mean,
                                  r.tau.mean, r.depth.mean);
    }
    return t;
}

/// Loads a result from a run directory or a result.json path.
inline MethodResult load_result(const std::filesystem::path& path) {
    const auto file = std::filesystem::is_directory(path) ? path / "result.json" : path;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(file));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }
    return result_from_json(j);
}

inline RunReport load_report(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return report_from_json(j);
}

inline std::string emit_plot_data(const RunReport& report, PlotKind kind, const std::filesystem::path& out_file) {
    std::string csv = plot_csv(report, kind);
    write_text_file(out_file, csv);
    return csv;
}

}  // namespace adtree
