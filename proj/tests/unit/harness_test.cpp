#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "fixtures.hpp"

using namespace adtree;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "adtree_harness_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TextureModelConfig tex(int h, int w, int vocab, const std::string& layout, std::uint64_t seed, double div = 1.0) {
    TextureModelConfig t;
    t.height = h;
    t.width = w;
    t.vocab = vocab;
    t.layout = layout;
    t.seed = seed;
    t.divergence = div;
    if (t.simple_top1_cap * vocab < 1.0) t.simple_top1_cap = 0.0;
    return t;
}

ScenarioConfig scenario(const std::string& name, ModelConfig model, Method method, Temperature temp,
                        std::vector<std::uint64_t> seeds = {1}) {
    ScenarioConfig c;
    c.name = name;
    c.model = std::move(model);
    c.method = std::move(method);
    c.temperature = temp;
    c.seeds = std::move(seeds);
    return c;
}

AdtMethod frozen_adt(int d, int k) {
    AdtMethod a;
    a.adaptation.depth_step = 0;
    a.adaptation.width_step = 0;
    a.adaptation.initial = DepthWidth{d, k};
    return a;
}

// Depth to which the target's greedy continuation is present in the tree.
int greedy_path_depth(const DraftTree& tree, std::span<const Token> greedy, std::size_t start) {
    const std::vector<int>* level = &tree.root_children;
    int depth = 0;
    while (start + static_cast<std::size_t>(depth) < greedy.size()) {
        const Token want = greedy[start + static_cast<std::size_t>(depth)];
        int hit = -1;
        for (int id : *level)
            if (tree.nodes[static_cast<std::size_t>(id)].token == want) hit = id;
        if (hit < 0) break;
        ++depth;
        level = &tree.nodes[static_cast<std::size_t>(hit)].children;
    }
    return depth;
}

std::string slurp(const fs::path& p) { return read_text_file(p); }

}  // namespace

TEST(Harness, VanillaGreedyIsTargetRolloutWithUnitSpeedup) {
    const auto cfg = scenario("v", tex(8, 8, 64, "disk", 4), VanillaMethod{}, Temperature::greedy, {1, 2});
    const ModelPair m = build_model(cfg);
    for (auto seed : cfg.seeds) {
        const auto run = run_decoding(m, cfg, seed);
        EXPECT_EQ(run.sequence, greedy_rollout(m, run_condition(cfg.condition, seed)));
        EXPECT_EQ(run.report.speedup, 1.0);
        EXPECT_EQ(run.report.rounds, 64);
    }
}

TEST(Harness, IdenticalModelsGreedyStaticAcceptsFullDepth) {
    // Argmax carries 0.9 in every context, so the greedy node outranks every
    // other node of its layer and is always expanded.
    auto peaked = [](std::span<const Token> prefix) {
        std::uint64_t h = hash_keys({17, prefix.size()});
        for (Token t : prefix) h = hash_combine(h, static_cast<std::uint64_t>(t));
        Rng rng(h);
        std::vector<double> p(64);
        double rest = 0.0;
        for (double& x : p) rest += (x = 0.01 + rng.uniform());
        const auto top = static_cast<std::size_t>(rng.uniform_int(0, 63));
        rest -= p[top];
        for (double& x : p) x *= 0.1 / rest;
        p[top] = 0.9;
        return p;
    };
    const ModelPair m = fixtures::fn_pair(64, {16, 16}, peaked, peaked);
    const auto cfg = scenario("qp", tex(16, 16, 64, "disk", 7, 0.0), StaticMethod{5, 10, std::nullopt},
                              Temperature::greedy, {1, 2, 3});
    for (auto seed : cfg.seeds) {
        const auto run = run_decoding(m, cfg, seed);
        EXPECT_EQ(run.sequence, greedy_rollout(m, run_condition(cfg.condition, seed)));
        const auto& log = run.report.round_log;
        ASSERT_EQ(log.size(), 43u);
        for (std::size_t i = 0; i + 1 < log.size(); ++i) {
            EXPECT_EQ(log[i].depth, 5);
            EXPECT_EQ(log[i].tau, 5) << "seed " << seed << " round " << i;
        }
        EXPECT_EQ(log.back().depth, 4);
        EXPECT_EQ(log.back().tau, 4);
    }
}

TEST(Harness, IdenticalModelsGreedyTauIsGreedyDepthInTree) {
    // On any layout, tau equals how far the greedy continuation reaches inside
    // the grown tree; flat rows can push it out of the selected parents.
    for (const char* layout : {"disk", "uniform_simple", "uniform_complex", "left_right"}) {
        const auto cfg = scenario("qp", tex(16, 16, 512, layout, 7, 0.0), StaticMethod{5, 10, std::nullopt},
                                  Temperature::greedy, {1, 2});
        const ModelPair m = build_model(cfg);
        for (auto seed : cfg.seeds) {
            const Condition c = run_condition(cfg.condition, seed);
            const auto greedy = greedy_rollout(m, c);
            const auto run = run_decoding(m, cfg, seed);
            EXPECT_EQ(run.sequence, greedy);
            for (const auto& rd : run.report.round_log) {
                const std::span<const Token> prefix(greedy.data(), static_cast<std::size_t>(rd.start));
                const auto tree = grow_tree(m, prefix, c, {rd.depth, 10, std::nullopt}, {ExpansionMode::top_k}, nullptr);
                EXPECT_EQ(rd.tau, greedy_path_depth(tree, greedy, static_cast<std::size_t>(rd.start)))
                    << layout << " seed " << seed << " start " << rd.start;
            }
        }
    }
}

TEST(Harness, FrozenAdtReproducesStaticReports) {
    for (auto temp : {Temperature::greedy, Temperature::sample}) {
        for (auto [d, k] : {std::pair{5, 10}, std::pair{3, 6}, std::pair{1, 4}}) {
            const auto model = tex(16, 16, 512, "disk", 7);
            const auto a = scenario("a", model, frozen_adt(d, k), temp, {3});
            const auto s = scenario("s", model, StaticMethod{d, k, std::nullopt}, temp, {3});
            const ModelPair m = build_model(a);
            const auto ra = run_decoding(m, a, 3).report;
            const auto rs = run_decoding(m, s, 3).report;
            EXPECT_EQ(report_to_json(ra).dump(2), report_to_json(rs).dump(2)) << d << "," << k;
            EXPECT_EQ(rounds_csv(ra.round_log), rounds_csv(rs.round_log));
            for (auto kind : {PlotKind::accept_hist, PlotKind::topk_hist, PlotKind::depth_matrix, PlotKind::top1_map})
                EXPECT_EQ(plot_csv(ra, kind), plot_csv(rs, kind));
        }
    }
}

TEST(Harness, GreedySequenceInvariantAcrossMethods) {
    const auto model = tex(16, 16, 512, "disk", 7);
    AdtMethod flock;
    flock.adaptation.strategy = InitStrategy::tokenflock;
    const std::vector<Method> methods{VanillaMethod{}, StaticMethod{5, 10, std::nullopt},
                                      StaticMethod{4, 8, 30}, AdtMethod{}, flock};
    for (std::uint64_t seed : {1u, 2u}) {
        std::vector<std::vector<Token>> seqs;
        for (const auto& meth : methods) {
            const auto cfg = scenario("x", model, meth, Temperature::greedy, {seed});
            seqs.push_back(run_decoding(build_model(cfg), cfg, seed).sequence);
        }
        for (std::size_t i = 1; i < seqs.size(); ++i) EXPECT_EQ(seqs[i], seqs[0]) << method_label(methods[i]);
    }
}

TEST(Harness, DepthMatrixReplaysControllerLog) {
    const auto cfg = scenario("adt", tex(16, 16, 512, "disk", 7), AdtMethod{}, Temperature::sample, {5});
    const auto rep = run_decoding(build_model(cfg), cfg, 5).report;
    ASSERT_EQ(rep.controller_log.size(), rep.round_log.size());
    std::vector<int> replay(256, -1);
    for (std::size_t i = 0; i < rep.round_log.size(); ++i) {
        const auto& rd = rep.round_log[i];
        const auto& dec = rep.controller_log[i].decision;
        EXPECT_EQ(dec.pos, rd.pos);
        EXPECT_EQ(std::min(dec.adapted.depth, 256 - rd.start), rd.depth);
        EXPECT_EQ(rep.controller_log[i].tau, rd.tau);
        for (int j = 0; j < rd.emitted; ++j) replay[static_cast<std::size_t>(rd.start + j)] = rd.depth;
    }
    EXPECT_EQ(replay, rep.depth_matrix);
}

TEST(Harness, RunsAreDeterministic) {
    const auto cfg = scenario("det", tex(8, 8, 64, "left_right", 3), AdtRelaxedMethod{}, Temperature::sample, {1, 2, 3});
    const auto a = scratch("det_a"), b = scratch("det_b");
    run_scenario(cfg, a, 1);
    run_scenario(cfg, b, 3);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
        ++files;
    }
    EXPECT_EQ(files, 2u + 3u * 7u);
}

TEST(Harness, AggregateRecomputableFromSeeds) {
    const auto cfg = scenario("agg", tex(8, 8, 64, "disk", 3), StaticMethod{}, Temperature::sample, {1, 2, 3});
    const auto r = run_scenario(cfg);
    double sum = 0.0;
    for (const auto& rep : r.reports) sum += rep.speedup;
    EXPECT_NEAR(r.speedup.mean, sum / 3.0, 1e-12);
    double ss = 0.0;
    for (const auto& rep : r.reports) ss += (rep.speedup - r.speedup.mean) * (rep.speedup - r.speedup.mean);
    EXPECT_NEAR(r.speedup.stddev, std::sqrt(ss / 2.0), 1e-12);
    const auto back = result_from_json(nlohmann::json::parse(result_to_json(r).dump()));
    EXPECT_EQ(result_to_json(back).dump(), result_to_json(r).dump());
}

TEST(Harness, SummarizeExamples) {
    const auto s = summarize({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
    EXPECT_DOUBLE_EQ(s.mean, 5.0);
    EXPECT_NEAR(s.stddev, std::sqrt(32.0 / 7.0), 1e-12);
    EXPECT_EQ(summarize({3.0}).stddev, 0.0);
    EXPECT_THROW(summarize({}), PreconditionError);
}

TEST(Compare, IdenticalConfigsGiveIdenticalRows) {
    const auto cfg = scenario("same", tex(8, 8, 64, "disk", 3), AdtMethod{}, Temperature::sample, {1, 2});
    const auto t = compare_methods({run_scenario(cfg), run_scenario(cfg)});
    std::vector<std::string> lines;
    std::string line;
    for (char ch : t.csv) {
        if (ch == '\n') {
            lines.push_back(line);
            line.clear();
        } else {
            line += ch;
        }
    }
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0], "name,method,sr_mean,sr_std,tau_mean,tau_std,depth_mean,depth_std");
    EXPECT_EQ(lines[1], lines[2]);
}

TEST(Compare, RejectsMismatchedBases) {
    const auto a = scenario("a", tex(8, 8, 64, "disk", 3), AdtMethod{}, Temperature::sample, {1, 2});
    auto b = a;
    b.seeds = {1, 3};
    EXPECT_THROW(compare_methods({run_scenario(a), run_scenario(b)}), ConfigError);
    auto c = a;
    c.temperature = Temperature::greedy;
    EXPECT_THROW(compare_methods({run_scenario(a), run_scenario(c)}), ConfigError);
    EXPECT_THROW(compare_methods({run_scenario(a)}), ConfigError);
}

TEST(Compare, RegeneratedFromStoredResultsIsByteIdentical) {
    const auto model = tex(8, 8, 64, "disk", 3);
    const auto s = scenario("static", model, StaticMethod{}, Temperature::sample, {1, 2});
    const auto a = scenario("adt", model, AdtMethod{}, Temperature::sample, {1, 2});
    const auto ds = scratch("cmp_s"), da = scratch("cmp_a");
    const auto live = compare_methods({run_scenario(s, ds), run_scenario(a, da)});
    const auto stored = compare_methods({load_result(ds), load_result(da / "result.json")});
    EXPECT_EQ(stored.csv, live.csv);
    EXPECT_EQ(stored.markdown, live.markdown);
    EXPECT_EQ(compare_methods({load_result(ds), load_result(da)}).csv, stored.csv);
}

TEST(Compare, MissingResultIsIoError) {
    EXPECT_THROW(load_result(scratch("empty")), IoError);
}

TEST(EmitPlot, SingleRoundHistogramIsOneLine) {
    const auto cfg = scenario("one", tex(1, 4, 16, "uniform_complex", 2, 0.0), StaticMethod{5, 10, std::nullopt},
                              Temperature::greedy);
    const auto rep = run_decoding(build_model(cfg), cfg, 1).report;
    ASSERT_EQ(rep.rounds, 1);
    const auto csv = plot_csv(rep, PlotKind::accept_hist);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
}

TEST(EmitPlot, DepthMatrixShapeAndReemission) {
    const auto cfg = scenario("shape", tex(16, 16, 512, "disk", 7), AdtMethod{}, Temperature::sample);
    const auto dir = scratch("plot");
    run_scenario(cfg, dir);
    const auto rep = load_report(dir / "seed_1" / "report.json");
    const auto csv = emit_plot_data(rep, PlotKind::depth_matrix, dir / "dm.csv");
    int rows = 0;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const auto nl = csv.find('\n', pos);
        const auto row = csv.substr(pos, nl - pos);
        EXPECT_EQ(std::count(row.begin(), row.end(), ','), 15);
        ++rows;
        pos = nl + 1;
    }
    EXPECT_EQ(rows, 16);
    EXPECT_EQ(slurp(dir / "dm.csv"), slurp(dir / "seed_1" / "depth_matrix.csv"));
    for (auto kind : {PlotKind::accept_hist, PlotKind::topk_hist, PlotKind::depth_matrix, PlotKind::top1_map}) {
        const auto f1 = dir / "again1.csv", f2 = dir / "again2.csv";
        emit_plot_data(rep, kind, f1);
        emit_plot_data(load_report(dir / "seed_1" / "report.json"), kind, f2);
        EXPECT_EQ(slurp(f1), slurp(f2));
        EXPECT_EQ(slurp(f1), slurp(dir / "seed_1" / (std::string(to_string(kind)) + ".csv")));
    }
}

TEST(Output, EnvironmentRootAppliesToRelativeDirs) {
    ScenarioConfig cfg;
    cfg.name = "envcase";
    ::unsetenv(kOutputRootEnv);
    EXPECT_EQ(resolve_output_dir(cfg), fs::path("runs/envcase"));
    ::setenv(kOutputRootEnv, "/tmp/adtree_root", 1);
    EXPECT_EQ(resolve_output_dir(cfg), fs::path("/tmp/adtree_root/runs/envcase"));
    cfg.output_dir = "/abs/out";
    EXPECT_EQ(resolve_output_dir(cfg), fs::path("/abs/out"));
    cfg.output_dir = "rel/out";
    EXPECT_EQ(resolve_output_dir(cfg), fs::path("/tmp/adtree_root/rel/out"));
    EXPECT_EQ(resolve_output_dir(cfg, fs::path("x/y")), fs::path("x/y"));
    ::unsetenv(kOutputRootEnv);
}

TEST(Output, UnwritableDirectoryIsIoError) {
    const auto dir = scratch("ro");
    write_text_file(dir / "blocker", "x");
    EXPECT_THROW(write_text_file(dir / "blocker" / "child.csv", "y"), IoError);
}

TEST(Config, RoundTripsLosslessly) {
    ScenarioConfig c = scenario("rt", tex(12, 10, 300, "top_bottom", 99, 0.5), AdtRelaxedMethod{}, Temperature::greedy,
                                {4, 8, 15});
    auto& r = std::get<AdtRelaxedMethod>(c.method);
    r.delta = 0.25;
    r.neighbors = 17;
    r.neighborhood = NeighborhoodKind::none;
    r.adaptation.strategy = InitStrategy::tokenflock;
    r.adaptation.flock.radius = 2.5;
    r.adaptation.initial = DepthWidth{3, 9};
    r.adaptation.clamp_width_at_depth_one = true;
    c.cost.draft_layer = 0.3;
    c.condition = 42;
    c.cfg_scale = 1.5;
    c.output_dir = "somewhere";
    EXPECT_EQ(parse_config(config_to_json(c).dump()), c);

    std::vector<ScenarioConfig> others{
        scenario("v", tex(4, 4, 16, "disk", 1), VanillaMethod{}, Temperature::sample),
        scenario("s", TraceModelConfig{"a/b.adtt", 64}, StaticMethod{4, 6, 20}, Temperature::greedy),
        scenario("t", TraceModelConfig{"c.adtt", std::nullopt}, AdtMethod{}, Temperature::sample)};
    auto rows = tex(2, 3, 16, "disk", 1);
    rows.region_rows = {"SCS", "CCS"};
    others.push_back(scenario("rows", rows, AdtMethod{}, Temperature::sample));
    for (const auto& o : others) EXPECT_EQ(parse_config(config_to_json(o).dump()), o) << o.name;
}

TEST(Config, BundledScenariosLoad) {
    const fs::path dir = fs::path(ADTREE_SOURCE_DIR) / "scenarios";
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".json") continue;
        const auto c = load_config(e.path());
        EXPECT_EQ(parse_config(config_to_json(c).dump()), c) << e.path();
        EXPECT_NO_THROW(build_model(c));
        ++n;
    }
    EXPECT_GE(n, 8);
}

TEST(Config, UnknownKeysAreErrors) {
    const auto good = config_to_json(scenario("k", tex(4, 4, 16, "disk", 1), AdtMethod{}, Temperature::sample));
    EXPECT_NO_THROW(config_from_json(good));
    auto j = good;
    j["extra"] = 1;
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["model"]["sharpness"] = 2;
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["method"]["depth"] = 5;
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["method"]["adaptation"]["lr"] = 0.1;
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["cost"]["gpu"] = 1.0;
    EXPECT_THROW(config_from_json(j), ConfigError);
}

TEST(Config, InvalidValuesAreErrors) {
    const auto good = config_to_json(scenario("k", tex(4, 4, 16, "disk", 1), AdtMethod{}, Temperature::sample));
    auto j = good;
    j.erase("version");
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["version"] = 2;
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["temperature"] = 0.5;
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["seeds"] = nlohmann::json::array();
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["method"]["kind"] = "beam";
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["model"]["layout"] = "spiral";
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = good;
    j["method"]["adaptation"]["init"] = "diagonal";
    EXPECT_THROW(config_from_json(j), ConfigError);
    EXPECT_THROW(parse_config("{not json"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, TraceModelErrors) {
    const auto dir = scratch("trace_cfg");
    const ModelPair m(fixtures::texture({4, 4}, 16, RegionLayout::left_right, 21), 3.0);
    export_trace(m, 0, dir / "t.adtt");
    auto cfg = scenario("t", TraceModelConfig{(dir / "t.adtt").string(), 16}, VanillaMethod{}, Temperature::greedy);
    EXPECT_NO_THROW(build_model(cfg));
    std::get<TraceModelConfig>(cfg.model).vocab = 32;
    EXPECT_THROW(build_model(cfg), ModelError);
    std::get<TraceModelConfig>(cfg.model).path = (dir / "missing.adtt").string();
    EXPECT_THROW(build_model(cfg), ConfigError);

    write_text_file(dir / "cfg.json", config_to_json(scenario("t", TraceModelConfig{"t.adtt", std::nullopt},
                                                              VanillaMethod{}, Temperature::greedy))
                                          .dump());
    const auto loaded = load_config(dir / "cfg.json");
    EXPECT_EQ(fs::path(std::get<TraceModelConfig>(loaded.model).path), (dir / "t.adtt").lexically_normal());
    EXPECT_NO_THROW(build_model(loaded));
}

TEST(Config, MethodLabels) {
    EXPECT_EQ(method_label(VanillaMethod{}), "vanilla");
    EXPECT_EQ(method_label(StaticMethod{5, 10, std::nullopt}), "static(d=5,k=10)");
    EXPECT_EQ(method_label(StaticMethod{5, 10, 60}), "static(d=5,k=10,N=60)");
    AdtMethod a;
    a.adaptation.strategy = InitStrategy::tokenflock;
    EXPECT_EQ(method_label(a), "adt(tokenflock)");
    EXPECT_EQ(method_label(AdtRelaxedMethod{}), "adt_relaxed(horizontal)");
}
