#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "adtree/adtree.hpp"

namespace fs = std::filesystem;
using namespace adtree;

namespace {

enum Exit { ok = 0, other = 1, config = 2, model = 3, io = 4 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

ScenarioConfig load_with_overrides(const Common& c) {
    auto cfg = load_config(c.config_path);
    if (c.seed) cfg.seeds = {*c.seed};
    return cfg;
}

std::optional<fs::path> out_override(const Common& c) {
    if (c.out_dir.empty()) return std::nullopt;
    return fs::path(c.out_dir);
}

int cmd_run(const Common& c, int jobs) {
    const auto cfg = load_with_overrides(c);
    const auto dir = resolve_output_dir(cfg, out_override(c));
    const auto r = run_scenario(cfg, dir, jobs);
    std::cout << fmt::format("{} [{}] seeds={} SR={:.4f}±{:.4f} tau={:.4f} d={:.4f}\n", r.name, r.method,
                             r.reports.size(), r.speedup.mean, r.speedup.stddev, r.tau.mean, r.depth.mean);
    std::cout << "wrote " << dir.string() << "\n";
    return ok;
}

int cmd_compare(const std::vector<std::string>& inputs, const std::string& out_dir) {
    std::vector<MethodResult> results;
    for (const auto& p : inputs) results.push_back(load_result(p));
    const auto table = compare_methods(results);
    if (!out_dir.empty()) {
        write_text_file(fs::path(out_dir) / "comparison.csv", table.csv);
        write_text_file(fs::path(out_dir) / "comparison.md", table.markdown);
    }
    std::cout << table.markdown;
    return ok;
}

int cmd_emit_plot(const Common& c, const std::string& report_path, const std::string& kind_name,
                  const std::string& out_file) {
    const auto kind = parse_plot_kind(kind_name);
    if (!kind) throw ConfigError("unknown plot kind '" + kind_name + "'");
    fs::path report = report_path;
    if (report.empty()) {
        if (c.config_path.empty()) throw ConfigError("emit-plot needs --report or --config");
        const auto cfg = load_with_overrides(c);
        const auto dir = resolve_output_dir(cfg, out_override(c));
        report = dir / fmt::format("seed_{}", cfg.seeds.front()) / "report.json";
    }
    const auto rep = load_report(report);
    if (out_file.empty()) {
        std::cout << plot_csv(rep, *kind);
    } else {
        emit_plot_data(rep, *kind, out_file);
        std::cout << "wrote " << out_file << "\n";
    }
    return ok;
}

// Texture scenario: export along the greedy rollout, re-import, and check
// logits, distributions and greedy decoding replay exactly. Trace scenario:
// decode and re-encode the file and compare bytes.
int cmd_trace_check(const Common& c) {
    const auto cfg = load_with_overrides(c);
    if (const auto* tr = std::get_if<TraceModelConfig>(&cfg.model)) {
        const auto bytes = read_text_file(tr->path);
        const std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
        const auto again = encode_trace(decode_trace(raw));
        if (again != raw) {
            std::cout << "FAIL re-encoded trace differs from " << tr->path << "\n";
            return other;
        }
        std::cout << "OK " << tr->path << " round-trips byte-identically\n";
        return ok;
    }
    const ModelPair original = build_model(cfg);
    const Condition cond = run_condition(cfg.condition, cfg.seeds.front());
    const auto dir = resolve_output_dir(cfg, out_override(c));
    const auto path = dir / "trace.adtt";
    const auto reference = export_trace(original, cond, path);
    const ModelPair replay = import_trace(path);
    if (replay.cfg_scale() != cfg.cfg_scale) {
        std::cout << "FAIL cfg scale not preserved\n";
        return other;
    }
    std::vector<Token> prefix;
    for (std::size_t t = 0; t < reference.size(); ++t) {
        const auto& src = original.source();
        const auto& dst = replay.source();
        for (Role role : {Role::target, Role::draft}) {
            const auto a = src.logits(role, prefix, cond), b = dst.logits(role, prefix, cond);
            if (a.cond != b.cond || a.uncond != b.uncond) {
                std::cout << "FAIL logits differ at position " << t << "\n";
                return other;
            }
        }
        if (original.target(prefix, cond) != replay.target(prefix, cond) ||
            original.draft(prefix, cond) != replay.draft(prefix, cond)) {
            std::cout << "FAIL distributions differ at position " << t << "\n";
            return other;
        }
        prefix.push_back(reference[t]);
    }
    if (greedy_rollout(replay, cond) != reference) {
        std::cout << "FAIL greedy replay differs\n";
        return other;
    }
    const auto bytes = read_text_file(path);
    const std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
    if (encode_trace(decode_trace(raw)) != raw) {
        std::cout << "FAIL re-encoded trace differs\n";
        return other;
    }
    std::cout << "OK " << path.string() << " (" << reference.size() << " positions) replays exactly\n";
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adjacency-adaptive draft tree experiment harness"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub, bool need_config) {
        auto* opt = sub->add_option("-c,--config", common.config_path, "scenario config (JSON)");
        if (need_config) opt->required();
        sub->add_option("-s,--seed", common.seed, "run this single seed instead of the config's list");
        sub->add_option("-o,--out", common.out_dir,
                        std::string("output directory (default: config output_dir under $") + kOutputRootEnv + ")");
    };

    int jobs = 1;
    auto* run = app.add_subcommand("run", "run a scenario and write reports");
    add_common(run, true);
    run->add_option("-j,--jobs", jobs, "seeds to run in parallel")->check(CLI::PositiveNumber);

    std::vector<std::string> inputs;
    std::string compare_out;
    auto* compare = app.add_subcommand("compare", "tabulate SR, tau and mean depth across runs");
    compare->add_option("results", inputs, "run directories or result.json files")->required()->expected(2, -1);
    compare->add_option("-o,--out", compare_out, "write comparison.csv and comparison.md here");

    std::string report_path, kind, plot_out;
    auto* emit = app.add_subcommand("emit-plot", "write one plot-ready CSV from a stored report");
    add_common(emit, false);
    emit->add_option("-r,--report", report_path, "report.json path (instead of --config/--seed)");
    emit->add_option("-k,--kind", kind, "accept_hist | topk_hist | depth_matrix | top1_map")->required();
    emit->add_option("-f,--file", plot_out, "output CSV file (default: stdout)");

    auto* trace = app.add_subcommand("trace-roundtrip-check", "export, re-import and replay a logit trace");
    add_common(trace, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return other;
    }

    try {
        if (*run) return cmd_run(common, jobs);
        if (*compare) return cmd_compare(inputs, compare_out);
        if (*emit) return cmd_emit_plot(common, report_path, kind, plot_out);
        if (*trace) return cmd_trace_check(common);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config;
    } catch (const ModelError& e) {
        std::cerr << "model error: " << e.what() << "\n";
        return model;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return io;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return other;
    }
    return other;
}
