#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "adtree/controller.hpp"
#include "adtree/cost.hpp"
#include "adtree/errors.hpp"
#include "adtree/grid.hpp"
#include "adtree/model.hpp"

namespace adtree {

inline constexpr int kConfigVersion = 1;

struct TextureModelConfig {
    int height = 16;
    int width = 16;
    int vocab = 512;
    std::string layout = "disk";
    std::vector<std::string> region_rows;  ///< optional explicit map, 'S'/'C' per cell; overrides layout
    double simple_concentration = 0.5;
    double complex_concentration = 6.0;
    double simple_top1_cap = 0.01;
    double complex_top1_floor = 0.14;
    double divergence = 1.0;
    double simple_noise = 0.3;
    double complex_noise = 6.0;
    int context_window = 4;
    std::uint64_t seed = 0;

    friend bool operator==(const TextureModelConfig&, const TextureModelConfig&) = default;
};

struct TraceModelConfig {
    std::string path;
    std::optional<int> vocab;  ///< when set, must match the trace header

    friend bool operator==(const TraceModelConfig&, const TraceModelConfig&) = default;
};

using ModelConfig = std::variant<TextureModelConfig, TraceModelConfig>;

struct VanillaMethod {
    friend bool operator==(const VanillaMethod&, const VanillaMethod&) = default;
};

struct StaticMethod {
    int depth = 5;
    int width = 10;
    std::optional<int> rerank;
    friend bool operator==(const StaticMethod&, const StaticMethod&) = default;
};

struct AdtMethod {
    AdaptationConfig adaptation;
    friend bool operator==(const AdtMethod&, const AdtMethod&) = default;
};

enum class NeighborhoodKind { embedding, none };

struct AdtRelaxedMethod {
    AdaptationConfig adaptation;
    double delta = 0.4;
    int neighbors = 1000;
    NeighborhoodKind neighborhood = NeighborhoodKind::embedding;
    int embedding_dim = 8;
    friend bool operator==(const AdtRelaxedMethod&, const AdtRelaxedMethod&) = default;
};

using Method = std::variant<VanillaMethod, StaticMethod, AdtMethod, AdtRelaxedMethod>;

struct ScenarioConfig {
    int version = kConfigVersion;
    std::string name;
    ModelConfig model = TextureModelConfig{};
    Method method = AdtMethod{};
    Temperature temperature = Temperature::sample;
    double cfg_scale = 3.0;
    std::vector<std::uint64_t> seeds{1};
    Condition condition = 0;
    std::string output_dir;
    CostModel cost;

    friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

inline std::string method_label(const Method& m) {
    struct Visitor {
        std::string operator()(const VanillaMethod&) const { return "vanilla"; }
        std::string operator()(const StaticMethod& s) const {
            std::string out = "static(d=" + std::to_string(s.depth) + ",k=" + std::to_string(s.width);
            if (s.rerank) out += ",N=" + std::to_string(*s.rerank);
            return out + ")";
        }
        std::string operator()(const AdtMethod& a) const {
            return std::string("adt(") + to_string(a.adaptation.strategy) + ")";
        }
        std::string operator()(const AdtRelaxedMethod& a) const {
            return std::string("adt_relaxed(") + to_string(a.adaptation.strategy) + ")";
        }
    };
    return std::visit(Visitor{}, m);
}

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items())
        if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

template <typename T>
void read_optional(const json& obj, const char* key, std::optional<T>& out, const std::string& where) {
    if (!obj.contains(key)) return;
    if (obj.at(key).is_null()) {
        out.reset();
        return;
    }
    T v{};
    read(obj, key, v, where);
    out = v;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

inline json adaptation_to_json(const AdaptationConfig& a) {
    json j;
    j["beta"] = a.beta;
    j["depth_step"] = a.depth_step;
    j["width_step"] = a.width_step;
    j["depth_bounds"] = {a.depth_min, a.depth_max};
    j["width_bounds"] = {a.width_min, a.width_max};
    j["init"] = to_string(a.strategy);
    j["flock_radius"] = a.flock.radius;
    j["clamp_width_at_depth_one"] = a.clamp_width_at_depth_one;
    j["initial"] = a.initial ? json{a.initial->depth, a.initial->width} : json(nullptr);
    return j;
}

inline AdaptationConfig adaptation_from_json(const json& j, const std::string& where) {
    check_keys(j, {"beta", "depth_step", "width_step", "depth_bounds", "width_bounds", "init", "flock_radius",
                   "clamp_width_at_depth_one", "initial"},
               where);
    AdaptationConfig a;
    read(j, "beta", a.beta, where);
    read(j, "depth_step", a.depth_step, where);
    read(j, "width_step", a.width_step, where);
    std::vector<int> bounds;
    if (j.contains("depth_bounds")) {
        read(j, "depth_bounds", bounds, where);
        if (bounds.size() != 2) throw ConfigError(where + ".depth_bounds: expected [min, max]");
        a.depth_min = bounds[0];
        a.depth_max = bounds[1];
    }
    if (j.contains("width_bounds")) {
        read(j, "width_bounds", bounds, where);
        if (bounds.size() != 2) throw ConfigError(where + ".width_bounds: expected [min, max]");
        a.width_min = bounds[0];
        a.width_max = bounds[1];
    }
    std::string init = to_string(a.strategy);
    read(j, "init", init, where);
    const auto strategy = parse_strategy(init);
    if (!strategy) throw ConfigError(where + ".init: unknown strategy '" + init + "'");
    a.strategy = *strategy;
    read(j, "flock_radius", a.flock.radius, where);
    read(j, "clamp_width_at_depth_one", a.clamp_width_at_depth_one, where);
    if (j.contains("initial") && !j.at("initial").is_null()) {
        std::vector<int> dw;
        read(j, "initial", dw, where);
        if (dw.size() != 2) throw ConfigError(where + ".initial: expected [depth, width]");
        a.initial = DepthWidth{dw[0], dw[1]};
    }
    try {
        a.validate();
    } catch (const PreconditionError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return a;
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelConfig& m) {
    using json = nlohmann::json;
    if (const auto* t = std::get_if<TextureModelConfig>(&m)) {
        json j;
        j["kind"] = "texture";
        j["height"] = t->height;
        j["width"] = t->width;
        j["vocab"] = t->vocab;
        j["layout"] = t->layout;
        j["region_rows"] = t->region_rows;
        j["simple_concentration"] = t->simple_concentration;
        j["complex_concentration"] = t->complex_concentration;
        j["simple_top1_cap"] = t->simple_top1_cap;
        j["complex_top1_floor"] = t->complex_top1_floor;
        j["divergence"] = t->divergence;
        j["simple_noise"] = t->simple_noise;
        j["complex_noise"] = t->complex_noise;
        j["context_window"] = t->context_window;
        j["seed"] = t->seed;
        return j;
    }
    const auto& tr = std::get<TraceModelConfig>(m);
    return json{{"kind", "trace"}, {"path", tr.path}, {"vocab", detail::optional_json(tr.vocab)}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
    const std::string where = "model";
    if (!j.is_object() || !j.contains("kind")) throw ConfigError("model: missing 'kind'");
    const std::string kind = j.at("kind").is_string() ? j.at("kind").get<std::string>() : "";
    if (kind == "texture") {
        detail::check_keys(j, {"kind", "height", "width", "vocab", "layout", "region_rows", "simple_concentration",
                               "complex_concentration", "simple_top1_cap", "complex_top1_floor", "divergence",
                               "simple_noise", "complex_noise", "context_window", "seed"},
                           where);
        TextureModelConfig t;
        detail::read(j, "height", t.height, where);
        detail::read(j, "width", t.width, where);
        detail::read(j, "vocab", t.vocab, where);
        detail::read(j, "layout", t.layout, where);
        detail::read(j, "region_rows", t.region_rows, where);
        detail::read(j, "simple_concentration", t.simple_concentration, where);
        detail::read(j, "complex_concentration", t.complex_concentration, where);
        detail::read(j, "simple_top1_cap", t.simple_top1_cap, where);
        detail::read(j, "complex_top1_floor", t.complex_top1_floor, where);
        detail::read(j, "divergence", t.divergence, where);
        detail::read(j, "simple_noise", t.simple_noise, where);
        detail::read(j, "complex_noise", t.complex_noise, where);
        detail::read(j, "context_window", t.context_window, where);
        detail::read(j, "seed", t.seed, where);
        if (t.region_rows.empty() && !parse_layout(t.layout))
            throw ConfigError("model.layout: unknown layout '" + t.layout + "'");
        return t;
    }
    if (kind == "trace") {
        detail::check_keys(j, {"kind", "path", "vocab"}, where);
        TraceModelConfig t;
        detail::read(j, "path", t.path, where);
        detail::read_optional(j, "vocab", t.vocab, where);
        if (t.path.empty()) throw ConfigError("model.path: trace path required");
        return t;
    }
    throw ConfigError("model.kind: expected 'texture' or 'trace'");
}

inline nlohmann::json method_to_json(const Method& m) {
    using json = nlohmann::json;
    struct Visitor {
        json operator()(const VanillaMethod&) const { return json{{"kind", "vanilla"}}; }
        json operator()(const StaticMethod& s) const {
            return json{{"kind", "static"},
                        {"depth", s.depth},
                        {"width", s.width},
                        {"rerank", detail::optional_json(s.rerank)}};
        }
        json operator()(const AdtMethod& a) const {
            return json{{"kind", "adt"}, {"adaptation", detail::adaptation_to_json(a.adaptation)}};
        }
        json operator()(const AdtRelaxedMethod& a) const {
            return json{{"kind", "adt_relaxed"},
                        {"adaptation", detail::adaptation_to_json(a.adaptation)},
                        {"delta", a.delta},
                        {"neighbors", a.neighbors},
                        {"neighborhood", a.neighborhood == NeighborhoodKind::embedding ? "embedding" : "none"},
                        {"embedding_dim", a.embedding_dim}};
        }
    };
    return std::visit(Visitor{}, m);
}

inline Method method_from_json(const nlohmann::json& j) {
    const std::string where = "method";
    if (!j.is_object() || !j.contains("kind")) throw ConfigError("method: missing 'kind'");
    const std::string kind = j.at("kind").is_string() ? j.at("kind").get<std::string>() : "";
    if (kind == "vanilla") {
        detail::check_keys(j, {"kind"}, where);
        return VanillaMethod{};
    }
    if (kind == "static") {
        detail::check_keys(j, {"kind", "depth", "width", "rerank"}, where);
        StaticMethod s;
        detail::read(j, "depth", s.depth, where);
        detail::read(j, "width", s.width, where);
        detail::read_optional(j, "rerank", s.rerank, where);
        if (s.depth < 1 || s.width < 1) throw ConfigError("method: static depth and width must be >= 1");
        if (s.rerank && *s.rerank < 1) throw ConfigError("method.rerank: must be >= 1 or null");
        return s;
    }
    const auto adaptation = [&] {
        return j.contains("adaptation") ? detail::adaptation_from_json(j.at("adaptation"), "method.adaptation")
                                        : AdaptationConfig{};
    };
    if (kind == "adt") {
        detail::check_keys(j, {"kind", "adaptation"}, where);
        return AdtMethod{adaptation()};
    }
    if (kind == "adt_relaxed") {
        detail::check_keys(j, {"kind", "adaptation", "delta", "neighbors", "neighborhood", "embedding_dim"}, where);
        AdtRelaxedMethod a;
        a.adaptation = adaptation();
        detail::read(j, "delta", a.delta, where);
        detail::read(j, "neighbors", a.neighbors, where);
        detail::read(j, "embedding_dim", a.embedding_dim, where);
        std::string nb = "embedding";
        detail::read(j, "neighborhood", nb, where);
        if (nb == "embedding") a.neighborhood = NeighborhoodKind::embedding;
        else if (nb == "none") a.neighborhood = NeighborhoodKind::none;
        else throw ConfigError("method.neighborhood: expected 'embedding' or 'none'");
        if (!(a.delta >= 0.0 && a.delta <= 1.0)) throw ConfigError("method.delta: must lie in [0,1]");
        if (a.neighbors < 1) throw ConfigError("method.neighbors: must be >= 1");
        if (a.embedding_dim < 1) throw ConfigError("method.embedding_dim: must be >= 1");
        return a;
    }
    throw ConfigError("method.kind: expected vanilla, static, adt or adt_relaxed");
}

inline nlohmann::json cost_to_json(const CostModel& c) {
    return {{"draft_layer", c.draft_layer}, {"mask_per_token", c.mask_per_token}, {"verify", c.verify}, {"base", c.base}};
}

inline nlohmann::json config_to_json(const ScenarioConfig& c) {
    nlohmann::json j;
    j["version"] = c.version;
    j["name"] = c.name;
    j["model"] = model_to_json(c.model);
    j["method"] = method_to_json(c.method);
    j["temperature"] = to_int(c.temperature);
    j["cfg_scale"] = c.cfg_scale;
    j["seeds"] = c.seeds;
    j["condition"] = c.condition;
    j["output_dir"] = c.output_dir;
    j["cost"] = cost_to_json(c.cost);
    return j;
}

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"version", "name", "model", "method", "temperature", "cfg_scale", "seeds", "condition",
                           "output_dir", "cost"},
                       "config");
    ScenarioConfig c;
    if (!j.contains("version")) throw ConfigError("config: missing 'version'");
    detail::read(j, "version", c.version, "config");
    if (c.version != kConfigVersion)
        throw ConfigError("config: unsupported version " + std::to_string(c.version));
    detail::read(j, "name", c.name, "config");
    if (!j.contains("model")) throw ConfigError("config: missing 'model'");
    c.model = model_from_json(j.at("model"));
    if (!j.contains("method")) throw ConfigError("config: missing 'method'");
    c.method = method_from_json(j.at("method"));
    int temp = to_int(c.temperature);
    if (j.contains("temperature") && !j.at("temperature").is_number_integer())
        throw ConfigError("config.temperature: must be 0 or 1");
    detail::read(j, "temperature", temp, "config");
    if (temp != 0 && temp != 1) throw ConfigError("config.temperature: must be 0 or 1");
    c.temperature = temperature_from_int(temp);
    detail::read(j, "cfg_scale", c.cfg_scale, "config");
    detail::read(j, "seeds", c.seeds, "config");
    if (c.seeds.empty()) throw ConfigError("config.seeds: at least one seed required");
    detail::read(j, "condition", c.condition, "config");
    detail::read(j, "output_dir", c.output_dir, "config");
    if (j.contains("cost")) {
        const auto& cj = j.at("cost");
        detail::check_keys(cj, {"draft_layer", "mask_per_token", "verify", "base"}, "config.cost");
        detail::read(cj, "draft_layer", c.cost.draft_layer, "config.cost");
        detail::read(cj, "mask_per_token", c.cost.mask_per_token, "config.cost");
        detail::read(cj, "verify", c.cost.verify, "config.cost");
        detail::read(cj, "base", c.cost.base, "config.cost");
        try {
            c.cost.validate();
        } catch (const PreconditionError& e) {
            throw ConfigError(std::string("config.cost: ") + e.what());
        }
    }
    return c;
}

inline ScenarioConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto cfg = parse_config(text);
    // Relative trace paths resolve against the config's directory.
    if (auto* tr = std::get_if<TraceModelConfig>(&cfg.model)) {
        std::filesystem::path p(tr->path);
        if (p.is_relative()) tr->path = (path.parent_path() / p).lexically_normal().string();
    }
    return cfg;
}

/// The parts of a scenario that must agree for two results to be comparable.
inline nlohmann::json scenario_base(const ScenarioConfig& c) {
    return {{"model", model_to_json(c.model)},
            {"temperature", to_int(c.temperature)},
            {"cfg_scale", c.cfg_scale},
            {"seeds", c.seeds},
            {"condition", c.condition},
            {"cost", cost_to_json(c.cost)}};
}

}  // namespace adtree
