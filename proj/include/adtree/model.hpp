#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adtree/distribution.hpp"
#include "adtree/errors.hpp"
#include "adtree/grid.hpp"
#include "adtree/rng.hpp"

namespace adtree {

enum class Role { target, draft };

enum class Region : std::uint8_t { simple = 0, complex = 1 };

inline const char* to_string(Region r) noexcept { return r == Region::simple ? "simple" : "complex"; }

/// Conditional and unconditional logits for one position, one model.
struct BranchLogits {
    std::vector<float> cond;
    std::vector<float> uncond;
};

/// Anything that can emit per-position logits for the target and draft
/// models. Implementations must be deterministic and safe for concurrent reads.
class LogitSource {
public:
    virtual ~LogitSource() = default;

    virtual VocabSpec vocab() const = 0;
    virtual GridSpec grid() const = 0;
    virtual BranchLogits logits(Role role, std::span<const Token> prefix, Condition condition) const = 0;
    virtual std::string describe() const = 0;

    /// Per-position region labels, if the source knows them.
    virtual std::optional<std::vector<Region>> regions() const { return std::nullopt; }
};

/// Target/draft oracle pair: a logit source combined through CFG.
class ModelPair {
public:
    ModelPair(std::shared_ptr<const LogitSource> source, double cfg_scale)
        : source_(std::move(source)), cfg_scale_(cfg_scale) {
        require(source_ != nullptr, "ModelPair requires a logit source");
        require(std::isfinite(cfg_scale_), "cfg scale must be finite");
        source_->vocab().validate();
        source_->grid().validate();
    }

    VocabSpec vocab() const { return source_->vocab(); }
    GridSpec grid() const { return source_->grid(); }
    double cfg_scale() const noexcept { return cfg_scale_; }
    const LogitSource& source() const noexcept { return *source_; }
    std::shared_ptr<const LogitSource> source_ptr() const noexcept { return source_; }

    Distribution next_distribution(Role role, std::span<const Token> prefix, Condition condition) const {
        check_prefix(prefix);
        const BranchLogits l = source_->logits(role, prefix, condition);
        if (l.cond.size() != static_cast<std::size_t>(vocab().size) || l.uncond.size() != l.cond.size())
            throw ModelError("logit source returned vectors of the wrong length");
        return cfg_combine(l.cond, l.uncond, cfg_scale_);
    }

    Distribution target(std::span<const Token> prefix, Condition c) const {
        return next_distribution(Role::target, prefix, c);
    }
    Distribution draft(std::span<const Token> prefix, Condition c) const {
        return next_distribution(Role::draft, prefix, c);
    }

private:
    void check_prefix(std::span<const Token> prefix) const {
        require(prefix.size() < static_cast<std::size_t>(grid().length()), "prefix too long for grid");
        const VocabSpec v = vocab();
        for (Token t : prefix) require(v.contains(t), "prefix token out of vocabulary");
    }

    std::shared_ptr<const LogitSource> source_;
    double cfg_scale_;
};

enum class RegionLayout { uniform_simple, uniform_complex, left_right, top_bottom, disk };

inline std::optional<RegionLayout> parse_layout(const std::string& s) {
    if (s == "uniform_simple") return RegionLayout::uniform_simple;
    if (s == "uniform_complex") return RegionLayout::uniform_complex;
    if (s == "left_right") return RegionLayout::left_right;
    if (s == "top_bottom") return RegionLayout::top_bottom;
    if (s == "disk") return RegionLayout::disk;
    return std::nullopt;
}

/// Region labels for a named layout. left_right/top_bottom put the simple half
/// first; disk is a complex disk of radius 0.3*min(H,W) on a simple background.
inline std::vector<Region> make_region_map(GridSpec grid, RegionLayout layout) {
    std::vector<Region> out(static_cast<std::size_t>(grid.length()), Region::simple);
    const double cy = (grid.height - 1) / 2.0;
    const double cx = (grid.width - 1) / 2.0;
    const double radius = 0.3 * std::min(grid.height, grid.width);
    for (std::int32_t t = 0; t < grid.length(); ++t) {
        const GridPos p = grid.pos(t);
        bool complex = false;
        switch (layout) {
            case RegionLayout::uniform_simple: complex = false; break;
            case RegionLayout::uniform_complex: complex = true; break;
            case RegionLayout::left_right: complex = p.col >= grid.width / 2; break;
            case RegionLayout::top_bottom: complex = p.row >= grid.height / 2; break;
            case RegionLayout::disk: complex = std::hypot(p.row - cy, p.col - cx) <= radius; break;
        }
        out[static_cast<std::size_t>(t)] = complex ? Region::complex : Region::simple;
    }
    return out;
}

/// Parameters of the synthetic two-region texture model.
struct TextureGridSpec {
    GridSpec grid{16, 16};
    VocabSpec vocab{512};
    std::vector<Region> regions;  ///< H*W labels, raster order

    double simple_concentration = 0.5;   ///< logit scale in simple regions
    double complex_concentration = 6.0;  ///< logit scale in complex regions
    double simple_top1_cap = 0.01;       ///< enforced max target top-1 in simple regions (<= 0 disables)
    double complex_top1_floor = 0.14;    ///< enforced min target top-1 in complex regions (<= 0 disables)

    double divergence = 1.0;     ///< in [0,1]; 0 makes draft == target
    double simple_noise = 0.3;   ///< draft logit noise multiplier, simple regions
    double complex_noise = 6.0;  ///< draft logit noise multiplier, complex regions

    int context_window = 4;
    double guidance_scale = 3.0;  ///< CFG scale at which the branches recombine to the calibrated logits
    std::uint64_t seed = 0;

    void validate() const {
        grid.validate();
        vocab.validate();
        require(regions.size() == static_cast<std::size_t>(grid.length()), "region map size must equal H*W");
        require(simple_concentration >= 0.0 && complex_concentration >= 0.0, "concentrations must be >= 0");
        require(divergence >= 0.0 && divergence <= 1.0, "divergence must lie in [0,1]");
        require(simple_noise >= 0.0 && complex_noise >= 0.0, "noise multipliers must be >= 0");
        require(context_window >= 0, "context window must be >= 0");
        require(guidance_scale > 0.0 && std::isfinite(guidance_scale), "texture model guidance scale must be > 0");
        if (simple_top1_cap > 0.0 && simple_top1_cap * vocab.size < 1.0)
            throw ModelError("simple_top1_cap is below 1/K; no distribution over this vocabulary satisfies it");
        require(complex_top1_floor < 1.0, "complex_top1_floor must be < 1");
    }
};

/// Synthetic 2-D texture-grid model.
///
/// Target guided logits are `concentration * g` with g a seeded Gaussian field
/// keyed by (seed, position, context hash, condition). The draft adds seeded
/// Gaussian noise scaled by `divergence * region_noise`. Conditional and
/// unconditional branches are constructed so that CFG at `guidance_scale`
/// recombines to the guided logits. Logits are rounded to float32, which is
/// what a trace stores, so trace replay is bit-exact.
class TextureGridModel final : public LogitSource {
public:
    explicit TextureGridModel(TextureGridSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    VocabSpec vocab() const override { return spec_.vocab; }
    GridSpec grid() const override { return spec_.grid; }
    std::optional<std::vector<Region>> regions() const override { return spec_.regions; }
    const TextureGridSpec& spec() const noexcept { return spec_; }

    std::string describe() const override {
        return "texture-grid seed=" + std::to_string(spec_.seed) + " K=" + std::to_string(spec_.vocab.size) +
               " grid=" + std::to_string(spec_.grid.height) + "x" + std::to_string(spec_.grid.width);
    }

    Region region_at(std::int32_t t) const { return spec_.regions.at(static_cast<std::size_t>(t)); }

    std::uint64_t context_hash(std::span<const Token> prefix) const noexcept {
        std::uint64_t h = 0x51ED270B27E2A1F3ULL;
        const std::size_t w = std::min(prefix.size(), static_cast<std::size_t>(spec_.context_window));
        for (std::size_t i = prefix.size() - w; i < prefix.size(); ++i)
            h = hash_combine(h, static_cast<std::uint64_t>(prefix[i]));
        return h;
    }

    BranchLogits logits(Role role, std::span<const Token> prefix, Condition condition) const override {
        const auto t = static_cast<std::int32_t>(prefix.size());
        require(t < spec_.grid.length(), "prefix too long for grid");
        const Region region = region_at(t);
        const std::uint64_t ctx = context_hash(prefix);
        const std::size_t k = static_cast<std::size_t>(spec_.vocab.size);

        std::vector<double> guided = field(kGuided, t, ctx, condition);
        calibrate(guided, region);
        std::vector<double> uncond = field(kUncond, t, ctx, 0);
        const double conc = region == Region::simple ? spec_.simple_concentration : spec_.complex_concentration;
        for (double& u : uncond) u *= conc;

        if (role == Role::draft) {
            const double sigma =
                spec_.divergence * (region == Region::simple ? spec_.simple_noise : spec_.complex_noise);
            const std::vector<double> n_guided = field(kDraftGuided, t, ctx, condition);
            const std::vector<double> n_uncond = field(kDraftUncond, t, ctx, 0);
            for (std::size_t i = 0; i < k; ++i) {
                guided[i] += sigma * n_guided[i];
                uncond[i] += sigma * n_uncond[i];
            }
        }

        BranchLogits out;
        out.cond.resize(k);
        out.uncond.resize(k);
        const double s = spec_.guidance_scale;
        for (std::size_t i = 0; i < k; ++i) {
            out.uncond[i] = static_cast<float>(uncond[i]);
            out.cond[i] = static_cast<float>(uncond[i] + (guided[i] - uncond[i]) / s);
        }
        return out;
    }

private:
    enum Tag : std::uint64_t { kGuided = 1, kUncond = 2, kDraftGuided = 3, kDraftUncond = 4 };

    std::vector<double> field(Tag tag, std::int32_t t, std::uint64_t ctx, Condition cond) const {
        Rng rng(hash_keys({spec_.seed, tag, static_cast<std::uint64_t>(t), ctx, cond}));
        std::vector<double> g(static_cast<std::size_t>(spec_.vocab.size));
        for (double& x : g) x = rng.normal();
        return g;
    }

    static double top1_of_scaled(const std::vector<double>& g, double scale) {
        double hi = -INFINITY;
        for (double x : g) hi = std::max(hi, scale * x);
        double sum = 0.0;
        for (double x : g) sum += std::exp(scale * x - hi);
        return 1.0 / sum;
    }

    /// Scales the unit Gaussian field by the region concentration, then
    /// rescales only if the top-1 cap/floor would be violated. Top-1 mass
    /// of softmax(f*g) is monotone in f, so bisection finds the factor.
    void calibrate(std::vector<double>& g, Region region) const {
        double scale = region == Region::simple ? spec_.simple_concentration : spec_.complex_concentration;
        // Margins absorb float32 rounding of the stored branches.
        if (region == Region::simple && spec_.simple_top1_cap > 0.0) {
            const double cap = spec_.simple_top1_cap * (1.0 - 1e-4);
            if (top1_of_scaled(g, scale) > cap) {
                double lo = 0.0, hi = scale;
                for (int it = 0; it < 60; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (top1_of_scaled(g, mid) > cap ? hi : lo) = mid;
                }
                scale = lo;
            }
        } else if (region == Region::complex && spec_.complex_top1_floor > 0.0) {
            const double floor = spec_.complex_top1_floor * (1.0 + 1e-4);
            if (top1_of_scaled(g, scale) < floor) {
                double lo = scale, hi = std::max(scale, 1.0);
                for (int it = 0; it < 64 && top1_of_scaled(g, hi) < floor; ++it) hi *= 2.0;
                for (int it = 0; it < 60; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (top1_of_scaled(g, mid) < floor ? lo : hi) = mid;
                }
                scale = hi;
            }
        }
        for (double& x : g) x *= scale;
    }

    TextureGridSpec spec_;
};

}  // namespace adtree
