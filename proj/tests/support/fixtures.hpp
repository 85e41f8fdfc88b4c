#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "adtree/adtree.hpp"

namespace fixtures {

using namespace adtree;

using ProbFn = std::function<std::vector<double>(std::span<const Token>)>;

// Target and draft given directly as probability tables; both CFG branches
// carry log p so any guidance scale recombines to p.
class FnSource final : public LogitSource {
public:
    FnSource(int vocab, GridSpec grid, ProbFn target, ProbFn draft)
        : vocab_{vocab}, grid_(grid), target_(std::move(target)), draft_(std::move(draft)) {}

    VocabSpec vocab() const override { return vocab_; }
    GridSpec grid() const override { return grid_; }
    std::string describe() const override { return "fn-source"; }

    BranchLogits logits(Role role, std::span<const Token> prefix, Condition) const override {
        const auto p = (role == Role::target ? target_ : draft_)(prefix);
        std::vector<float> l(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) l[i] = static_cast<float>(std::log(p[i]));
        return {l, l};
    }

private:
    VocabSpec vocab_;
    GridSpec grid_;
    ProbFn target_, draft_;
};

inline ModelPair fn_pair(int vocab, GridSpec grid, ProbFn target, ProbFn draft, double scale = 3.0) {
    return ModelPair(std::make_shared<FnSource>(vocab, grid, std::move(target), std::move(draft)), scale);
}

inline ProbFn constant(std::vector<double> p) {
    return [p](std::span<const Token>) { return p; };
}

// Strictly positive, context-dependent random table.
inline ProbFn hashed_table(int vocab, std::uint64_t seed, double peak) {
    return [=](std::span<const Token> prefix) {
        std::uint64_t h = hash_keys({seed, prefix.size()});
        for (Token t : prefix) h = hash_combine(h, static_cast<std::uint64_t>(t));
        Rng rng(h);
        std::vector<double> l(static_cast<std::size_t>(vocab));
        for (double& x : l) x = peak * rng.normal();
        auto d = softmax(l);
        return std::vector<double>(d.probs().begin(), d.probs().end());
    };
}

inline std::shared_ptr<TextureGridModel> texture(GridSpec grid, int vocab, RegionLayout layout, std::uint64_t seed,
                                                 double divergence = 1.0) {
    TextureGridSpec s;
    s.grid = grid;
    s.vocab = {vocab};
    s.regions = make_region_map(grid, layout);
    s.seed = seed;
    s.divergence = divergence;
    if (s.simple_top1_cap * vocab < 1.0) s.simple_top1_cap = 0.0;
    return std::make_shared<TextureGridModel>(std::move(s));
}

// Arbitrary-shaped tree with random confidences; each layer's parents are
// drawn from the previous layer. Not produced by grow_tree.
inline DraftTree random_tree(Rng& rng, int n_nodes, int max_depth, int vocab = 64) {
    DraftTree tree;
    int d = 0;
    while (static_cast<int>(tree.size()) < n_nodes) {
        const bool new_layer = tree.layers.empty() ||
                               (d < max_depth && rng.uniform() < 0.35 && !tree.layers.back().empty());
        if (new_layer) {
            tree.layers.emplace_back();
            ++d;
        }
        DraftNode n;
        n.depth = d;
        n.token = static_cast<Token>(rng.uniform_int(0, vocab - 1));
        n.confidence = 0.05 + 0.9 * rng.uniform();
        if (d == 1) {
            n.parent = -1;
            n.path_confidence = n.confidence;
        } else {
            const auto& prev = tree.layers[static_cast<std::size_t>(d - 2)];
            n.parent = prev[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(prev.size()) - 1))];
            n.path_confidence = n.confidence * tree.nodes[static_cast<std::size_t>(n.parent)].path_confidence;
        }
        const int id = static_cast<int>(tree.size());
        if (n.parent < 0) tree.root_children.push_back(id);
        else tree.nodes[static_cast<std::size_t>(n.parent)].children.push_back(id);
        tree.nodes.push_back(n);
        tree.layers.back().push_back(id);
    }
    return tree;
}

// Plain single-chain speculative sampling written from the textbook
// description: draft d tokens one by one, then test each in order; on the
// first rejection draw from norm(max(0, p - q)); if all pass draw from p.
struct ChainResult {
    std::vector<Token> drafted;
    int accepted = 0;
    Token bonus = -1;
};

inline Token inverse_cdf(const std::vector<double>& w, double u) {
    double total = 0.0;
    for (double x : w) total += x;
    double cum = 0.0;
    Token last = -1;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] <= 0.0) continue;
        cum += w[i];
        last = static_cast<Token>(i);
        if (cum > u * total) return last;
    }
    return last;
}

inline ChainResult chain_speculative_step(const ModelPair& m, std::vector<Token> prefix, Condition c, int depth,
                                          Rng& rng) {
    ChainResult r;
    const auto T = static_cast<std::size_t>(m.grid().length());
    std::vector<std::vector<double>> qs;
    std::vector<Token> ctx = prefix;
    for (int i = 0; i < depth && ctx.size() < T; ++i) {
        const auto q = m.draft(ctx, c);
        qs.emplace_back(q.probs().begin(), q.probs().end());
        const double u = rng.uniform();
        const Token x = inverse_cdf(qs.back(), u);
        r.drafted.push_back(x);
        ctx.push_back(x);
    }
    ctx = prefix;
    for (std::size_t i = 0; i < r.drafted.size(); ++i) {
        const auto p = m.target(ctx, c);
        const Token x = r.drafted[i];
        const double px = p[x], qx = qs[i][static_cast<std::size_t>(x)];
        const double a = qx <= 0.0 ? 1.0 : std::min(1.0, px / qx);
        if (rng.uniform() < a) {
            ++r.accepted;
            ctx.push_back(x);
            continue;
        }
        std::vector<double> res(p.size());
        double s = 0.0;
        for (std::size_t k = 0; k < res.size(); ++k) {
            res[k] = std::max(0.0, p.probs()[k] - qs[i][k]);
            s += res[k];
        }
        for (double& v : res) v /= s;
        r.bonus = inverse_cdf(res, rng.uniform());
        return r;
    }
    if (ctx.size() < T) {
        const auto p = m.target(ctx, c);
        r.bonus = inverse_cdf(std::vector<double>(p.probs().begin(), p.probs().end()), rng.uniform());
    }
    return r;
}

}  // namespace fixtures
