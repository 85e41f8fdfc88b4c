#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adtree/distribution.hpp"
#include "adtree/errors.hpp"
#include "adtree/model.hpp"

namespace adtree {

/// Depth d̂, top-k k̂ and an optional rerank budget N for one drafting round.
struct TreeParams {
    int depth = 1;
    int width = 1;
    std::optional<int> rerank_budget;  ///< nullopt keeps the whole tree

    void validate() const {
        require(depth >= 1, "tree depth must be >= 1");
        require(width >= 1, "tree width must be >= 1");
        require(!rerank_budget || *rerank_budget >= 1, "rerank budget must be >= 1");
    }
};

/// How children are proposed for an expanded node.
enum class ExpansionMode {
    top_k,        ///< the k most likely draft tokens (greedy decoding)
    sample_k,     ///< k draws without replacement from q, kept in draw order
};

struct GrowOptions {
    ExpansionMode mode = ExpansionMode::top_k;
    double early_stop_floor = 0.0;  ///< skip expanding nodes whose q top-1 is below this; 0 disables
};

struct DraftNode {
    Token token = 0;
    double confidence = 0.0;       ///< c_v = q(token | prefix, ancestors)
    double path_confidence = 0.0;  ///< P_v = c_v * P_parent
    int depth = 1;
    int parent = -1;  ///< -1 for children of the root
    std::vector<int> children;
    int dist_index = -1;  ///< index into DraftTree::draft_dists when this node was expanded
};

/// Candidate tree; nodes live in an arena, `layers[d-1]` lists depth-d nodes.
struct DraftTree {
    std::vector<Token> prefix;
    Condition condition = 0;
    std::vector<DraftNode> nodes;
    std::vector<std::vector<int>> layers;
    std::vector<int> root_children;
    /// Draft distribution at each expanded context; entry 0 is the root.
    std::vector<std::shared_ptr<const Distribution>> draft_dists;
    std::size_t peak_live_nodes = 0;

    std::size_t size() const noexcept { return nodes.size(); }
    int depth() const noexcept { return static_cast<int>(layers.size()); }
    bool empty() const noexcept { return nodes.empty(); }

    const Distribution& root_dist() const { return *draft_dists.at(0); }

    /// Draft distribution a node's children were proposed from; nullptr for leaves.
    const Distribution* children_dist(int node) const {
        if (node < 0) return draft_dists.at(0).get();
        const int di = nodes.at(static_cast<std::size_t>(node)).dist_index;
        return di < 0 ? nullptr : draft_dists.at(static_cast<std::size_t>(di)).get();
    }

    const std::vector<int>& children_of(int node) const {
        return node < 0 ? root_children : nodes.at(static_cast<std::size_t>(node)).children;
    }

    /// Tokens from the first layer down to `node` inclusive.
    std::vector<Token> path_tokens(int node) const {
        std::vector<Token> out;
        for (int v = node; v >= 0; v = nodes[static_cast<std::size_t>(v)].parent)
            out.push_back(nodes[static_cast<std::size_t>(v)].token);
        std::reverse(out.begin(), out.end());
        return out;
    }
};

namespace detail {

inline std::vector<Token> propose_children(const Distribution& q, int width, ExpansionMode mode, Rng* rng) {
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(width), q.size());
    if (mode == ExpansionMode::top_k) return top_k(q, k);
    require(rng != nullptr, "sampled expansion needs an rng");
    std::vector<double> w(q.probs().begin(), q.probs().end());
    std::vector<Token> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const Token t = sample_weights(w, *rng);
        if (t < 0) break;
        out.push_back(t);
        w[static_cast<std::size_t>(t)] = 0.0;
    }
    return out;
}

/// Rank order used for parent selection and reranking:
/// higher score, then shallower, then lower token id, then arena order.
inline bool score_before(const DraftTree& tree, int a, int b) {
    const auto& na = tree.nodes[static_cast<std::size_t>(a)];
    const auto& nb = tree.nodes[static_cast<std::size_t>(b)];
    if (na.path_confidence != nb.path_confidence) return na.path_confidence > nb.path_confidence;
    if (na.depth != nb.depth) return na.depth < nb.depth;
    if (na.token != nb.token) return na.token < nb.token;
    return a < b;
}

}  // namespace detail

/// Builds a dynamic draft tree: layer 1 holds k̂ proposals from q(.|prefix);
/// each further layer expands the k̂ best nodes of the previous layer by
/// path confidence, giving each k̂ children. Sampled mode consumes `rng`
/// layer by layer, parents in selection order.
inline DraftTree grow_tree(const ModelPair& model, std::span<const Token> prefix, Condition condition,
                           const TreeParams& params, const GrowOptions& options = {}, Rng* rng = nullptr) {
    params.validate();
    require(prefix.size() < static_cast<std::size_t>(model.grid().length()), "prefix leaves no room to draft");

    DraftTree tree;
    tree.prefix.assign(prefix.begin(), prefix.end());
    tree.condition = condition;

    auto expand = [&](int parent, const Distribution& q, std::vector<int>& layer) {
        const int di = static_cast<int>(tree.draft_dists.size());
        tree.draft_dists.push_back(std::make_shared<const Distribution>(q));
        const double parent_conf =
            parent < 0 ? 1.0 : tree.nodes[static_cast<std::size_t>(parent)].path_confidence;
        const int depth = parent < 0 ? 1 : tree.nodes[static_cast<std::size_t>(parent)].depth + 1;
        if (parent >= 0) tree.nodes[static_cast<std::size_t>(parent)].dist_index = di;
        for (Token tok : detail::propose_children(q, params.width, options.mode, rng)) {
            DraftNode n;
            n.token = tok;
            n.confidence = q[tok];
            n.path_confidence = parent < 0 ? n.confidence : n.confidence * parent_conf;
            n.depth = depth;
            n.parent = parent;
            const int id = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(std::move(n));
            (parent < 0 ? tree.root_children : tree.nodes[static_cast<std::size_t>(parent)].children).push_back(id);
            layer.push_back(id);
        }
        tree.peak_live_nodes = std::max(tree.peak_live_nodes, tree.nodes.size());
    };

    std::vector<int> layer;
    expand(-1, model.draft(prefix, condition), layer);
    if (layer.empty()) return tree;
    tree.layers.push_back(layer);

    std::vector<Token> context(prefix.begin(), prefix.end());
    for (int d = 2; d <= params.depth; ++d) {
        if (prefix.size() + static_cast<std::size_t>(d) > static_cast<std::size_t>(model.grid().length())) break;
        std::vector<int> parents = tree.layers.back();
        std::sort(parents.begin(), parents.end(), [&](int a, int b) { return detail::score_before(tree, a, b); });
        parents.resize(std::min(parents.size(), static_cast<std::size_t>(params.width)));

        std::vector<int> next;
        for (int parent : parents) {
            context.resize(prefix.size());
            const auto path = tree.path_tokens(parent);
            context.insert(context.end(), path.begin(), path.end());
            Distribution q = model.draft(context, condition);
            if (options.early_stop_floor > 0.0 && q.max() < options.early_stop_floor) continue;
            expand(parent, q, next);
        }
        if (next.empty()) break;
        tree.layers.push_back(std::move(next));
    }
    return tree;
}

/// Node score: the product of draft confidences along the path.
inline double node_score(const DraftTree& tree, int node) {
    return tree.nodes.at(static_cast<std::size_t>(node)).path_confidence;
}

/// The min(N, L) best nodes by score (ties: shallower, lower token id).
/// Returned in rank order. Because scores never increase down a path, the
/// set is ancestor-closed.
inline std::vector<int> rerank(const DraftTree& tree, int budget) {
    require(budget >= 1, "rerank budget must be >= 1");
    std::vector<int> ids(tree.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    const auto n = std::min(ids.size(), static_cast<std::size_t>(budget));
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                      [&](int a, int b) { return detail::score_before(tree, a, b); });
    ids.resize(n);
    return ids;
}

inline bool is_ancestor_closed(const DraftTree& tree, const std::vector<int>& selected) {
    std::vector<char> in(tree.size(), 0);
    for (int v : selected) {
        if (v < 0 || static_cast<std::size_t>(v) >= tree.size()) return false;
        in[static_cast<std::size_t>(v)] = 1;
    }
    for (int v : selected) {
        const int p = tree.nodes[static_cast<std::size_t>(v)].parent;
        if (p >= 0 && !in[static_cast<std::size_t>(p)]) return false;
    }
    return true;
}

/// Restricts the tree to an ancestor-closed subset, keeping layer and sibling order.
inline DraftTree prune(const DraftTree& tree, const std::vector<int>& selected) {
    require(is_ancestor_closed(tree, selected), "prune: selected set is not ancestor-closed");
    std::vector<char> keep(tree.size(), 0);
    for (int v : selected) keep[static_cast<std::size_t>(v)] = 1;

    DraftTree out;
    out.prefix = tree.prefix;
    out.condition = tree.condition;
    out.draft_dists = tree.draft_dists;
    std::vector<int> remap(tree.size(), -1);
    for (const auto& layer : tree.layers) {
        std::vector<int> kept;
        for (int v : layer) {
            if (!keep[static_cast<std::size_t>(v)]) continue;
            DraftNode n = tree.nodes[static_cast<std::size_t>(v)];
            n.children.clear();
            n.parent = n.parent < 0 ? -1 : remap[static_cast<std::size_t>(n.parent)];
            const int id = static_cast<int>(out.nodes.size());
            remap[static_cast<std::size_t>(v)] = id;
            out.nodes.push_back(std::move(n));
            kept.push_back(id);
        }
        if (kept.empty()) break;
        out.layers.push_back(std::move(kept));
    }
    // Children lists follow the original sibling order.
    for (int c : tree.root_children)
        if (remap[static_cast<std::size_t>(c)] >= 0) out.root_children.push_back(remap[static_cast<std::size_t>(c)]);
    for (std::size_t v = 0; v < tree.size(); ++v) {
        if (remap[v] < 0) continue;
        for (int c : tree.nodes[v].children)
            if (remap[static_cast<std::size_t>(c)] >= 0)
                out.nodes[static_cast<std::size_t>(remap[v])].children.push_back(remap[static_cast<std::size_t>(c)]);
    }
    out.peak_live_nodes = tree.peak_live_nodes;
    return out;
}

/// Depth-major linear order of an ancestor-closed node set.
struct Linearized {
    std::vector<int> nodes;     ///< arena ids in linear order
    std::vector<Token> tokens;
    std::vector<int> parents;   ///< linear index of parent, -1 for root children
    std::vector<int> depths;
};

inline Linearized linearize(const DraftTree& tree, const std::vector<int>& selected) {
    require(is_ancestor_closed(tree, selected), "linearize: selected set is not ancestor-closed");
    std::vector<char> in(tree.size(), 0);
    for (int v : selected) in[static_cast<std::size_t>(v)] = 1;
    Linearized lin;
    std::vector<int> pos(tree.size(), -1);
    for (const auto& layer : tree.layers) {
        for (int v : layer) {
            if (!in[static_cast<std::size_t>(v)]) continue;
            const auto& n = tree.nodes[static_cast<std::size_t>(v)];
            pos[static_cast<std::size_t>(v)] = static_cast<int>(lin.nodes.size());
            lin.nodes.push_back(v);
            lin.tokens.push_back(n.token);
            lin.parents.push_back(n.parent < 0 ? -1 : pos[static_cast<std::size_t>(n.parent)]);
            lin.depths.push_back(n.depth);
        }
    }
    return lin;
}

inline Linearized linearize(const DraftTree& tree) {
    std::vector<int> all(tree.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return linearize(tree, all);
}

/// L x L ancestor-visibility matrix in linear order: (a, b) is true iff
/// b is a or an ancestor of a.
class TreeMask {
public:
    explicit TreeMask(std::size_t n) : n_(n), bits_(n * n, 0) {}

    std::size_t size() const noexcept { return n_; }
    bool operator()(std::size_t a, std::size_t b) const { return bits_[a * n_ + b] != 0; }
    void set(std::size_t a, std::size_t b) { bits_[a * n_ + b] = 1; }
    friend bool operator==(const TreeMask&, const TreeMask&) = default;

private:
    std::size_t n_;
    std::vector<std::uint8_t> bits_;
};

inline TreeMask build_tree_mask(const Linearized& lin) {
    TreeMask mask(lin.nodes.size());
    for (std::size_t a = 0; a < lin.nodes.size(); ++a) {
        mask.set(a, a);
        // Parents precede children in linear order, so the parent row is complete.
        const int p = lin.parents[a];
        if (p < 0) continue;
        for (std::size_t b = 0; b <= static_cast<std::size_t>(p); ++b)
            if (mask(static_cast<std::size_t>(p), b)) mask.set(a, b);
    }
    return mask;
}

inline TreeMask build_tree_mask(const DraftTree& tree, const std::vector<int>& selected) {
    return build_tree_mask(linearize(tree, selected));
}

inline TreeMask build_tree_mask(const DraftTree& tree) { return build_tree_mask(linearize(tree)); }

/// Depth-indented text rendering, one node per line: token, c_v, P_v.
inline std::string render_tree(const DraftTree& tree) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "tree prefix_len=" << tree.prefix.size() << " nodes=" << tree.size() << " depth=" << tree.depth() << '\n';
    auto visit = [&](auto&& self, int v) -> void {
        const auto& n = tree.nodes[static_cast<std::size_t>(v)];
        os << std::string(static_cast<std::size_t>(2 * n.depth), ' ') << n.token << " c=" << n.confidence
           << " P=" << n.path_confidence << '\n';
        for (int c : n.children) self(self, c);
    };
    for (int c : tree.root_children) visit(visit, c);
    return os.str();
}

}  // namespace adtree
