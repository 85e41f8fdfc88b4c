#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "adtree/distribution.hpp"
#include "adtree/draft_tree.hpp"
#include "adtree/model.hpp"
#include "adtree/neighborhood.hpp"

namespace adtree {

/// Lossy neighborhood-aggregating acceptance.
struct RelaxedRule {
    const NeighborhoodProvider* provider = nullptr;
    double delta = 0.4;
    int max_neighbors = 1000;

    void validate() const {
        require(provider != nullptr, "relaxed verification needs a neighborhood provider");
        require(delta >= 0.0 && delta <= 1.0, "relaxed delta must lie in [0,1]");
        require(max_neighbors >= 1, "relaxed neighbor count must be >= 1");
    }
};

struct VerifyOptions {
    Temperature temperature = Temperature::sample;
    std::optional<RelaxedRule> relaxed;
};

struct VerifyOutcome {
    std::vector<int> accepted_path;  ///< node ids, first layer downward
    std::vector<Token> accepted_tokens;
    int tau = 0;
    Token bonus = -1;  ///< -1 when the accepted path already completes the sequence
    std::vector<bool> depth_accepted;  ///< one flag per tree layer
    std::vector<int> topk_locations;   ///< rank of each accepted token in its parent's q
    std::vector<double> target_top1;   ///< target top-1 mass at each emitted position

    /// Accepted tokens followed by the bonus token, if any.
    std::vector<Token> emitted() const {
        std::vector<Token> out = accepted_tokens;
        if (bonus >= 0) out.push_back(bonus);
        return out;
    }
};

/// min(1, p/q).
inline double acceptance_probability(double p_token, double q_token) {
    if (q_token <= 0.0) return p_token > 0.0 ? 1.0 : 0.0;
    return std::min(1.0, p_token / q_token);
}

/// Target mass of `token` plus its neighbors, taken nearest first while the
/// extra mass stays within `delta`. The truncation stops at the first
/// neighbor that would overflow.
inline double relaxed_mass(std::span<const double> p, Token token, const NeighborhoodProvider& provider,
                           double delta, int max_neighbors) {
    double extra = 0.0;
    int used = 0;
    for (Token s : provider.neighbors(token)) {
        if (used++ >= max_neighbors) break;
        const double ps = p[static_cast<std::size_t>(s)];
        if (extra + ps > delta) break;
        extra += ps;
    }
    return p[static_cast<std::size_t>(token)] + extra;
}

inline double relaxed_acceptance_probability(std::span<const double> p, Token token, double q_token,
                                             const RelaxedRule& rule) {
    return acceptance_probability(relaxed_mass(p, token, *rule.provider, rule.delta, rule.max_neighbors), q_token);
}

/// T=0 relaxed test: the greedy target token falls inside the truncated neighborhood.
inline bool relaxed_greedy_match(std::span<const double> p, Token token, Token greedy, const RelaxedRule& rule) {
    if (token == greedy) return true;
    double extra = 0.0;
    int used = 0;
    for (Token s : rule.provider->neighbors(token)) {
        if (used++ >= rule.max_neighbors) break;
        const double ps = p[static_cast<std::size_t>(s)];
        if (extra + ps > rule.delta) break;
        extra += ps;
        if (s == greedy) return true;
    }
    return false;
}

namespace detail {

/// norm(max(0, p - q)); leaves p unchanged if the difference has no mass.
inline void residual_update(std::vector<double>& p, std::span<const double> q) {
    double sum = 0.0;
    std::vector<double> r(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        r[i] = std::max(0.0, p[i] - q[i]);
        sum += r[i];
    }
    if (!(sum > 0.0)) return;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] / sum;
}

/// Removes `token` from q and renormalizes (the next without-replacement draw's law).
inline void remove_and_renormalize(std::vector<double>& q, Token token) {
    q[static_cast<std::size_t>(token)] = 0.0;
    double sum = 0.0;
    for (double x : q) sum += x;
    if (!(sum > 0.0)) return;
    for (double& x : q) x /= sum;
}

}  // namespace detail

/// Walks the tree from the root against the target model.
///
/// At T=1 the children of the current node are tested in stored order with
/// recursive rejection: child x_i is accepted with probability
/// min(1, p_i(x_i) / q_i(x_i)); on rejection p_{i+1} = norm(max(0, p_i - q_i))
/// and q_{i+1} is q_i with x_i removed. With children drawn without
/// replacement from q (ExpansionMode::sample_k) the emitted tokens follow the
/// target exactly. If every child is rejected the bonus token comes from the
/// final residual; past a leaf it comes from p at the next position.
///
/// At T=0 a child is accepted iff it equals the target argmax, and the bonus
/// is the target argmax, so the output matches greedy target decoding.
inline VerifyOutcome verify(const DraftTree& tree, const ModelPair& model, Rng& rng,
                            const VerifyOptions& options = {}) {
    require(!tree.empty(), "verify: empty draft tree");
    require(tree.root_dist().size() == static_cast<std::size_t>(model.vocab().size),
            "verify: draft and target vocabularies differ");
    if (options.relaxed) options.relaxed->validate();

    VerifyOutcome out;
    out.depth_accepted.assign(static_cast<std::size_t>(tree.depth()), false);
    std::vector<Token> context = tree.prefix;
    int current = -1;

    for (;;) {
        const Distribution target = model.target(context, tree.condition);
        out.target_top1.push_back(target.max());
        const auto& children = tree.children_of(current);
        const Distribution* q_parent = tree.children_dist(current);

        if (options.temperature == Temperature::greedy) {
            const Token greedy = argmax(target);
            int hit = -1;
            for (int c : children) {
                const Token tok = tree.nodes[static_cast<std::size_t>(c)].token;
                const bool ok = options.relaxed ? relaxed_greedy_match(target.probs(), tok, greedy, *options.relaxed)
                                                : tok == greedy;
                if (ok) {
                    hit = c;
                    break;
                }
            }
            if (hit < 0) {
                out.bonus = greedy;
                break;
            }
            current = hit;
        } else {
            std::vector<double> p(target.probs().begin(), target.probs().end());
            int hit = -1;
            if (!children.empty()) {
                std::vector<double> q(q_parent->probs().begin(), q_parent->probs().end());
                for (int c : children) {
                    const Token tok = tree.nodes[static_cast<std::size_t>(c)].token;
                    const double qx = q[static_cast<std::size_t>(tok)];
                    const double r = options.relaxed
                                         ? relaxed_acceptance_probability(p, tok, qx, *options.relaxed)
                                         : acceptance_probability(p[static_cast<std::size_t>(tok)], qx);
                    if (rng.uniform() < r) {
                        hit = c;
                        break;
                    }
                    detail::residual_update(p, q);
                    detail::remove_and_renormalize(q, tok);
                }
            }
            if (hit < 0) {
                const Token b = sample_weights(p, rng);
                require(b >= 0, "verify: residual distribution has no mass");
                out.bonus = b;
                break;
            }
            current = hit;
        }

        const auto& node = tree.nodes[static_cast<std::size_t>(current)];
        out.accepted_path.push_back(current);
        out.accepted_tokens.push_back(node.token);
        out.topk_locations.push_back(topk_location(*q_parent, node.token));
        out.depth_accepted[static_cast<std::size_t>(node.depth - 1)] = true;
        context.push_back(node.token);
        if (context.size() >= static_cast<std::size_t>(model.grid().length())) {
            // Sequence complete; nothing left to predict for a bonus token.
            out.bonus = -1;
            break;
        }
    }
    out.tau = static_cast<int>(out.accepted_path.size());
    return out;
}

}  // namespace adtree
