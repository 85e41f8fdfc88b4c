#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "adtree/errors.hpp"
#include "adtree/grid.hpp"
#include "adtree/rng.hpp"

namespace adtree {

inline constexpr double kDistTolerance = 1e-9;

/// Normalized probability vector over a vocabulary.
class Distribution {
public:
    Distribution() = default;

    /// Takes ownership of `probs`; throws unless non-negative and summing to 1.
    explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
        require(!probs_.empty(), "distribution over empty vocabulary");
        double sum = 0.0;
        for (double p : probs_) {
            require(std::isfinite(p) && p >= 0.0, "distribution entries must be finite and >= 0");
            sum += p;
        }
        require(std::abs(sum - 1.0) <= kDistTolerance, "distribution does not sum to 1");
    }

    /// Normalizes arbitrary non-negative weights. Throws on all-zero input.
    static Distribution normalized(std::vector<double> weights) {
        double sum = 0.0;
        for (double w : weights) {
            require(std::isfinite(w) && w >= 0.0, "weights must be finite and >= 0");
            sum += w;
        }
        require(sum > 0.0, "degenerate all-zero distribution");
        for (double& w : weights) w /= sum;
        return Distribution(std::move(weights));
    }

    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](Token t) const { return probs_[static_cast<std::size_t>(t)]; }
    std::span<const double> probs() const noexcept { return probs_; }

    double max() const { return *std::max_element(probs_.begin(), probs_.end()); }

    friend bool operator==(const Distribution&, const Distribution&) = default;

private:
    std::vector<double> probs_;
};

template <typename Real>
Distribution softmax(std::span<const Real> logits) {
    require(!logits.empty(), "softmax of empty logits");
    double hi = -INFINITY;
    for (Real l : logits) {
        require(std::isfinite(static_cast<double>(l)), "non-finite logit");
        hi = std::max(hi, static_cast<double>(l));
    }
    std::vector<double> w(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        w[i] = std::exp(static_cast<double>(logits[i]) - hi);
        sum += w[i];
    }
    for (double& x : w) x /= sum;
    return Distribution(std::move(w));
}

inline Distribution softmax(const std::vector<double>& logits) { return softmax(std::span<const double>(logits)); }
inline Distribution softmax(const std::vector<float>& logits) { return softmax(std::span<const float>(logits)); }

/// Classifier-free guidance: softmax(uncond + scale * (cond - uncond)).
template <typename Real>
Distribution cfg_combine(std::span<const Real> cond, std::span<const Real> uncond, double scale) {
    require(cond.size() == uncond.size(), "cfg_combine: logit length mismatch");
    require(std::isfinite(scale), "cfg_combine: non-finite scale");
    std::vector<double> guided(cond.size());
    for (std::size_t i = 0; i < cond.size(); ++i) {
        const double c = static_cast<double>(cond[i]);
        const double u = static_cast<double>(uncond[i]);
        require(std::isfinite(c) && std::isfinite(u), "cfg_combine: non-finite logit");
        guided[i] = u + scale * (c - u);
    }
    return softmax(std::span<const double>(guided));
}

inline Distribution cfg_combine(const std::vector<float>& cond, const std::vector<float>& uncond, double scale) {
    return cfg_combine(std::span<const float>(cond), std::span<const float>(uncond), scale);
}
inline Distribution cfg_combine(const std::vector<double>& cond, const std::vector<double>& uncond, double scale) {
    return cfg_combine(std::span<const double>(cond), std::span<const double>(uncond), scale);
}

/// Highest-probability token; ties go to the lowest id.
inline Token argmax(std::span<const double> probs) {
    require(!probs.empty(), "argmax of empty distribution");
    return static_cast<Token>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}
inline Token argmax(const Distribution& d) { return argmax(d.probs()); }

/// Inverse-CDF draw from unnormalized non-negative weights using one uniform.
/// Returns -1 when the total mass is zero.
inline Token sample_weights(std::span<const double> weights, Rng& rng) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    const double u = rng.uniform();
    if (!(total > 0.0)) return -1;
    const double target = u * total;
    double cum = 0.0;
    Token last_positive = -1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        cum += weights[i];
        last_positive = static_cast<Token>(i);
        if (cum > target) return last_positive;
    }
    return last_positive;
}

/// Draws a token. Greedy takes the argmax without touching the stream;
/// sampling consumes exactly one uniform.
inline Token sample(const Distribution& dist, Rng& rng, Temperature temp = Temperature::sample) {
    if (temp == Temperature::greedy) return argmax(dist);
    const Token t = sample_weights(dist.probs(), rng);
    require(t >= 0, "cannot sample from an all-zero distribution");
    return t;
}

/// Indices of the k largest probabilities, descending, ties by lower id.
inline std::vector<Token> top_k(const Distribution& dist, std::size_t k) {
    std::vector<Token> ids(dist.size());
    std::iota(ids.begin(), ids.end(), 0);
    k = std::min(k, ids.size());
    auto by_prob = [&](Token a, Token b) {
        return dist[a] > dist[b] || (dist[a] == dist[b] && a < b);
    };
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), by_prob);
    ids.resize(k);
    return ids;
}

/// 1-based rank of `token` in `q` sorted descending, ties by lower id first.
inline int topk_location(const Distribution& q, Token token) {
    require(token >= 0 && static_cast<std::size_t>(token) < q.size(), "topk_location: token out of vocabulary");
    const double pt = q[token];
    int rank = 1;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double pi = q[static_cast<Token>(i)];
        if (pi > pt || (pi == pt && static_cast<Token>(i) < token)) ++rank;
    }
    return rank;
}

inline double total_variation(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "total_variation: size mismatch");
    double tv = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] - b[i]);
    return 0.5 * tv;
}

}  // namespace adtree
