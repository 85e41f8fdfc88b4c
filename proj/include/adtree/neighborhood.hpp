#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "adtree/errors.hpp"
#include "adtree/grid.hpp"
#include "adtree/rng.hpp"

namespace adtree {

/// Maps a token to its neighbors, nearest first, excluding the token itself.
class NeighborhoodProvider {
public:
    virtual ~NeighborhoodProvider() = default;
    virtual std::span<const Token> neighbors(Token token) const = 0;
};

/// Every token is its own only neighbor.
class EmptyNeighborhood final : public NeighborhoodProvider {
public:
    std::span<const Token> neighbors(Token) const override { return {}; }
};

/// Fixed neighbor lists, mainly for tests.
class ExplicitNeighborhood final : public NeighborhoodProvider {
public:
    explicit ExplicitNeighborhood(std::map<Token, std::vector<Token>> table) : table_(std::move(table)) {}

    std::span<const Token> neighbors(Token token) const override {
        auto it = table_.find(token);
        if (it == table_.end()) return {};
        return it->second;
    }

private:
    std::map<Token, std::vector<Token>> table_;
};

/// Tokens embedded at seeded Gaussian points in a small space; neighbors are
/// the nearest tokens by Euclidean distance (ties by lower id). Lists are
/// computed lazily and cached, so one instance must not be shared across
/// threads.
class EmbeddingNeighborhood final : public NeighborhoodProvider {
public:
    EmbeddingNeighborhood(VocabSpec vocab, int dim, int max_neighbors, std::uint64_t seed)
        : vocab_(vocab), dim_(dim), max_neighbors_(max_neighbors) {
        vocab.validate();
        require(dim >= 1, "embedding dimension must be >= 1");
        require(max_neighbors >= 1, "neighbor count must be >= 1");
        Rng rng(hash_keys({seed, 0xE4BEDULL}));
        coords_.resize(static_cast<std::size_t>(vocab.size) * static_cast<std::size_t>(dim));
        for (double& c : coords_) c = rng.normal();
        cache_.resize(static_cast<std::size_t>(vocab.size));
        ready_.assign(static_cast<std::size_t>(vocab.size), 0);
    }

    std::span<const Token> neighbors(Token token) const override {
        require(vocab_.contains(token), "neighbor query out of vocabulary");
        const auto t = static_cast<std::size_t>(token);
        if (!ready_[t]) {
            cache_[t] = compute(token);
            ready_[t] = 1;
        }
        return cache_[t];
    }

    double distance2(Token a, Token b) const {
        double d = 0.0;
        for (int i = 0; i < dim_; ++i) {
            const double x = coord(a, i) - coord(b, i);
            d += x * x;
        }
        return d;
    }

private:
    double coord(Token t, int i) const {
        return coords_[static_cast<std::size_t>(t) * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(i)];
    }

    std::vector<Token> compute(Token token) const {
        std::vector<Token> ids;
        ids.reserve(static_cast<std::size_t>(vocab_.size) - 1);
        for (Token t = 0; t < vocab_.size; ++t)
            if (t != token) ids.push_back(t);
        std::vector<double> d(static_cast<std::size_t>(vocab_.size));
        for (Token t : ids) d[static_cast<std::size_t>(t)] = distance2(token, t);
        const auto n = std::min(ids.size(), static_cast<std::size_t>(max_neighbors_));
        std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(), [&](Token a, Token b) {
            const double da = d[static_cast<std::size_t>(a)], db = d[static_cast<std::size_t>(b)];
            return da < db || (da == db && a < b);
        });
        ids.resize(n);
        return ids;
    }

    VocabSpec vocab_;
    int dim_;
    int max_neighbors_;
    std::vector<double> coords_;
    mutable std::vector<std::vector<Token>> cache_;
    mutable std::vector<char> ready_;
};

}  // namespace adtree
