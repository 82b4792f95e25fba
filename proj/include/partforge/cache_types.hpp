#pragma once

#include <algorithm>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "partforge/common.hpp"
#include "partforge/pyramid.hpp"

namespace partforge {

/// Identity of a latent hypothesis: the hypothesized class and the chosen
/// free-latent location per (atom, part, region) slot.
struct HypothesisKey {
    int label = 0;
    std::vector<std::int32_t> choices;

    bool operator==(const HypothesisKey&) const = default;

    bool operator<(const HypothesisKey& o) const {
        if (label != o.label) return label < o.label;
        return choices < o.choices;
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a64(&label, sizeof(label));
        if (!choices.empty())
            h = fnv1a64(choices.data(), choices.size() * sizeof(std::int32_t), h);
        return h;
    }
};

/// Hypothesis triplet (i, f, delta): example index, aggregated feature in
/// filter space, and the margin loss of the hypothesized class.
struct CacheEntry {
    int example = 0;
    Eigen::VectorXd feature;
    double loss = 0.0;
    HypothesisKey key;
    int easy_streak = 0;  // consecutive eviction sweeps scoring below zero

    double value(const Eigen::VectorXd& w) const { return w.dot(feature) + loss; }
};

inline CacheEntry zero_entry(int example, int label, Eigen::Index dim) {
    CacheEntry e;
    e.example = example;
    e.feature = Eigen::VectorXd::Zero(dim);
    e.loss = 0.0;
    e.key.label = label;
    return e;
}

/// Working set of hypotheses, at least one per example. The correct-label
/// zero hypothesis of every example is always present, so each example's
/// contribution to the bound is non-negative.
class Cache {
  public:
    Cache() = default;

    /// C_0: the zero hypothesis for every example.
    Cache(const std::vector<int>& labels, Eigen::Index feature_dim) {
        per_example_.resize(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            per_example_[i].push_back(
                zero_entry(static_cast<int>(i), labels[i], feature_dim));
    }

    std::size_t num_examples() const { return per_example_.size(); }

    const std::vector<CacheEntry>& entries(std::size_t example) const {
        return per_example_[example];
    }

    std::size_t total_entries() const {
        std::size_t n = 0;
        for (const auto& v : per_example_) n += v.size();
        return n;
    }

    bool contains(std::size_t example, const HypothesisKey& key) const {
        for (const CacheEntry& e : per_example_[example])
            if (e.key == key) return true;
        return false;
    }

    /// Inserts unless an entry with the same provenance already exists.
    bool insert(CacheEntry entry) {
        auto& v = per_example_[static_cast<std::size_t>(entry.example)];
        for (const CacheEntry& e : v)
            if (e.key == entry.key) return false;
        v.push_back(std::move(entry));
        return true;
    }

    /// Removes entries scoring strictly below zero under w for `patience`
    /// consecutive sweeps. Zero hypotheses score exactly zero and therefore
    /// always survive.
    std::size_t evict_easy(const Eigen::VectorXd& w, int patience = 1) {
        std::size_t removed = 0;
        for (auto& v : per_example_) {
            for (CacheEntry& e : v) {
                if (e.value(w) < 0.0)
                    ++e.easy_streak;
                else
                    e.easy_streak = 0;
            }
            auto it = std::remove_if(v.begin(), v.end(), [&](const CacheEntry& e) {
                return e.easy_streak >= patience;
            });
            removed += static_cast<std::size_t>(v.end() - it);
            v.erase(it, v.end());
            if (v.empty()) throw Error("Cache: example lost its zero hypothesis");
        }
        return removed;
    }

    /// Order-independent fingerprint of the entry set, used to certify that
    /// the mining loop never revisits a cache.
    std::uint64_t canonical_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::size_t i = 0; i < per_example_.size(); ++i) {
            std::uint64_t per = 0;
            for (const CacheEntry& e : per_example_[i])
                per ^= e.key.hash();  // xor: order-independent within an example
            h = fnv1a64(&i, sizeof(i), h);
            h = fnv1a64(&per, sizeof(per), h);
        }
        return h;
    }

  private:
    std::vector<std::vector<CacheEntry>> per_example_;
};

/// B_C(w) = lambda ||w||^2 + sum_i max over the example's entries of w.f + delta.
inline double cache_objective(const Eigen::VectorXd& w, const Cache& cache, double lambda) {
    double total = lambda * w.squaredNorm();
    for (std::size_t i = 0; i < cache.num_examples(); ++i) {
        const auto& entries = cache.entries(i);
        if (entries.empty()) throw Error("cache_objective: example has no entries");
        double best = entries.front().value(w);
        for (std::size_t t = 1; t < entries.size(); ++t)
            best = std::max(best, entries[t].value(w));
        total += best;
    }
    return total;
}

}  // namespace partforge
