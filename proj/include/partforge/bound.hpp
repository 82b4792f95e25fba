#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "partforge/model.hpp"

namespace partforge {

struct JointObjectiveConfig {
    double lambda_w = 1e-3;
    double lambda_u = 1e-2;
    int outer_max_iters = 20;
    int cccp_max_iters = 10;
    double rel_tol = 1e-4;
    /// Cutting-plane precision is qp_epsilon_scale * (number of examples).
    double qp_epsilon_scale = 1e-3;
    /// The mining loop stops once fresh hypotheses raise the cache bound by
    /// at most this multiple of the QP precision; keeping it above 1 stops
    /// the loop from chasing the inner solver's own noise.
    double mining_gap_factor = 3.0;
    int prune_patience = 10;
    int cache_max_rounds = 50;
    /// Eviction sweeps an entry must stay easy before it is dropped.
    int evict_patience = 2;
    /// Easy-example eviction runs only once the cache holds more than this
    /// many hypotheses per example; below the budget the cache only grows,
    /// which keeps the minimized bound strictly increasing between rounds.
    int cache_budget_per_example = 32;

    void validate() const {
        if (!(lambda_w > 0) || !(lambda_u > 0))
            throw Error("JointObjectiveConfig: lambda_w and lambda_u must be positive");
        if (rel_tol <= 0) throw Error("JointObjectiveConfig: rel_tol must be positive");
    }
};

/// Scoring atoms of one example: the pyramid itself, or the pyramid and its
/// mirror each at weight 1/2 when the representation is flip-averaged.
struct ResponseAtom {
    const FeaturePyramid* pyramid;
    double weight;
};

inline std::vector<ResponseAtom> example_atoms(const LabeledExample& ex) {
    if (ex.mirrored) return {{&ex.pyramid, 0.5}, {&*ex.mirrored, 0.5}};
    return {{&ex.pyramid, 1.0}};
}

/// Per-atom response vectors plus their weighted combination.
struct SlotResponses {
    std::vector<ResponseVector> atoms;
    Eigen::VectorXd combined;
};

inline SlotResponses compute_free_responses(const LabeledExample& ex, const PartBank& bank,
                                            const PoolingGrid& grid) {
    SlotResponses out;
    auto atoms = example_atoms(ex);
    out.atoms.reserve(atoms.size());
    out.combined = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bank.size()) * grid.size());
    for (const ResponseAtom& a : atoms) {
        out.atoms.push_back(response_vector(*a.pyramid, bank, grid));
        // scalar accumulation, bit-identical to the anchored-score path
        const Eigen::VectorXd& v = out.atoms.back().values;
        for (Eigen::Index s = 0; s < v.size(); ++s) out.combined[s] += a.weight * v[s];
    }
    return out;
}

/// Anchors z^(i,w_old): for every example, atom, part and region the argmax
/// location under the frozen filters, together with the frozen weights that
/// define the free/anchored selector masks.
struct BoundContext {
    PartBank w_old;
    PartWeights u;
    /// anchors[i][atom] holds argmax locations (and their w_old scores).
    std::vector<std::vector<ResponseVector>> anchors;

    /// Free selector: slot uses the latent max iff the weight difference for
    /// the ordered class pair (y, y_true) is non-negative.
    bool free_slot(int y, int y_true, Eigen::Index slot) const {
        return u.matrix(y, slot) - u.matrix(y_true, slot) >= 0.0;
    }
};

inline BoundContext build_bound(const PartWeights& u, const PartBank& w_old,
                                const PoolingGrid& grid, const Dataset& dataset) {
    BoundContext ctx;
    ctx.w_old = w_old;
    ctx.u = u;
    ctx.anchors.resize(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        auto atoms = example_atoms(dataset[i]);
        auto& per_atom = ctx.anchors[i];
        per_atom.reserve(atoms.size());
        for (const ResponseAtom& a : atoms)
            per_atom.push_back(response_vector(*a.pyramid, w_old, grid));
    });
    return ctx;
}

/// Weighted anchored scores of the current filters at the context anchors.
inline Eigen::VectorXd anchored_values(const LabeledExample& ex,
                                       const std::vector<ResponseVector>& anchor_atoms,
                                       const PartBank& bank, const PoolingGrid& grid) {
    const int R = grid.size();
    Eigen::VectorXd vals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bank.size()) * R);
    auto atoms = example_atoms(ex);
    for (std::size_t a = 0; a < atoms.size(); ++a) {
        const ResponseVector& anch = anchor_atoms[a];
        for (int j = 0; j < bank.size(); ++j)
            for (int rho = 0; rho < R; ++rho) {
                auto slot = anch.slot(j, rho);
                const auto& loc = anch.argmax[static_cast<std::size_t>(slot)];
                if (!loc) continue;  // empty region: sentinel 0
                vals[slot] += atoms[a].weight *
                              part_score(*atoms[a].pyramid, *loc,
                                         bank.parts[static_cast<std::size_t>(j)]);
            }
    }
    return vals;
}

namespace detail {

/// (u_y - u_{y_true}) . vals with per-slot values chosen by `pick`
/// (free vs anchored). Zero-difference slots contribute nothing.
template <typename PickValue>
inline double pair_margin(const PartWeights& u, int y, int y_true, PickValue&& pick) {
    double margin = 0.0;
    for (Eigen::Index s = 0; s < u.cols(); ++s) {
        double diff = u.matrix(y, s) - u.matrix(y_true, s);
        if (diff == 0.0) continue;
        margin += diff * pick(s, diff);
    }
    return margin;
}

/// max over rivals; -inf when there is no rival class.
template <typename PickValue>
inline double max_rival_margin(const PartWeights& u, int y_true, PickValue&& pick) {
    double best = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < u.classes(); ++y) {
        if (y == y_true) continue;
        double margin = pair_margin(u, y, y_true, pick);
        if (margin > best) best = margin;
    }
    return best;
}

}  // namespace detail

/// Regularized multi-class hinge objective
/// O(u,w) = lw ||w||^2 + lu ||u||^2 + sum_i max{0, 1 + max_{y != y_i} (u_y - u_{y_i}) . r(x_i, w)}.
inline double objective_O(const PartWeights& u, const PartBank& bank, const PoolingGrid& grid,
                          const Dataset& dataset, const JointObjectiveConfig& cfg) {
    u.validate();
    bank.validate();
    Eigen::VectorXd w = bank.to_flat();
    std::vector<double> hinge(dataset.size(), 0.0);
    parallel_for(dataset.size(), [&](std::size_t i) {
        SlotResponses r = compute_free_responses(dataset[i], bank, grid);
        double margin = detail::max_rival_margin(
            u, dataset[i].label, [&](Eigen::Index s, double) { return r.combined[s]; });
        hinge[i] = std::max(0.0, 1.0 + margin);
    });
    double sum = 0.0;
    for (double h : hinge) sum += h;
    return cfg.lambda_w * w.squaredNorm() + cfg.lambda_u * u.matrix.squaredNorm() + sum;
}

/// Convex upper bound on O(u, .) - lu ||u||^2, tight at ctx.w_old: slots whose
/// weight difference is negative are pinned to the anchored scores.
inline double bound_B(const PartBank& bank, const BoundContext& ctx, const PoolingGrid& grid,
                      const Dataset& dataset, double lambda_w) {
    Eigen::VectorXd w = bank.to_flat();
    std::vector<double> hinge(dataset.size(), 0.0);
    parallel_for(dataset.size(), [&](std::size_t i) {
        SlotResponses r = compute_free_responses(dataset[i], bank, grid);
        Eigen::VectorXd anch = anchored_values(dataset[i], ctx.anchors[i], bank, grid);
        double margin = detail::max_rival_margin(
            ctx.u, dataset[i].label, [&](Eigen::Index s, double diff) {
                return diff >= 0.0 ? r.combined[s] : anch[s];
            });
        hinge[i] = std::max(0.0, 1.0 + margin);
    });
    double sum = 0.0;
    for (double h : hinge) sum += h;
    return lambda_w * w.squaredNorm() + sum;
}

}  // namespace partforge
