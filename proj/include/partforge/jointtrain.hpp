#pragma once

#include <string>
#include <vector>

#include "partforge/cache.hpp"

namespace partforge {

namespace detail {

inline Eigen::VectorXd flatten_weights(const PartWeights& u) {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(u.classes()) * u.cols());
    for (int y = 0; y < u.classes(); ++y)
        flat.segment(static_cast<Eigen::Index>(y) * u.cols(), u.cols()) = u.matrix.row(y);
    return flat;
}

inline PartWeights unflatten_weights(const Eigen::VectorXd& flat, int classes, int parts,
                                     int regions) {
    PartWeights u;
    u.parts = parts;
    u.regions = regions;
    u.matrix.resize(classes, static_cast<Eigen::Index>(parts) * regions);
    for (int y = 0; y < classes; ++y)
        u.matrix.row(y) = flat.segment(static_cast<Eigen::Index>(y) * u.matrix.cols(),
                                       u.matrix.cols());
    return u;
}

/// Multi-class hinge as a complete cache in weight space: the hypothesis
/// "example i is class y" has feature +r_i in block y, -r_i in block y_i.
inline Cache response_cache(const ResponseSet& rs) {
    const Eigen::Index d = rs.dim();
    const Eigen::Index dim = static_cast<Eigen::Index>(rs.classes) * d;
    Cache cache(rs.labels, dim);
    for (std::size_t i = 0; i < rs.size(); ++i) {
        for (int y = 0; y < rs.classes; ++y) {
            if (y == rs.labels[i]) continue;
            CacheEntry e;
            e.example = static_cast<int>(i);
            e.loss = 1.0;
            e.key.label = y;
            e.feature = Eigen::VectorXd::Zero(dim);
            e.feature.segment(static_cast<Eigen::Index>(y) * d, d) = rs.responses[i];
            e.feature.segment(static_cast<Eigen::Index>(rs.labels[i]) * d, d) -=
                rs.responses[i];
            cache.insert(std::move(e));
        }
    }
    return cache;
}

}  // namespace detail

/// lambda ||v||^2 + sum_i max{0, 1 + max_{y != y_i} (u_y - u_{y_i}) . r_i}
/// for a flattened weight vector, evaluated through the response cache.
inline double weight_objective(const Eigen::VectorXd& flat_u, const ResponseSet& rs,
                               double lambda_u) {
    return cache_objective(flat_u, detail::response_cache(rs), lambda_u);
}

/// Step 1: trains the part weights against frozen responses, a convex
/// multi-class SVM solved by the cutting-plane machinery. The epsilon
/// schedule tightens until the certified gap is below rel_gap of the
/// objective value.
inline PartWeights step1_train_u(const ResponseSet& rs, double lambda_u,
                                 double rel_gap = 1e-5,
                                 std::vector<QpRoundStats>* qp_stats = nullptr) {
    if (rs.size() == 0) throw Error("step1_train_u: empty response set");
    if (!(lambda_u > 0)) throw Error("step1_train_u: lambda_u must be positive");
    Cache cache = detail::response_cache(rs);
    double epsilon = 0.05 * static_cast<double>(rs.size());
    Eigen::VectorXd w;
    for (int refine = 0; refine < 24; ++refine) {
        CuttingPlaneOptions opts;
        opts.stats = qp_stats;
        CuttingPlaneResult res = cutting_plane(cache, lambda_u, epsilon, opts);
        w = res.w;
        double value = cache_objective(w, cache, lambda_u);
        double target = rel_gap * std::max(value, 1e-12);
        if (epsilon <= target) break;
        epsilon = std::max(target * 0.5, epsilon / 64.0);
    }
    return detail::unflatten_weights(w, rs.classes, rs.parts, rs.regions);
}

/// Step 2: CCCP descent on the filters. Each round rebuilds the bound at the
/// current iterate and minimizes it through the caching solver; candidate
/// iterates that fail to decrease the true objective (epsilon noise from the
/// inner solver) are rejected, so the objective never increases.
inline PartBank step2_minimize_bound(const PartWeights& u, const PartBank& w_init,
                                     const PoolingGrid& grid, const Dataset& dataset,
                                     const JointObjectiveConfig& cfg,
                                     std::vector<CacheRoundStats>* cache_stats = nullptr,
                                     std::vector<QpRoundStats>* qp_stats = nullptr) {
    cfg.validate();
    PartBank bank = w_init;
    double obj = objective_O(u, bank, grid, dataset, cfg);
    Cache warm;
    bool have_warm = false;
    for (int t = 0; t < cfg.cccp_max_iters; ++t) {
        OptimizeWithCacheResult res =
            optimize_with_cache(u, bank, bank, grid, dataset, cfg.lambda_w, cfg,
                                have_warm ? &warm : nullptr, qp_stats);
        if (cache_stats)
            cache_stats->insert(cache_stats->end(), res.stats.begin(), res.stats.end());
        double cand = objective_O(u, res.bank, grid, dataset, cfg);
        if (cand > obj) break;  // within inner-solver noise of a fixed point
        double decrease = obj - cand;
        bank = std::move(res.bank);
        warm = std::move(res.cache);
        have_warm = true;
        obj = cand;
        if (decrease < cfg.rel_tol * std::max(std::abs(obj), 1e-12)) break;
    }
    return bank;
}

struct TraceEntry {
    int iter = 0;
    std::string stage;  // "u" or "w"
    double objective = 0.0;
    double train_accuracy = 0.0;
};

struct JointTrainResult {
    PartWeights u;
    PartBank bank;
    std::vector<TraceEntry> trace;
};

/// Invoked after every outer iteration with the current model state.
using CheckpointFn = std::function<void(int iter, const PartWeights&, const PartBank&)>;

/// Block coordinate descent on O(u,w): alternates exact weight training with
/// CCCP filter updates until the relative decrease of the objective falls
/// below rel_tol. The recorded objective trace is non-increasing; a
/// non-monotone step aborts with a diagnostic.
inline JointTrainResult joint_train(const Dataset& dataset, const PartBank& w_init,
                                    const PoolingGrid& grid, int classes,
                                    const JointObjectiveConfig& cfg,
                                    std::vector<CacheRoundStats>* cache_stats = nullptr,
                                    std::vector<QpRoundStats>* qp_stats = nullptr,
                                    const CheckpointFn& checkpoint = nullptr) {
    cfg.validate();
    if (dataset.empty()) throw Error("joint_train: empty dataset");
    JointTrainResult out;
    out.bank = w_init;

    ResponseSet rs = compute_response_set(dataset, out.bank, grid, classes);
    out.u = step1_train_u(rs, cfg.lambda_u);
    double obj = objective_O(out.u, out.bank, grid, dataset, cfg);
    out.trace.push_back({0, "u", obj, training_accuracy(rs, out.u)});

    for (int iter = 1; iter <= cfg.outer_max_iters; ++iter) {
        double obj_start = obj;

        PartBank bank2 =
            step2_minimize_bound(out.u, out.bank, grid, dataset, cfg, cache_stats, qp_stats);
        double obj_w = objective_O(out.u, bank2, grid, dataset, cfg);
        if (obj_w > obj + 1e-9)
            throw SolverError("joint_train: filter step increased the objective by " +
                              std::to_string(obj_w - obj));
        out.bank = std::move(bank2);
        obj = std::min(obj, obj_w);
        rs = compute_response_set(dataset, out.bank, grid, classes);
        out.trace.push_back({iter, "w", obj, training_accuracy(rs, out.u)});

        PartWeights u2 = step1_train_u(rs, cfg.lambda_u);
        double obj_u = objective_O(u2, out.bank, grid, dataset, cfg);
        if (obj_u <= obj) {
            out.u = std::move(u2);
            obj = obj_u;
        }  // else keep the previous weights: the re-solve landed within solver
           // tolerance above the incumbent
        out.trace.push_back({iter, "u", obj, training_accuracy(rs, out.u)});
        if (checkpoint) checkpoint(iter, out.u, out.bank);

        if (obj_start - obj < cfg.rel_tol * std::max(std::abs(obj_start), 1e-12)) break;
    }
    return out;
}

}  // namespace partforge
