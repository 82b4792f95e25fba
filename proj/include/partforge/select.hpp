#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "partforge/jointtrain.hpp"

namespace partforge {

struct GroupLassoConfig {
    double lambda = 1.0;
    /// Smoothing radius for the rounded group norms; <= 0 selects
    /// 1e-3 times the median group norm of an unregularized warm-up run.
    double epsilon_round = 0.0;
    /// Step schedule eta_t = eta0 / (1 + t / t0).
    double eta0 = 0.1;
    double t0 = 200.0;
    int epochs = 40;
    int batch_size = 16;
    std::uint64_t rng_seed = 0;
    /// A part counts as selected when its group norm exceeds this; <= 0
    /// selects twice the (resolved) smoothing radius.
    double zero_threshold = 0.0;

    GroupLassoConfig with_lambda(double l) const {
        GroupLassoConfig c = *this;
        c.lambda = l;
        return c;
    }
};

/// rho_j: l2 norm over all entries of part j (every class, every region
/// column of that part).
inline Eigen::VectorXd group_norms(const PartWeights& u) {
    Eigen::VectorXd rho(u.parts);
    for (int j = 0; j < u.parts; ++j)
        rho[j] = u.matrix.middleCols(static_cast<Eigen::Index>(j) * u.regions, u.regions)
                     .norm();
    return rho;
}

/// Rounded norm: rho above epsilon, the matching quadratic below, continuous
/// and once-differentiable at the junction.
inline double smoothed_norm(double rho, double eps) {
    if (!(eps > 0)) throw Error("smoothed_norm: eps must be positive");
    if (rho > eps) return rho;
    return rho * rho / (2.0 * eps) + eps / 2.0;
}

/// lambda sum_j tau_j + sum_i max{0, max_{y != y_i} (u_y - u_{y_i}) . r_i + 1}.
inline double selection_objective(const PartWeights& u, const ResponseSet& rs, double lambda,
                                  double eps) {
    if (u.matrix.cols() != rs.dim()) throw Error("selection_objective: dimension mismatch");
    Eigen::VectorXd rho = group_norms(u);
    double penalty = 0.0;
    for (int j = 0; j < u.parts; ++j) penalty += smoothed_norm(rho[j], eps);
    double hinge = 0.0;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        double margin = detail::max_rival_margin(
            u, rs.labels[i], [&](Eigen::Index s, double) { return rs.responses[i][s]; });
        hinge += std::max(0.0, margin + 1.0);
    }
    return lambda * penalty + hinge;
}

/// Subgradient of the selection objective restricted to `batch`: the penalty
/// gradient uses u/rho on the linear branch and u/eps on the quadratic
/// branch; each violated example contributes through its single maximizing
/// rival (ties to the lowest class index).
inline Eigen::MatrixXd selection_subgradient(const PartWeights& u, const ResponseSet& rs,
                                             const std::vector<std::size_t>& batch,
                                             double lambda, double eps) {
    if (batch.empty()) throw Error("selection_subgradient: empty batch");
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(u.matrix.rows(), u.matrix.cols());
    Eigen::VectorXd rho = group_norms(u);
    for (int j = 0; j < u.parts; ++j) {
        double denom = rho[j] > eps ? rho[j] : eps;
        grad.middleCols(static_cast<Eigen::Index>(j) * u.regions, u.regions) =
            (lambda / denom) *
            u.matrix.middleCols(static_cast<Eigen::Index>(j) * u.regions, u.regions);
    }
    for (std::size_t i : batch) {
        const Eigen::VectorXd& r = rs.responses[i];
        int y_true = rs.labels[i];
        int best_y = -1;
        double best_m = -std::numeric_limits<double>::infinity();
        for (int y = 0; y < u.classes(); ++y) {
            if (y == y_true) continue;
            double m = detail::pair_margin(u, y, y_true,
                                           [&](Eigen::Index s, double) { return r[s]; });
            if (m > best_m) {
                best_m = m;
                best_y = y;
            }
        }
        if (best_y >= 0 && best_m + 1.0 > 0.0) {
            grad.row(best_y) += r.transpose();
            grad.row(y_true) -= r.transpose();
        }
    }
    return grad;
}

struct TrainSelectionResult {
    PartWeights u;
    double epsilon = 0.0;
    double zero_threshold = 0.0;
    std::vector<double> epoch_objectives;
};

namespace detail {

inline PartWeights zero_weights(const ResponseSet& rs) {
    PartWeights u;
    u.parts = rs.parts;
    u.regions = rs.regions;
    u.matrix = Eigen::MatrixXd::Zero(rs.classes, rs.dim());
    return u;
}

/// One pass of minibatch SGD over a shuffled example stream. Steps follow an
/// unbiased estimate of the per-example-normalized objective (full sum over
/// k), with the rate capped so the quadratic-branch curvature lambda/(eps k)
/// cannot blow the iterate up at large lambda.
inline void sgd_epoch(PartWeights& u, const ResponseSet& rs, double lambda, double eps,
                      const GroupLassoConfig& cfg, Rng& rng, long& step,
                      Eigen::MatrixXd* average) {
    std::vector<std::size_t> order(rs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_index(i)]);

    const std::size_t B = std::max<std::size_t>(
        1, std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), rs.size()));
    const double k = static_cast<double>(rs.size());
    // normalize the rate by the response energy so the schedule is stable
    // across feature scalings
    double r2 = 0.0;
    for (const auto& r : rs.responses) r2 += r.squaredNorm();
    const double scale = std::max(1.0, r2 / k);
    std::vector<std::size_t> batch;
    for (std::size_t at = 0; at < order.size(); at += B) {
        batch.assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(at + B, order.size())));
        Eigen::MatrixXd hinge = selection_subgradient(u, rs, batch, 0.0, eps);
        double eta = cfg.eta0 / ((1.0 + static_cast<double>(step) / cfg.t0) * scale);
        u.matrix -= (eta / static_cast<double>(batch.size())) * hinge;
        if (lambda > 0) {
            // penalty gradient step applied as the equivalent per-group
            // multiplicative shrink, clamped at zero so any lambda is stable
            Eigen::VectorXd rho = group_norms(u);
            for (int j = 0; j < u.parts; ++j) {
                double factor =
                    1.0 - eta * lambda / (k * std::max(rho[j], eps));
                u.matrix.middleCols(static_cast<Eigen::Index>(j) * u.regions, u.regions) *=
                    std::max(0.0, factor);
            }
        }
        ++step;
        if (average) *average += u.matrix;
    }
}

}  // namespace detail

/// Unregularized reference fit: a plain hinge run from the zero matrix. Its
/// group norms set the scale for the smoothing radius, and it is the starting
/// iterate for the regularized runs, so shrinkage is measured against what an
/// unpenalized model would use.
inline PartWeights selection_warm_start(const ResponseSet& rs, const GroupLassoConfig& cfg) {
    PartWeights warm = detail::zero_weights(rs);
    GroupLassoConfig warm_cfg = cfg;
    Rng warm_rng = Rng(cfg.rng_seed).split(0xA0);
    long warm_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch)
        detail::sgd_epoch(warm, rs, 0.0, 1.0, warm_cfg, warm_rng, warm_step, nullptr);
    return warm;
}

/// SGD on the smoothed group-lasso objective starting from the unregularized
/// fit. The objective over epochs is kept non-increasing (within stochastic
/// noise) by restoring the best iterate and halving the step when an epoch
/// regresses; the returned weights average the final epoch's iterates.
inline TrainSelectionResult train_selection(const ResponseSet& rs, const GroupLassoConfig& cfg,
                                            const PartWeights* warm_start = nullptr) {
    if (rs.size() == 0) throw Error("train_selection: empty response set");
    if (cfg.lambda < 0) throw Error("train_selection: lambda must be non-negative");
    Rng rng(cfg.rng_seed);

    TrainSelectionResult out;
    PartWeights u;
    if (warm_start)
        u = *warm_start;
    else
        u = selection_warm_start(rs, cfg);

    // resolve the smoothing radius against the unregularized scale
    double eps = cfg.epsilon_round;
    if (!(eps > 0)) {
        Eigen::VectorXd rho = group_norms(u);
        std::vector<double> sorted(rho.data(), rho.data() + rho.size());
        std::sort(sorted.begin(), sorted.end());
        double median = sorted[sorted.size() / 2];
        eps = std::max(1e-3 * median, 1e-9);
    }
    out.epsilon = eps;
    out.zero_threshold = cfg.zero_threshold > 0 ? cfg.zero_threshold : 2.0 * eps;
    double initial = selection_objective(u, rs, cfg.lambda, eps);
    double best_obj = initial;
    PartWeights best_u = u;
    GroupLassoConfig run_cfg = cfg;
    Rng sgd_rng = rng.split(0xB0);
    long step = 0;
    out.epoch_objectives.push_back(initial);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::sgd_epoch(u, rs, cfg.lambda, eps, run_cfg, sgd_rng, step, nullptr);
        double obj = selection_objective(u, rs, cfg.lambda, eps);
        if (obj > 10.0 * std::max(initial, 1e-12))
            throw Error("train_selection: objective diverged (" + std::to_string(obj) +
                        " vs initial " + std::to_string(initial) +
                        "); decrease eta0 or increase the decay");
        if (obj > best_obj * (1.0 + 1e-3)) {
            u = best_u;  // regression beyond noise: restore and damp the step
            run_cfg.eta0 *= 0.5;
            obj = best_obj;
        } else if (obj < best_obj) {
            best_obj = obj;
            best_u = u;
        }
        out.epoch_objectives.push_back(best_obj);
    }

    // averaging pass over one final epoch
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(u.matrix.rows(), u.matrix.cols());
    long steps_before = step;
    detail::sgd_epoch(u, rs, cfg.lambda, eps, run_cfg, sgd_rng, step, &avg);
    if (step > steps_before) {
        PartWeights averaged = u;
        averaged.matrix = avg / static_cast<double>(step - steps_before);
        double avg_obj = selection_objective(averaged, rs, cfg.lambda, eps);
        if (avg_obj <= best_obj) {
            best_obj = avg_obj;
            best_u = averaged;
        }
    }
    out.epoch_objectives.push_back(best_obj);
    out.u = best_u;
    return out;
}

/// Indices of parts whose group norm exceeds the threshold, original order.
inline std::vector<int> select_parts(const PartWeights& u, double zero_threshold) {
    Eigen::VectorXd rho = group_norms(u);
    std::vector<int> out;
    for (int j = 0; j < u.parts; ++j)
        if (rho[j] > zero_threshold) out.push_back(j);
    return out;
}

struct LambdaSweepResult {
    double lambda = 0.0;
    std::vector<int> selected;
    PartWeights u;
    double epsilon = 0.0;
    double zero_threshold = 0.0;
    bool hit_target = false;
    /// (lambda, sorted group norms) per training, for the sparsity profile.
    std::vector<std::pair<double, Eigen::VectorXd>> profiles;
};

/// Bisection on log lambda until the selected-part count lands in
/// [target, 1.2 * target], up to 20 trainings; returns the closest result
/// (hit_target false) when the cap is reached.
inline LambdaSweepResult lambda_sweep(const ResponseSet& rs, int target_m,
                                      const GroupLassoConfig& cfg) {
    if (target_m < 0 || target_m > rs.parts)
        throw Error("lambda_sweep: target out of range");
    const int cap = 20;
    const int hi_bound = std::max(target_m, static_cast<int>(std::floor(1.2 * target_m)));

    LambdaSweepResult best;
    int best_gap = std::numeric_limits<int>::max();
    int trainings = 0;

    auto run = [&](double lambda) {
        TrainSelectionResult r = train_selection(rs, cfg.with_lambda(lambda));
        ++trainings;
        std::vector<int> sel = select_parts(r.u, r.zero_threshold);
        Eigen::VectorXd rho = group_norms(r.u);
        std::sort(rho.data(), rho.data() + rho.size(), std::greater<double>());
        best.profiles.emplace_back(lambda, rho);
        int count = static_cast<int>(sel.size());
        int gap = count < target_m ? target_m - count : std::max(0, count - hi_bound);
        if (gap < best_gap) {
            best_gap = gap;
            best.lambda = lambda;
            best.selected = std::move(sel);
            best.u = std::move(r.u);
            best.epsilon = r.epsilon;
            best.zero_threshold = r.zero_threshold;
            best.hit_target = gap == 0;
        }
        return count;
    };

    double lo = 1.0, hi = 1.0;  // lo: count >= target, hi: count <= 1.2*target
    int c = run(1.0);
    if (c >= target_m && c <= hi_bound) return best;
    if (c > hi_bound) {
        while (trainings < cap) {
            hi *= 8.0;
            int ch = run(hi);
            if (ch <= hi_bound) {
                if (ch >= target_m) return best;
                break;
            }
            lo = hi;
        }
    } else {
        while (trainings < cap) {
            lo /= 8.0;
            int cl = run(lo);
            if (cl >= target_m) {
                if (cl <= hi_bound) return best;
                break;
            }
            hi = lo;
        }
    }
    while (trainings < cap) {
        double mid = std::sqrt(lo * hi);
        int cm = run(mid);
        if (cm >= target_m && cm <= hi_bound) return best;
        if (cm > hi_bound)
            lo = mid;
        else
            hi = mid;
    }
    return best;  // closest achieved; hit_target reports the miss
}

/// Retrains the weights of the surviving parts with plain l2 regularization.
inline ResponseSet restrict_responses(const ResponseSet& rs, const std::vector<int>& parts) {
    if (parts.empty()) throw Error("restrict_responses: empty part selection");
    ResponseSet out;
    out.labels = rs.labels;
    out.classes = rs.classes;
    out.parts = static_cast<int>(parts.size());
    out.regions = rs.regions;
    out.responses.resize(rs.size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
        Eigen::VectorXd r(out.dim());
        for (std::size_t t = 0; t < parts.size(); ++t)
            r.segment(static_cast<Eigen::Index>(t) * rs.regions, rs.regions) =
                rs.responses[i].segment(
                    static_cast<Eigen::Index>(parts[t]) * rs.regions, rs.regions);
        out.responses[i] = std::move(r);
    }
    return out;
}

inline PartWeights retrain_l2(const ResponseSet& rs, const std::vector<int>& selected,
                              double lambda_u) {
    if (selected.empty()) throw Error("retrain_l2: nothing selected");
    return step1_train_u(restrict_responses(rs, selected), lambda_u);
}

}  // namespace partforge
