#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "partforge/cache_types.hpp"

namespace partforge {

/// One-slack constraint: a choice of one cache entry per example, kept in
/// aggregate form. phi(omega) = (2 lambda)^(-1/2) * feature_sum and
/// b_omega = -delta_sum.
struct Constraint {
    std::vector<std::uint64_t> entry_keys;  // per-example provenance hashes
    Eigen::VectorXd feature_sum;            // sum_i f_i
    double delta_sum = 0.0;
    int zero_rounds = 0;  // consecutive rounds with a zero multiplier

    double loss(const Eigen::VectorXd& w) const { return w.dot(feature_sum) + delta_sum; }

    bool same_choice(const Constraint& o) const { return entry_keys == o.entry_keys; }
};

inline double constraint_loss(const Constraint& omega, const Eigen::VectorXd& w) {
    return omega.loss(w);
}

/// Exact argmax of loss(omega, w) over the product set of per-example entry
/// choices: the loss decomposes, so each example picks its best entry
/// independently (ties to the lowest provenance key).
inline Constraint most_violated_constraint(const Cache& cache, const Eigen::VectorXd& w) {
    Constraint out;
    out.feature_sum = Eigen::VectorXd::Zero(w.size());
    out.entry_keys.reserve(cache.num_examples());
    std::vector<const CacheEntry*> picks(cache.num_examples(), nullptr);
    parallel_for(cache.num_examples(), [&](std::size_t i) {
        const auto& entries = cache.entries(i);
        if (entries.empty()) throw Error("most_violated_constraint: example has no entries");
        const CacheEntry* best = &entries.front();
        double best_v = best->value(w);
        for (std::size_t t = 1; t < entries.size(); ++t) {
            double v = entries[t].value(w);
            if (v > best_v || (v == best_v && entries[t].key < best->key)) {
                best = &entries[t];
                best_v = v;
            }
        }
        picks[i] = best;
    });
    for (std::size_t i = 0; i < cache.num_examples(); ++i) {
        out.feature_sum += picks[i]->feature;
        out.delta_sum += picks[i]->loss;
        out.entry_keys.push_back(picks[i]->key.hash());
    }
    return out;
}

/// Dual state of the working-set QP
///   min 0.5 a' M a + a' b   s.t.  a >= 0, sum a <= 1,
/// with M the Gram matrix of the scaled constraint features.
struct DualState {
    Eigen::MatrixXd M;
    Eigen::VectorXd b;
    Eigen::VectorXd alpha;
    double xi = 0.0;
};

namespace detail {

inline double dual_objective(const Eigen::MatrixXd& M, const Eigen::VectorXd& b,
                             const Eigen::VectorXd& a) {
    return 0.5 * a.dot(M * a) + a.dot(b);
}

/// Active-set enumeration over the simplex-with-slack formulation; exact for
/// small systems and the built-in oracle for the exchange solver.
inline Eigen::VectorXd solve_dual_active_set(const Eigen::MatrixXd& M,
                                             const Eigen::VectorXd& b) {
    const Eigen::Index K = b.size();
    // variable K is the slack of sum alpha <= 1
    const Eigen::Index n = K + 1;
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
    Q.topLeftCorner(K, K) = M;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    c.head(K) = b;

    double best_obj = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best = Eigen::VectorXd::Zero(K);
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        std::vector<Eigen::Index> act;
        for (Eigen::Index i = 0; i < n; ++i)
            if (mask & (1u << i)) act.push_back(i);
        const Eigen::Index p = static_cast<Eigen::Index>(act.size());
        // KKT system for: min 0.5 x'Qx + c'x  s.t. sum x = 1 over the active set
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(p + 1, p + 1);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p + 1);
        for (Eigen::Index r = 0; r < p; ++r) {
            for (Eigen::Index cc = 0; cc < p; ++cc) kkt(r, cc) = Q(act[static_cast<std::size_t>(r)], act[static_cast<std::size_t>(cc)]);
            kkt(r, p) = 1.0;
            kkt(p, r) = 1.0;
            rhs[r] = -c[act[static_cast<std::size_t>(r)]];
        }
        rhs[p] = 1.0;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
        if (!lu.isInvertible()) continue;
        Eigen::VectorXd sol = lu.solve(rhs);
        bool feasible = true;
        for (Eigen::Index r = 0; r < p; ++r)
            if (sol[r] < -1e-10) {
                feasible = false;
                break;
            }
        if (!feasible) continue;
        Eigen::VectorXd a = Eigen::VectorXd::Zero(K);
        for (Eigen::Index r = 0; r < p; ++r)
            if (act[static_cast<std::size_t>(r)] < K)
                a[act[static_cast<std::size_t>(r)]] = std::max(0.0, sol[r]);
        double obj = dual_objective(M, b, a);
        if (obj < best_obj) {
            best_obj = obj;
            best = a;
        }
    }
    return best;
}

/// Pairwise-exchange (SMO-style) descent on the same formulation.
inline Eigen::VectorXd solve_dual_exchange(const Eigen::MatrixXd& M, const Eigen::VectorXd& b,
                                           const Eigen::VectorXd& warm, double tol,
                                           std::size_t max_iters) {
    const Eigen::Index K = b.size();
    Eigen::VectorXd a = warm;
    double slack = 1.0 - a.sum();
    if (slack < 0) {  // renormalize an infeasible warm start
        a.setZero();
        slack = 1.0;
    }
    Eigen::VectorXd g = M * a + b;  // gradient over the constraint block; slack grad = 0
    const std::size_t refresh = std::max<std::size_t>(512, static_cast<std::size_t>(K));
    for (std::size_t it = 0; it < max_iters; ++it) {
        if (it && it % refresh == 0) g = M * a + b;  // shed incremental drift
        // most violating pair over {0..K-1, slack}
        Eigen::Index lo = -1;
        double glo = 0.0;  // slack direction has gradient 0
        for (Eigen::Index i = 0; i < K; ++i)
            if (g[i] < glo) {
                glo = g[i];
                lo = i;
            }
        Eigen::Index hi = -1;
        double ghi = (slack > 0.0) ? 0.0 : -std::numeric_limits<double>::infinity();
        bool hi_is_slack = slack > 0.0;
        for (Eigen::Index i = 0; i < K; ++i)
            if (a[i] > 0.0 && g[i] > ghi) {
                ghi = g[i];
                hi = i;
                hi_is_slack = false;
            }
        if (ghi - glo <= tol) break;

        // move t mass from hi to lo along the feasible pair direction
        double curv;
        double avail;
        if (lo < 0) {
            // receiving side is the slack variable
            curv = hi_is_slack ? 0.0 : M(hi, hi);
            avail = hi_is_slack ? slack : a[hi];
        } else if (hi_is_slack) {
            curv = M(lo, lo);
            avail = slack;
        } else {
            curv = M(lo, lo) + M(hi, hi) - 2.0 * M(lo, hi);
            avail = a[hi];
        }
        double t = (curv > 1e-300) ? (ghi - glo) / curv : avail;
        t = std::min(t, avail);
        if (!(t > 0.0) || t * (ghi - glo) < 1e-30) break;  // no representable progress

        if (lo >= 0) {
            a[lo] += t;
            g += t * M.col(lo);
        } else {
            slack += t;
        }
        if (hi_is_slack) {
            slack -= t;
        } else {
            a[hi] -= t;
            g -= t * M.col(hi);
        }
    }
    return a;
}

/// Primal active-set refinement on the slack formulation
///   min 0.5 x'Qx + c'x  s.t.  x >= 0, sum x = 1  (x = [alpha; slack]).
/// Finishes an approximate feasible iterate to exact KKT by alternating
/// equality-constrained solves with add/drop pivots.
inline Eigen::VectorXd active_set_refine(const Eigen::MatrixXd& Q, const Eigen::VectorXd& c,
                                         Eigen::VectorXd x) {
    const Eigen::Index n = c.size();
    const double tiny = 1e-12;
    std::vector<bool> active(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) active[static_cast<std::size_t>(i)] = x[i] > tiny;
    if (std::none_of(active.begin(), active.end(), [](bool b) { return b; }))
        active[static_cast<std::size_t>(n - 1)] = true;

    const double ridge =
        1e-12 * (1.0 + Q.diagonal().cwiseAbs().maxCoeff() + c.cwiseAbs().maxCoeff());
    for (int pivot = 0; pivot < 6 * static_cast<int>(n) + 20; ++pivot) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < n; ++i)
            if (active[static_cast<std::size_t>(i)]) idx.push_back(i);
        const Eigen::Index p = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(p + 1, p + 1);
        Eigen::VectorXd rhs(p + 1);
        for (Eigen::Index r = 0; r < p; ++r) {
            for (Eigen::Index cc = 0; cc < p; ++cc)
                kkt(r, cc) = Q(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(cc)]);
            kkt(r, r) += ridge;  // keeps duplicate constraints solvable
            kkt(r, p) = 1.0;
            kkt(p, r) = 1.0;
            rhs[r] = -c[idx[static_cast<std::size_t>(r)]];
        }
        rhs[p] = 1.0;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
        if (!lu.isInvertible()) break;
        Eigen::VectorXd sol = lu.solve(rhs);

        // walk toward the equality solution until a variable hits zero
        double t_max = 1.0;
        Eigen::Index blocker = -1;
        for (Eigen::Index r = 0; r < p; ++r) {
            double cur = x[idx[static_cast<std::size_t>(r)]];
            double dst = sol[r];
            if (dst < -tiny && cur - dst > tiny) {
                double t = cur / (cur - dst);
                if (t < t_max) {
                    t_max = t;
                    blocker = idx[static_cast<std::size_t>(r)];
                }
            }
        }
        Eigen::VectorXd x_new = x;
        for (Eigen::Index r = 0; r < p; ++r) {
            Eigen::Index i = idx[static_cast<std::size_t>(r)];
            x_new[i] = x[i] + t_max * (sol[r] - x[i]);
            if (x_new[i] < 0) x_new[i] = 0;
        }
        x = x_new;
        if (blocker >= 0) {
            active[static_cast<std::size_t>(blocker)] = false;
            continue;
        }
        // at the equality optimum of the active set: check outside gradients
        Eigen::VectorXd g = Q * x + c;
        double nu = sol[p];
        Eigen::Index worst = -1;
        double worst_v = -1e-10 * std::max(1.0, g.cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < n; ++i) {
            if (active[static_cast<std::size_t>(i)]) continue;
            double red = g[i] + nu;  // stationarity residual for sum x = 1
            if (red < worst_v) {
                worst_v = red;
                worst = i;
            }
        }
        if (worst < 0) break;
        active[static_cast<std::size_t>(worst)] = true;
    }
    for (Eigen::Index i = 0; i < n; ++i)
        if (x[i] < 0) x[i] = 0;
    return x;
}

}  // namespace detail

/// Solves the dual QP to KKT stationarity and recovers the slack
/// xi = max(0, max_omega loss(omega, w(alpha))) = max(0, max(-M a - b)).
inline DualState solve_dual(const Eigen::MatrixXd& M, const Eigen::VectorXd& b,
                            const Eigen::VectorXd* warm_start = nullptr) {
    const Eigen::Index K = b.size();
    if (M.rows() != K || M.cols() != K) throw Error("solve_dual: shape mismatch");
    DualState st;
    st.M = M;
    st.b = b;
    if (K == 0) {
        st.alpha = Eigen::VectorXd();
        st.xi = 0.0;
        return st;
    }
    double scale = std::max(1.0, std::max(M.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()));
    if (K <= 64) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues().minCoeff() < -1e-9 * scale)
            throw SolverError("solve_dual: M is not PSD within tolerance");
    }

    if (K <= 3) {
        st.alpha = detail::solve_dual_active_set(M, b);
    } else {
        Eigen::VectorXd warm = (warm_start && warm_start->size() == K)
                                   ? *warm_start
                                   : Eigen::VectorXd::Zero(K);
        std::size_t max_iters = 500 * static_cast<std::size_t>(K) + 50000;
        st.alpha = detail::solve_dual_exchange(M, b, warm, 1e-10 * scale, max_iters);

        // active-set refinement finishes the exchange iterate to exact KKT
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(K + 1, K + 1);
        Q.topLeftCorner(K, K) = M;
        Eigen::VectorXd c = Eigen::VectorXd::Zero(K + 1);
        c.head(K) = b;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(K + 1);
        x.head(K) = st.alpha;
        x[K] = std::max(0.0, 1.0 - st.alpha.sum());
        x = detail::active_set_refine(Q, c, x);
        if (detail::dual_objective(M, b, Eigen::VectorXd(x.head(K))) <=
            detail::dual_objective(M, b, st.alpha))
            st.alpha = x.head(K);

        // KKT sanity: every support gradient within tolerance of the minimum
        Eigen::VectorXd g = M * st.alpha + b;
        double slack = 1.0 - st.alpha.sum();
        double lo = slack > 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < K; ++i) lo = std::min(lo, g[i]);
        double hi = slack > 1e-12 ? 0.0 : -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < K; ++i)
            if (st.alpha[i] > 1e-10) hi = std::max(hi, g[i]);
        if (hi - lo > 1e-7 * scale)
            throw SolverError("solve_dual: iterations exhausted before KKT (K=" +
                              std::to_string(K) + ", gap=" + std::to_string(hi - lo) +
                              ", scale=" + std::to_string(scale) + ")");
    }
    Eigen::VectorXd viol = -(M * st.alpha) - b;
    st.xi = std::max(0.0, viol.size() ? viol.maxCoeff() : 0.0);
    return st;
}

/// w = -(1 / (2 lambda)) sum_omega alpha_omega sum_i f_{omega,i}.
inline Eigen::VectorXd recover_primal(const Eigen::VectorXd& alpha,
                                      const std::vector<Constraint>& working_set,
                                      double lambda, Eigen::Index dim) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
    for (std::size_t t = 0; t < working_set.size(); ++t)
        if (alpha[static_cast<Eigen::Index>(t)] != 0.0)
            w += alpha[static_cast<Eigen::Index>(t)] * working_set[t].feature_sum;
    w *= -1.0 / (2.0 * lambda);
    return w;
}

struct QpRoundStats {
    int round = 0;
    int working_set = 0;
    double dual_obj = 0.0;
    double xi = 0.0;
    double violation = 0.0;
    int pruned = 0;
    double alpha_sum = 0.0;
    double alpha_min = 0.0;
};

struct CuttingPlaneResult {
    Eigen::VectorXd w;
    std::vector<Constraint> working_set;
    Eigen::VectorXd alpha;
    double xi = 0.0;
    int rounds = 0;
};

struct CuttingPlaneOptions {
    int max_rounds = 1000;
    int prune_patience = 10;
    std::vector<QpRoundStats>* stats = nullptr;
};

/// Grows a working set by most-violated constraints until a fresh constraint
/// violates the current slack by at most epsilon; prunes constraints whose
/// multiplier stays at zero.
inline CuttingPlaneResult cutting_plane(const Cache& cache, double lambda, double epsilon,
                                        const CuttingPlaneOptions& opts = {}) {
    if (!(epsilon > 0.0)) throw Error("cutting_plane: epsilon must be positive");
    if (!(lambda > 0.0)) throw Error("cutting_plane: lambda must be positive");
    if (cache.num_examples() == 0) throw Error("cutting_plane: empty cache");
    const Eigen::Index dim = cache.entries(0).front().feature.size();

    CuttingPlaneResult res;
    std::vector<Constraint>& W = res.working_set;
    Eigen::MatrixXd M(0, 0);
    Eigen::VectorXd b(0);
    Eigen::VectorXd alpha(0);
    const double inv2l = 1.0 / (2.0 * lambda);

    for (int round = 1; round <= opts.max_rounds; ++round) {
        DualState st = solve_dual(M, b, &alpha);
        alpha = st.alpha;
        res.w = recover_primal(alpha, W, lambda, dim);
        res.xi = st.xi;
        res.rounds = round;

        // prune long-inactive constraints
        int pruned = 0;
        {
            std::vector<std::size_t> keep;
            for (std::size_t t = 0; t < W.size(); ++t) {
                if (alpha[static_cast<Eigen::Index>(t)] <= 1e-12)
                    ++W[t].zero_rounds;
                else
                    W[t].zero_rounds = 0;
                if (W[t].zero_rounds >= opts.prune_patience)
                    ++pruned;
                else
                    keep.push_back(t);
            }
            if (pruned > 0) {
                std::vector<Constraint> w2;
                Eigen::MatrixXd m2(static_cast<Eigen::Index>(keep.size()),
                                   static_cast<Eigen::Index>(keep.size()));
                Eigen::VectorXd b2(static_cast<Eigen::Index>(keep.size()));
                Eigen::VectorXd a2(static_cast<Eigen::Index>(keep.size()));
                for (std::size_t r = 0; r < keep.size(); ++r) {
                    w2.push_back(std::move(W[keep[r]]));
                    b2[static_cast<Eigen::Index>(r)] = b[static_cast<Eigen::Index>(keep[r])];
                    a2[static_cast<Eigen::Index>(r)] = alpha[static_cast<Eigen::Index>(keep[r])];
                    for (std::size_t c = 0; c < keep.size(); ++c)
                        m2(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                            M(static_cast<Eigen::Index>(keep[r]), static_cast<Eigen::Index>(keep[c]));
                }
                W = std::move(w2);
                M = std::move(m2);
                b = std::move(b2);
                alpha = std::move(a2);
            }
        }

        Constraint omega = most_violated_constraint(cache, res.w);
        double viol = omega.loss(res.w);
        if (opts.stats)
            opts.stats->push_back({round, static_cast<int>(W.size()),
                                   detail::dual_objective(M, b, alpha), st.xi, viol, pruned,
                                   alpha.size() ? alpha.sum() : 0.0,
                                   alpha.size() ? alpha.minCoeff() : 0.0});
        if (viol <= st.xi + epsilon) {
            res.alpha = alpha;
            return res;
        }

        // extend M and b with the new constraint; drift check on a sampled
        // entry guards the incremental Gram updates
        const Eigen::Index K = static_cast<Eigen::Index>(W.size());
        if (K > 0) {
            double fresh = W[0].feature_sum.dot(W[0].feature_sum) * inv2l;
            if (std::abs(M(0, 0) - fresh) > 1e-8 * std::max(1.0, std::abs(fresh))) {
                for (Eigen::Index r = 0; r < K; ++r)
                    for (Eigen::Index c = 0; c < K; ++c)
                        M(r, c) = W[static_cast<std::size_t>(r)].feature_sum.dot(
                                      W[static_cast<std::size_t>(c)].feature_sum) * inv2l;
            }
        }
        M.conservativeResize(K + 1, K + 1);
        b.conservativeResize(K + 1);
        alpha.conservativeResize(K + 1);
        alpha[K] = 0.0;
        for (Eigen::Index t = 0; t < K; ++t) {
            double v = omega.feature_sum.dot(W[static_cast<std::size_t>(t)].feature_sum) * inv2l;
            M(K, t) = v;
            M(t, K) = v;
        }
        M(K, K) = omega.feature_sum.squaredNorm() * inv2l;
        b[K] = -omega.delta_sum;
        W.push_back(std::move(omega));
    }
    throw SolverError("cutting_plane: round cap reached without certificate");
}

}  // namespace partforge
