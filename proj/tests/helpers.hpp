#pragma once

// Shared test fixtures and independent oracles. Everything here recomputes
// through its own scalar loops so it stays independent of the library's
// scoring and solver paths.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "partforge/partforge.hpp"

namespace pf = partforge;

namespace testkit {

inline pf::FeaturePyramid random_pyramid(pf::Rng& rng, int levels, int rows, int cols, int dim,
                                         double scale_step = 0.5) {
    pf::FeaturePyramid pyr;
    pyr.scales_per_octave = 1;
    double scale = 1.0;
    for (int l = 0; l < levels; ++l) {
        pf::Level lv;
        lv.rows = std::max(1, rows - l);
        lv.cols = std::max(1, cols - l);
        lv.dim = dim;
        lv.scale = static_cast<float>(scale);
        scale *= scale_step;
        lv.data.resize(static_cast<std::size_t>(lv.rows) * lv.cols * dim);
        for (float& v : lv.data) v = static_cast<float>(rng.normal());
        pyr.levels.push_back(std::move(lv));
    }
    return pyr;
}

inline pf::PartBank random_bank(pf::Rng& rng, int parts, const pf::WindowExtent& window,
                                int dim) {
    pf::PartBank bank;
    for (int j = 0; j < parts; ++j) {
        pf::PartFilter f;
        f.window = window;
        f.part_id = j;
        f.weights.resize(static_cast<Eigen::Index>(window.cell_count()) * dim);
        for (Eigen::Index t = 0; t < f.weights.size(); ++t) f.weights[t] = rng.normal();
        bank.parts.push_back(std::move(f));
    }
    return bank;
}

inline pf::PartWeights random_weights(pf::Rng& rng, int classes, int parts, int regions) {
    pf::PartWeights u;
    u.parts = parts;
    u.regions = regions;
    u.matrix.resize(classes, static_cast<Eigen::Index>(parts) * regions);
    for (Eigen::Index r = 0; r < u.matrix.rows(); ++r)
        for (Eigen::Index c = 0; c < u.matrix.cols(); ++c) u.matrix(r, c) = rng.normal();
    return u;
}

/// Random small instance for bound and solver checks: k examples, n classes,
/// m single-cell parts over one-level pyramids with at most 9 anchors.
struct TinyInstance {
    pf::Dataset dataset;
    pf::PartBank bank;
    pf::PartWeights u;
    pf::PoolingGrid grid = pf::PoolingGrid::global_only();
    int classes = 0;
    pf::JointObjectiveConfig cfg;
};

inline TinyInstance make_tiny(std::uint64_t seed, int k = 5, int n = 3, int m = 2,
                              int grid_side = 3, int dim = 3) {
    pf::Rng rng(seed);
    TinyInstance t;
    t.classes = n;
    for (int i = 0; i < k; ++i) {
        pf::LabeledExample ex;
        ex.pyramid = random_pyramid(rng, 1, grid_side, grid_side, dim);
        ex.label = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
        t.dataset.push_back(std::move(ex));
    }
    t.bank = random_bank(rng, m, {1, 1}, dim);
    t.u = random_weights(rng, n, m, 1);
    t.cfg.lambda_w = 0.05;
    t.cfg.lambda_u = 0.05;
    return t;
}

// ----------------------------- scalar oracles ------------------------------

inline double oracle_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double s = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Max score of one filter over every valid anchor contained in a region,
/// by exhaustive scan with its own feature extraction and dot product.
inline pf::PartResponse oracle_part_response(const pf::FeaturePyramid& pyr,
                                             const pf::PartFilter& filter,
                                             const pf::PoolingGrid& grid, int region) {
    pf::PartResponse best;
    for (int l = 0; l < static_cast<int>(pyr.levels.size()); ++l) {
        const pf::Level& lv = pyr.levels[static_cast<std::size_t>(l)];
        for (int r = 0; r + filter.window.rows <= lv.rows; ++r)
            for (int c = 0; c + filter.window.cols <= lv.cols; ++c) {
                if (!(grid.membership(lv, r, c) & (1u << region))) continue;
                double s = 0;
                Eigen::Index at = 0;
                for (int wr = 0; wr < filter.window.rows; ++wr)
                    for (int wc = 0; wc < filter.window.cols; ++wc) {
                        const float* cell = lv.cell(r + wr, c + wc);
                        for (int ch = 0; ch < lv.dim; ++ch)
                            s += filter.weights[at++] * cell[ch];
                    }
                if (!best.location || s > best.value) {
                    best.value = s;
                    best.location = pf::LatentLocation{l, r, c};
                }
            }
    }
    return best;
}

inline Eigen::VectorXd oracle_example_response(const pf::LabeledExample& ex,
                                               const pf::PartBank& bank,
                                               const pf::PoolingGrid& grid) {
    const int R = grid.size();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bank.size()) * R);
    std::vector<std::pair<const pf::FeaturePyramid*, double>> atoms;
    if (ex.mirrored)
        atoms = {{&ex.pyramid, 0.5}, {&*ex.mirrored, 0.5}};
    else
        atoms = {{&ex.pyramid, 1.0}};
    for (auto [pyr, wt] : atoms)
        for (int j = 0; j < bank.size(); ++j)
            for (int rho = 0; rho < R; ++rho) {
                auto r = oracle_part_response(*pyr, bank.parts[static_cast<std::size_t>(j)],
                                              grid, rho);
                out[static_cast<Eigen::Index>(j) * R + rho] += wt * (r.location ? r.value : 0.0);
            }
    return out;
}

inline double oracle_objective_O(const pf::PartWeights& u, const pf::PartBank& bank,
                                 const pf::PoolingGrid& grid, const pf::Dataset& data,
                                 double lw, double lu) {
    double total = lw * oracle_dot(bank.to_flat(), bank.to_flat()) +
                   lu * u.matrix.squaredNorm();
    for (const auto& ex : data) {
        Eigen::VectorXd r = oracle_example_response(ex, bank, grid);
        double worst = -std::numeric_limits<double>::infinity();
        for (int y = 0; y < u.classes(); ++y) {
            if (y == ex.label) continue;
            double margin = 0;
            for (Eigen::Index s = 0; s < u.cols(); ++s)
                margin += (u.matrix(y, s) - u.matrix(ex.label, s)) * r[s];
            worst = std::max(worst, margin);
        }
        total += std::max(0.0, 1.0 + worst);
    }
    return total;
}

/// Anchors under w_old by exhaustive scan; used by the bound oracle.
struct OracleAnchors {
    // [example][atom][slot]
    std::vector<std::vector<std::vector<pf::PartResponse>>> at;
};

inline OracleAnchors oracle_anchors(const pf::PartBank& w_old, const pf::PoolingGrid& grid,
                                    const pf::Dataset& data) {
    OracleAnchors a;
    const int R = grid.size();
    for (const auto& ex : data) {
        std::vector<const pf::FeaturePyramid*> pyrs{&ex.pyramid};
        if (ex.mirrored) pyrs.push_back(&*ex.mirrored);
        std::vector<std::vector<pf::PartResponse>> per_atom;
        for (const auto* pyr : pyrs) {
            std::vector<pf::PartResponse> slots;
            for (int j = 0; j < w_old.size(); ++j)
                for (int rho = 0; rho < R; ++rho)
                    slots.push_back(oracle_part_response(
                        *pyr, w_old.parts[static_cast<std::size_t>(j)], grid, rho));
            per_atom.push_back(std::move(slots));
        }
        a.at.push_back(std::move(per_atom));
    }
    return a;
}

inline double oracle_bound_B(const pf::PartBank& bank, const pf::PartWeights& u,
                             const OracleAnchors& anchors, const pf::PoolingGrid& grid,
                             const pf::Dataset& data, double lw) {
    const int R = grid.size();
    double total = lw * oracle_dot(bank.to_flat(), bank.to_flat());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        std::vector<std::pair<const pf::FeaturePyramid*, double>> atoms;
        if (ex.mirrored)
            atoms = {{&ex.pyramid, 0.5}, {&*ex.mirrored, 0.5}};
        else
            atoms = {{&ex.pyramid, 1.0}};
        // free and anchored slot values under the current bank
        Eigen::VectorXd free_v = oracle_example_response(ex, bank, grid);
        Eigen::VectorXd anch_v =
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bank.size()) * R);
        for (std::size_t a = 0; a < atoms.size(); ++a)
            for (Eigen::Index s = 0; s < anch_v.size(); ++s) {
                const auto& pr = anchors.at[i][a][static_cast<std::size_t>(s)];
                if (!pr.location) continue;
                double sc = 0;
                const pf::PartFilter& f =
                    bank.parts[static_cast<std::size_t>(s / R)];
                Eigen::Index at = 0;
                const pf::Level& lv =
                    atoms[a].first->levels[static_cast<std::size_t>(pr.location->level)];
                for (int wr = 0; wr < f.window.rows; ++wr)
                    for (int wc = 0; wc < f.window.cols; ++wc) {
                        const float* cell =
                            lv.cell(pr.location->row + wr, pr.location->col + wc);
                        for (int ch = 0; ch < lv.dim; ++ch) sc += f.weights[at++] * cell[ch];
                    }
                anch_v[s] += atoms[a].second * sc;
            }
        double worst = -std::numeric_limits<double>::infinity();
        for (int y = 0; y < u.classes(); ++y) {
            if (y == ex.label) continue;
            double margin = 0;
            for (Eigen::Index s = 0; s < u.cols(); ++s) {
                double diff = u.matrix(y, s) - u.matrix(ex.label, s);
                margin += diff * (diff >= 0 ? free_v[s] : anch_v[s]);
            }
            worst = std::max(worst, margin);
        }
        total += std::max(0.0, 1.0 + worst);
    }
    return total;
}

/// Flattened view of the bound for fast dense minimization: every slot's
/// candidate features (one column per admissible location) plus the anchored
/// feature, extracted once up front.
struct DenseBound {
    struct Slot {
        int part = 0;
        double weight = 1.0;                 // atom weight
        Eigen::MatrixXd candidates;          // d_part x n_locations, lex order
        Eigen::VectorXd anchored;            // empty when the region is empty
    };
    // [example][slot-instance] where slot instances enumerate atoms x slots
    std::vector<std::vector<Slot>> slots;
    Eigen::Index d_part = 0;
    int parts = 0;
    int regions = 0;
};

inline DenseBound dense_bound(const pf::PartBank& shape, const OracleAnchors& anchors,
                              const pf::PoolingGrid& grid, const pf::Dataset& data) {
    DenseBound db;
    db.d_part = shape.filter_dim();
    db.parts = shape.size();
    db.regions = grid.size();
    db.slots.resize(data.size());
    const int R = grid.size();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        std::vector<std::pair<const pf::FeaturePyramid*, double>> atoms;
        if (ex.mirrored)
            atoms = {{&ex.pyramid, 0.5}, {&*ex.mirrored, 0.5}};
        else
            atoms = {{&ex.pyramid, 1.0}};
        for (std::size_t a = 0; a < atoms.size(); ++a) {
            for (int j = 0; j < shape.size(); ++j)
                for (int rho = 0; rho < R; ++rho) {
                    DenseBound::Slot slot;
                    slot.part = j;
                    slot.weight = atoms[a].second;
                    std::vector<Eigen::VectorXd> cands;
                    const auto& pyr = *atoms[a].first;
                    for (int l = 0; l < static_cast<int>(pyr.levels.size()); ++l) {
                        const pf::Level& lv = pyr.levels[static_cast<std::size_t>(l)];
                        for (int r = 0; r + shape.window().rows <= lv.rows; ++r)
                            for (int c = 0; c + shape.window().cols <= lv.cols; ++c) {
                                if (!(grid.membership(lv, r, c) & (1u << rho))) continue;
                                cands.push_back(pf::extract_patch_feature(
                                    pyr, {l, r, c}, shape.window()));
                            }
                    }
                    slot.candidates.resize(db.d_part, static_cast<Eigen::Index>(cands.size()));
                    for (std::size_t t = 0; t < cands.size(); ++t)
                        slot.candidates.col(static_cast<Eigen::Index>(t)) = cands[t];
                    const auto& pr =
                        anchors.at[i][a][static_cast<std::size_t>(j) * R +
                                         static_cast<std::size_t>(rho)];
                    if (pr.location)
                        slot.anchored = pf::extract_patch_feature(*atoms[a].first,
                                                                  *pr.location, shape.window());
                    db.slots[i].push_back(std::move(slot));
                }
        }
    }
    return db;
}

inline double dense_bound_value(const DenseBound& db, const pf::PartWeights& u,
                                const std::vector<int>& labels, const Eigen::VectorXd& w,
                                double lw) {
    double total = lw * w.squaredNorm();
    const Eigen::Index S = u.cols();
    const std::size_t per_atom =
        static_cast<std::size_t>(db.parts) * static_cast<std::size_t>(db.regions);
    for (std::size_t i = 0; i < db.slots.size(); ++i) {
        Eigen::VectorXd free_v = Eigen::VectorXd::Zero(S);
        Eigen::VectorXd anch_v = Eigen::VectorXd::Zero(S);
        for (std::size_t t = 0; t < db.slots[i].size(); ++t) {
            const auto& slot = db.slots[i][t];
            Eigen::Index s = static_cast<Eigen::Index>(t % per_atom);
            auto wj = w.segment(slot.part * db.d_part, db.d_part);
            if (slot.candidates.cols() > 0)
                free_v[s] += slot.weight * (slot.candidates.transpose() * wj).maxCoeff();
            if (slot.anchored.size() > 0) anch_v[s] += slot.weight * slot.anchored.dot(wj);
        }
        double worst = -std::numeric_limits<double>::infinity();
        for (int y = 0; y < u.classes(); ++y) {
            if (y == labels[i]) continue;
            double margin = 0;
            for (Eigen::Index s = 0; s < S; ++s) {
                double diff = u.matrix(y, s) - u.matrix(labels[i], s);
                margin += diff * (diff >= 0 ? free_v[s] : anch_v[s]);
            }
            worst = std::max(worst, margin);
        }
        total += std::max(0.0, 1.0 + worst);
    }
    return total;
}

/// Hinge activity at w: the objective value plus, per violated example, the
/// aggregated active feature Phi_i (free slots at their argmax, anchored
/// slots at the anchors).
inline double dense_bound_actives(const DenseBound& db, const pf::PartWeights& u,
                                  const std::vector<int>& labels, const Eigen::VectorXd& w,
                                  double lw, std::vector<Eigen::VectorXd>* phis) {
    const Eigen::Index S = u.cols();
    const std::size_t per_atom =
        static_cast<std::size_t>(db.parts) * static_cast<std::size_t>(db.regions);
    const Eigen::Index dim = static_cast<Eigen::Index>(db.parts) * db.d_part;
    if (phis) phis->assign(db.slots.size(), Eigen::VectorXd());
    double total = lw * w.squaredNorm();
    for (std::size_t i = 0; i < db.slots.size(); ++i) {
        Eigen::VectorXd free_v = Eigen::VectorXd::Zero(S);
        Eigen::VectorXd anch_v = Eigen::VectorXd::Zero(S);
        std::vector<Eigen::Index> argmax(db.slots[i].size(), -1);
        for (std::size_t q = 0; q < db.slots[i].size(); ++q) {
            const auto& slot = db.slots[i][q];
            Eigen::Index s = static_cast<Eigen::Index>(q % per_atom);
            auto wj = w.segment(slot.part * db.d_part, db.d_part);
            if (slot.candidates.cols() > 0) {
                Eigen::Index am;
                double mx = (slot.candidates.transpose() * wj).maxCoeff(&am);
                free_v[s] += slot.weight * mx;
                argmax[q] = am;
            }
            if (slot.anchored.size() > 0) anch_v[s] += slot.weight * slot.anchored.dot(wj);
        }
        int best_y = -1;
        double worst = -std::numeric_limits<double>::infinity();
        for (int y = 0; y < u.classes(); ++y) {
            if (y == labels[i]) continue;
            double margin = 0;
            for (Eigen::Index s = 0; s < S; ++s) {
                double diff = u.matrix(y, s) - u.matrix(labels[i], s);
                margin += diff * (diff >= 0 ? free_v[s] : anch_v[s]);
            }
            if (margin > worst) {
                worst = margin;
                best_y = y;
            }
        }
        if (best_y < 0 || 1.0 + worst <= 0.0) continue;
        total += 1.0 + worst;
        if (!phis) continue;
        Eigen::VectorXd phi = Eigen::VectorXd::Zero(dim);
        for (std::size_t q = 0; q < db.slots[i].size(); ++q) {
            const auto& slot = db.slots[i][q];
            Eigen::Index s = static_cast<Eigen::Index>(q % per_atom);
            double diff = u.matrix(best_y, s) - u.matrix(labels[i], s);
            if (diff == 0.0) continue;
            auto pj = phi.segment(slot.part * db.d_part, db.d_part);
            if (diff > 0) {
                if (argmax[q] >= 0)
                    pj += (diff * slot.weight) * slot.candidates.col(argmax[q]);
            } else if (slot.anchored.size() > 0) {
                pj += (diff * slot.weight) * slot.anchored;
            }
        }
        (*phis)[i] = std::move(phi);
    }
    return total;
}

/// High-precision dense minimization oracle for the bound: strongly convex
/// subgradient descent with suffix averaging, then an active-set polish that
/// repeatedly jumps to the exact minimizer of the currently active linear
/// pieces. Independent of the cache and cutting-plane machinery.
inline std::pair<Eigen::VectorXd, double> oracle_minimize_bound(
    const pf::PartBank& shape, const pf::PartWeights& u, const OracleAnchors& anchors,
    const pf::PoolingGrid& grid, const pf::Dataset& data, double lw, int iters = 60000) {
    DenseBound db = dense_bound(shape, anchors, grid, data);
    std::vector<int> labels;
    for (const auto& ex : data) labels.push_back(ex.label);
    const Eigen::Index dim = static_cast<Eigen::Index>(shape.size()) * db.d_part;

    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd best_w = w;
    double best_obj = dense_bound_value(db, u, labels, w, lw);
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(dim);
    long avg_count = 0;
    std::vector<Eigen::VectorXd> phis;

    for (int t = 0; t < iters; ++t) {
        dense_bound_actives(db, u, labels, w, lw, &phis);
        Eigen::VectorXd grad = 2.0 * lw * w;
        for (const auto& phi : phis)
            if (phi.size()) grad += phi;
        w -= (1.0 / (2.0 * lw * (t + 1.0))) * grad;
        if (t >= iters / 2) {
            avg += w;
            ++avg_count;
        }
        if ((t & 2047) == 0) {
            double obj = dense_bound_value(db, u, labels, w, lw);
            if (obj < best_obj) {
                best_obj = obj;
                best_w = w;
            }
        }
    }
    if (avg_count > 0) {
        Eigen::VectorXd wa = avg / static_cast<double>(avg_count);
        double obj = dense_bound_value(db, u, labels, wa, lw);
        if (obj < best_obj) {
            best_obj = obj;
            best_w = wa;
        }
    }

    // Active-set polish: with the violated set and all argmaxes frozen the
    // objective is quadratic with closed-form minimizer -(1/2 lw) sum Phi_i.
    // Move by an exact 1-D convex line search toward that target, or failing
    // that along the negative subgradient.
    auto line_search = [&](const Eigen::VectorXd& from, const Eigen::VectorXd& dir,
                           double t_hi) {
        double a = 0.0, bnd = t_hi;
        for (int it = 0; it < 160; ++it) {
            double m1 = a + (bnd - a) / 3.0, m2 = bnd - (bnd - a) / 3.0;
            double f1 = dense_bound_value(db, u, labels, from + m1 * dir, lw);
            double f2 = dense_bound_value(db, u, labels, from + m2 * dir, lw);
            if (f1 < f2)
                bnd = m2;
            else
                a = m1;
        }
        double t = 0.5 * (a + bnd);
        return std::pair<double, Eigen::VectorXd>(
            dense_bound_value(db, u, labels, from + t * dir, lw), from + t * dir);
    };
    for (int round = 0; round < 300; ++round) {
        dense_bound_actives(db, u, labels, best_w, lw, &phis);
        Eigen::VectorXd grad_sum = Eigen::VectorXd::Zero(dim);
        for (const auto& phi : phis)
            if (phi.size()) grad_sum += phi;
        Eigen::VectorXd target = -grad_sum / (2.0 * lw);
        bool improved = false;
        auto [obj_t, w_t] = line_search(best_w, target - best_w, 1.5);
        if (obj_t < best_obj - 1e-14 * (1.0 + std::abs(best_obj))) {
            best_obj = obj_t;
            best_w = w_t;
            improved = true;
        } else {
            Eigen::VectorXd neg_grad = -(2.0 * lw * best_w + grad_sum);
            double nn = neg_grad.norm();
            if (nn > 1e-14) {
                auto [obj_g, w_g] = line_search(best_w, neg_grad / nn, 1.0);
                if (obj_g < best_obj - 1e-14 * (1.0 + std::abs(best_obj))) {
                    best_obj = obj_g;
                    best_w = w_g;
                    improved = true;
                }
            }
        }
        if (!improved) break;
    }
    return {best_w, best_obj};
}


/// Grid search with shrinking refinement over {a >= 0, sum a <= 1}; returns
/// the best objective found (an upper bound on the true minimum).
inline double oracle_grid_qp(const Eigen::MatrixXd& M, const Eigen::VectorXd& b) {
    const int K = static_cast<int>(b.size());
    Eigen::VectorXd center = Eigen::VectorXd::Zero(K);
    double range = 1.0;
    double best = 0.5 * center.dot(M * center) + center.dot(b);
    Eigen::VectorXd best_a = center;
    const int G = 8;
    for (int round = 0; round < 9; ++round) {
        std::vector<int> idx(static_cast<std::size_t>(K), -G);
        for (;;) {
            Eigen::VectorXd a(K);
            bool ok = true;
            double sum = 0;
            for (int i = 0; i < K; ++i) {
                a[i] = center[i] + range * idx[static_cast<std::size_t>(i)] / G;
                if (a[i] < 0) ok = false;
                sum += a[i];
            }
            if (ok && sum <= 1.0 + 1e-15) {
                double obj = 0.5 * a.dot(M * a) + a.dot(b);
                if (obj < best) {
                    best = obj;
                    best_a = a;
                }
            }
            int t = 0;
            for (; t < K; ++t) {
                if (++idx[static_cast<std::size_t>(t)] <= G) break;
                idx[static_cast<std::size_t>(t)] = -G;
            }
            if (t == K) break;
        }
        center = best_a;
        range /= 4.0;
    }
    return best;
}

/// Bayes-style reference classifier for planted corpora: scores a class by
/// the best correlation of its planted patterns over all window placements.
inline double matched_filter_accuracy(const pf::SynthResult& synth,
                                      const pf::SynthConfig& cfg, const pf::Corpus& corpus) {
    const Eigen::Index dim = synth.patterns.rows();
    pf::WindowExtent win{cfg.window, cfg.window};
    std::size_t hits = 0;
    for (std::size_t i = 0; i < corpus.dataset.size(); ++i) {
        int best_class = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < cfg.classes; ++c) {
            double score = -std::numeric_limits<double>::infinity();
            for (int p = c; p < cfg.parts_planted; p += cfg.classes) {
                for (const pf::LatentLocation& z :
                     pf::valid_locations(corpus.dataset[i].pyramid, win)) {
                    Eigen::VectorXd psi =
                        pf::extract_patch_feature(corpus.dataset[i].pyramid, z, win);
                    double dot = 0;
                    for (Eigen::Index t = 0; t < dim; ++t)
                        dot += psi[t] * synth.patterns(t, p);
                    score = std::max(score, dot);
                }
            }
            if (score > best) {
                best = score;
                best_class = c;
            }
        }
        if (best_class == corpus.dataset[i].label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(corpus.dataset.size());
}

/// Every latent hypothesis of every example as a cache: for each rival class,
/// the product of candidate locations over its positive-difference slots.
/// Features are rebuilt here with explicit loops.
inline pf::Cache oracle_full_cache(const pf::PartBank& w_old, const pf::PartWeights& u,
                                   const OracleAnchors& anchors, const pf::PoolingGrid& grid,
                                   const pf::Dataset& data) {
    const int R = grid.size();
    const Eigen::Index dpart = w_old.filter_dim();
    const Eigen::Index dim = static_cast<Eigen::Index>(w_old.size()) * dpart;
    std::vector<int> labels;
    for (const auto& ex : data) labels.push_back(ex.label);
    pf::Cache cache(labels, dim);

    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        std::vector<std::pair<const pf::FeaturePyramid*, double>> atoms;
        if (ex.mirrored)
            atoms = {{&ex.pyramid, 0.5}, {&*ex.mirrored, 0.5}};
        else
            atoms = {{&ex.pyramid, 1.0}};
        const std::size_t slots =
            static_cast<std::size_t>(w_old.size()) * static_cast<std::size_t>(R);

        for (int y = 0; y < u.classes(); ++y) {
            if (y == ex.label) continue;
            struct FreeSlot {
                std::size_t atom;
                Eigen::Index s;
                std::vector<pf::LatentLocation> locs;
            };
            std::vector<FreeSlot> free;
            for (std::size_t a = 0; a < atoms.size(); ++a)
                for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(slots); ++s) {
                    double diff = u.matrix(y, s) - u.matrix(ex.label, s);
                    if (diff <= 0.0) continue;
                    FreeSlot fs;
                    fs.atom = a;
                    fs.s = s;
                    const auto& pyr = *atoms[a].first;
                    int rho = static_cast<int>(s % R);
                    for (int l = 0; l < static_cast<int>(pyr.levels.size()); ++l) {
                        const pf::Level& lv = pyr.levels[static_cast<std::size_t>(l)];
                        for (int r = 0; r + w_old.window().rows <= lv.rows; ++r)
                            for (int c = 0; c + w_old.window().cols <= lv.cols; ++c)
                                if (grid.membership(lv, r, c) & (1u << rho))
                                    fs.locs.push_back({l, r, c});
                    }
                    if (!fs.locs.empty()) free.push_back(std::move(fs));
                }

            std::vector<std::size_t> pick(free.size(), 0);
            for (;;) {
                pf::CacheEntry e;
                e.example = static_cast<int>(i);
                e.loss = 1.0;
                e.key.label = y;
                e.key.choices.assign(atoms.size() * slots, -1);
                e.feature = Eigen::VectorXd::Zero(dim);
                // anchored contributions are shared by every choice
                for (std::size_t a = 0; a < atoms.size(); ++a)
                    for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(slots); ++s) {
                        double diff = u.matrix(y, s) - u.matrix(ex.label, s);
                        if (diff >= 0.0) continue;
                        const auto& pr = anchors.at[i][a][static_cast<std::size_t>(s)];
                        if (!pr.location) continue;
                        Eigen::VectorXd psi = pf::extract_patch_feature(
                            *atoms[a].first, *pr.location, w_old.window());
                        int j = static_cast<int>(s / R);
                        e.feature.segment(j * dpart, dpart) += diff * atoms[a].second * psi;
                    }
                for (std::size_t t = 0; t < free.size(); ++t) {
                    const FreeSlot& fs = free[t];
                    const pf::LatentLocation& z = fs.locs[pick[t]];
                    double diff = u.matrix(y, fs.s) - u.matrix(ex.label, fs.s);
                    Eigen::VectorXd psi =
                        pf::extract_patch_feature(*atoms[fs.atom].first, z, w_old.window());
                    int j = static_cast<int>(fs.s / R);
                    e.feature.segment(j * dpart, dpart) +=
                        diff * atoms[fs.atom].second * psi;
                    e.key.choices[fs.atom * slots + static_cast<std::size_t>(fs.s)] =
                        pf::pack_location(z);
                }
                cache.insert(std::move(e));
                std::size_t t = 0;
                for (; t < free.size(); ++t) {
                    if (++pick[t] < free[t].locs.size()) break;
                    pick[t] = 0;
                }
                if (t == free.size()) break;
            }
        }
    }
    return cache;
}

}  // namespace testkit
