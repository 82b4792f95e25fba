#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "partforge/pyramid.hpp"

namespace partforge {

/// Linear filter over a window of pyramid cells.
struct PartFilter {
    Eigen::VectorXd weights;  // window.rows * window.cols * channel_dim
    WindowExtent window;
    int part_id = 0;
};

/// Ordered collection of part filters sharing one window shape and channel
/// dimension. Immutable during scoring.
struct PartBank {
    std::vector<PartFilter> parts;

    int size() const { return static_cast<int>(parts.size()); }
    const WindowExtent& window() const { return parts.front().window; }
    Eigen::Index filter_dim() const { return parts.front().weights.size(); }
    int channel_dim() const {
        return static_cast<int>(filter_dim()) / parts.front().window.cell_count();
    }

    void validate() const {
        if (parts.empty()) throw Error("PartBank: empty");
        for (const auto& p : parts) {
            if (!(p.window == parts.front().window))
                throw Error("PartBank: heterogeneous window shapes");
            if (p.weights.size() != parts.front().weights.size())
                throw Error("PartBank: heterogeneous filter dimensions");
        }
    }

    /// Filters stacked into one vector, part-major.
    Eigen::VectorXd to_flat() const {
        Eigen::VectorXd flat(static_cast<Eigen::Index>(size()) * filter_dim());
        for (int j = 0; j < size(); ++j)
            flat.segment(j * filter_dim(), filter_dim()) = parts[static_cast<std::size_t>(j)].weights;
        return flat;
    }

    PartBank with_flat(const Eigen::VectorXd& flat) const {
        if (flat.size() != static_cast<Eigen::Index>(size()) * filter_dim())
            throw Error("PartBank: flat vector size mismatch");
        PartBank out = *this;
        for (int j = 0; j < size(); ++j)
            out.parts[static_cast<std::size_t>(j)].weights =
                flat.segment(j * filter_dim(), filter_dim());
        return out;
    }
};

// ------------------------------ pooling grid -------------------------------

/// Axis-aligned rectangle in fractional image coordinates.
struct PoolingRect {
    double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
    /// Regions sharing a non-negative group partition the plane between them:
    /// a point on a shared boundary belongs to the lowest-index member.
    /// Group -1 regions (the whole-image region) match independently.
    int group = -1;

    bool contains(double x, double y) const {
        return x >= x0 && x <= x1 && y >= y0 && y <= y1;
    }
};

struct PoolingGrid {
    std::vector<PoolingRect> regions;

    int size() const { return static_cast<int>(regions.size()); }

    /// Whole image plus a 2x2 grid; region 0 is the global region.
    static PoolingGrid standard_1x1_2x2() {
        PoolingGrid g;
        g.regions.push_back({0, 0, 1, 1, -1});
        g.regions.push_back({0.0, 0.0, 0.5, 0.5, 0});
        g.regions.push_back({0.5, 0.0, 1.0, 0.5, 0});
        g.regions.push_back({0.0, 0.5, 0.5, 1.0, 0});
        g.regions.push_back({0.5, 0.5, 1.0, 1.0, 0});
        return g;
    }

    static PoolingGrid global_only() {
        PoolingGrid g;
        g.regions.push_back({0, 0, 1, 1, -1});
        return g;
    }

    /// Bitmask of the regions an anchor-cell center belongs to.
    std::uint32_t membership(double x_frac, double y_frac) const {
        std::uint32_t mask = 0;
        std::uint32_t claimed_groups = 0;
        for (int i = 0; i < size(); ++i) {
            const PoolingRect& rc = regions[static_cast<std::size_t>(i)];
            if (!rc.contains(x_frac, y_frac)) continue;
            if (rc.group >= 0) {
                std::uint32_t gbit = 1u << rc.group;
                if (claimed_groups & gbit) continue;  // lower-index sibling already owns it
                claimed_groups |= gbit;
            }
            mask |= 1u << i;
        }
        return mask;
    }

    std::uint32_t membership(const Level& lv, int row, int col) const {
        return membership((col + 0.5) / lv.cols, (row + 0.5) / lv.rows);
    }
};

// ------------------------------- responses ---------------------------------

/// Max part responses per pooling region with their argmax anchors.
/// Slot (part j, region rho) lives at index j*R + rho. A region with no
/// valid anchor holds value 0 and no location.
struct ResponseVector {
    Eigen::VectorXd values;
    std::vector<std::optional<LatentLocation>> argmax;
    int parts = 0;
    int regions = 0;

    Eigen::Index slot(int part, int region) const {
        return static_cast<Eigen::Index>(part) * regions + region;
    }
};

/// w_j . psi(x, z), accumulated over the window cells without materializing
/// the concatenated feature.
inline double part_score(const FeaturePyramid& pyr, const LatentLocation& z,
                         const PartFilter& filter) {
    if (!pyr.in_bounds(z, filter.window))
        throw Error("part_score: location out of bounds at level " +
                    std::to_string(z.level) + " row " + std::to_string(z.row) + " col " +
                    std::to_string(z.col));
    const Level& lv = pyr.levels[static_cast<std::size_t>(z.level)];
    const double* w = filter.weights.data();
    double s = 0.0;
    for (int r = 0; r < filter.window.rows; ++r)
        for (int c = 0; c < filter.window.cols; ++c) {
            const float* cell = lv.cell(z.row + r, z.col + c);
            for (int t = 0; t < lv.dim; ++t) s += *w++ * cell[t];
        }
    return s;
}

struct PartResponse {
    double value = 0.0;
    std::optional<LatentLocation> location;
};

/// Max score of one filter within one pooling region; ties go to the
/// lexicographically first anchor. Empty regions yield the zero sentinel.
inline PartResponse part_response(const FeaturePyramid& pyr, const PartFilter& filter,
                                  const PoolingGrid& grid, int region_index) {
    if (region_index < 0 || region_index >= grid.size())
        throw Error("part_response: region index out of range");
    PartResponse best;
    for (int l = 0; l < static_cast<int>(pyr.levels.size()); ++l) {
        const Level& lv = pyr.levels[static_cast<std::size_t>(l)];
        if (lv.dim * filter.window.cell_count() != filter.weights.size())
            throw Error("part_response: channel dimension mismatch");
        for (int r = 0; r + filter.window.rows <= lv.rows; ++r)
            for (int c = 0; c + filter.window.cols <= lv.cols; ++c) {
                if (!(grid.membership(lv, r, c) & (1u << region_index))) continue;
                double s = part_score(pyr, {l, r, c}, filter);
                if (!best.location || s > best.value) {
                    best.value = s;
                    best.location = LatentLocation{l, r, c};
                }
            }
    }
    return best;
}

/// All part responses over all pooling regions, part-major.
inline ResponseVector response_vector(const FeaturePyramid& pyr, const PartBank& bank,
                                      const PoolingGrid& grid) {
    bank.validate();
    const int m = bank.size();
    const int R = grid.size();
    ResponseVector rv;
    rv.parts = m;
    rv.regions = R;
    rv.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m) * R);
    rv.argmax.assign(static_cast<std::size_t>(m) * R, std::nullopt);

    for (int l = 0; l < static_cast<int>(pyr.levels.size()); ++l) {
        const Level& lv = pyr.levels[static_cast<std::size_t>(l)];
        if (lv.dim != bank.channel_dim())
            throw Error("response_vector: channel dimension mismatch (" +
                        std::to_string(lv.dim) + " vs " + std::to_string(bank.channel_dim()) + ")");
        const WindowExtent& win = bank.window();
        for (int r = 0; r + win.rows <= lv.rows; ++r)
            for (int c = 0; c + win.cols <= lv.cols; ++c) {
                std::uint32_t mask = grid.membership(lv, r, c);
                if (!mask) continue;
                for (int j = 0; j < m; ++j) {
                    double s = part_score(pyr, {l, r, c}, bank.parts[static_cast<std::size_t>(j)]);
                    for (int rho = 0; rho < R; ++rho) {
                        if (!(mask & (1u << rho))) continue;
                        auto idx = rv.slot(j, rho);
                        auto& loc = rv.argmax[static_cast<std::size_t>(idx)];
                        if (!loc || s > rv.values[idx]) {
                            rv.values[idx] = s;
                            loc = LatentLocation{l, r, c};
                        }
                    }
                }
            }
    }
    // empty regions keep the 0 sentinel
    return rv;
}

/// [r(x) + r(x')] / 2. Averaging with the mirror makes the representation
/// identical whichever of the two images it is computed from.
inline Eigen::VectorXd flip_average(const ResponseVector& r_x, const ResponseVector& r_xflip) {
    if (r_x.parts != r_xflip.parts || r_x.regions != r_xflip.regions ||
        r_x.values.size() != r_xflip.values.size())
        throw Error("flip_average: layout mismatch");
    return 0.5 * (r_x.values + r_xflip.values);
}

// ----------------------------- class weights -------------------------------

/// Per-class weights over part x region response slots.
struct PartWeights {
    Eigen::MatrixXd matrix;  // n classes x m*R
    int parts = 0;
    int regions = 0;

    int classes() const { return static_cast<int>(matrix.rows()); }
    Eigen::Index cols() const { return matrix.cols(); }
    Eigen::Index slot(int part, int region) const {
        return static_cast<Eigen::Index>(part) * regions + region;
    }
    int part_of_column(Eigen::Index col) const { return static_cast<int>(col) / regions; }

    void validate() const {
        if (matrix.rows() < 1) throw Error("PartWeights: no classes");
        if (matrix.cols() != static_cast<Eigen::Index>(parts) * regions)
            throw Error("PartWeights: column count inconsistent with parts x regions");
        if (!matrix.allFinite()) throw Error("PartWeights: non-finite entries");
    }
};

inline Eigen::VectorXd class_scores(const Eigen::VectorXd& response, const PartWeights& u) {
    if (response.size() != u.matrix.cols())
        throw Error("class_scores: dimension mismatch (" + std::to_string(response.size()) +
                    " vs " + std::to_string(u.matrix.cols()) + ")");
    return u.matrix * response;
}

/// Argmax class; ties go to the lowest class index.
inline int predict(const Eigen::VectorXd& response, const PartWeights& u) {
    Eigen::VectorXd s = class_scores(response, u);
    int best = 0;
    for (int y = 1; y < static_cast<int>(s.size()); ++y)
        if (s[y] > s[best]) best = y;
    return best;
}

/// Subtracts each column's mean. Score differences between classes, and
/// therefore predictions, are unchanged; the l2 norm never grows.
inline PartWeights canonicalize_columns(const PartWeights& u) {
    PartWeights out = u;
    out.matrix.rowwise() -= u.matrix.colwise().mean();
    return out;
}

enum class RelativeSign { Positive, Negative, Neutral };

/// Sign of u[a,j] - u[b,j] read from the whole-image pooling column.
inline RelativeSign relative_part_sign(const PartWeights& u, int class_a, int class_b,
                                       int part_j) {
    if (class_a < 0 || class_a >= u.classes() || class_b < 0 || class_b >= u.classes() ||
        part_j < 0 || part_j >= u.parts)
        throw Error("relative_part_sign: index out of range");
    double diff = u.matrix(class_a, u.slot(part_j, 0)) - u.matrix(class_b, u.slot(part_j, 0));
    if (diff > 0) return RelativeSign::Positive;
    if (diff < 0) return RelativeSign::Negative;
    return RelativeSign::Neutral;
}

// ------------------------------- examples ----------------------------------

/// Training image: its pyramid, optionally the mirrored twin, and the label.
struct LabeledExample {
    FeaturePyramid pyramid;
    std::optional<FeaturePyramid> mirrored;
    int label = 0;
};

using Dataset = std::vector<LabeledExample>;

/// Flip-averaged response when the mirrored twin is present, otherwise the
/// plain response vector.
inline Eigen::VectorXd example_response(const LabeledExample& ex, const PartBank& bank,
                                        const PoolingGrid& grid) {
    ResponseVector r = response_vector(ex.pyramid, bank, grid);
    if (!ex.mirrored) return r.values;
    ResponseVector rf = response_vector(*ex.mirrored, bank, grid);
    return flip_average(r, rf);
}

/// Precomputed responses of a dataset against a frozen part bank.
struct ResponseSet {
    std::vector<Eigen::VectorXd> responses;
    std::vector<int> labels;
    int classes = 0;
    int parts = 0;
    int regions = 0;

    std::size_t size() const { return responses.size(); }
    Eigen::Index dim() const { return static_cast<Eigen::Index>(parts) * regions; }
};

inline ResponseSet compute_response_set(const Dataset& dataset, const PartBank& bank,
                                        const PoolingGrid& grid, int classes) {
    ResponseSet rs;
    rs.classes = classes;
    rs.parts = bank.size();
    rs.regions = grid.size();
    rs.responses.resize(dataset.size());
    rs.labels.resize(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        rs.responses[i] = example_response(dataset[i], bank, grid);
        rs.labels[i] = dataset[i].label;
    });
    return rs;
}

/// Fraction of examples whose predicted class matches the label.
inline double training_accuracy(const ResponseSet& rs, const PartWeights& u) {
    if (rs.size() == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < rs.size(); ++i)
        if (predict(rs.responses[i], u) == rs.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(rs.size());
}

}  // namespace partforge
