#pragma once

#include <algorithm>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "partforge/pyramid.hpp"

namespace partforge {

/// Background patch statistics (mu, Sigma) with a cached Cholesky factor.
/// Immutable after fitting; safe to share across threads.
class WhiteningModel {
  public:
    WhiteningModel() = default;
    WhiteningModel(Eigen::VectorXd mean, Eigen::MatrixXd covariance, double shrinkage)
        : mean_(std::move(mean)), cov_(std::move(covariance)), shrinkage_(shrinkage) {
        llt_.compute(cov_);
        if (llt_.info() != Eigen::Success)
            throw Error("whitening covariance is not positive-definite");
    }

    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& covariance() const { return cov_; }
    double shrinkage() const { return shrinkage_; }
    Eigen::Index dim() const { return mean_.size(); }

    /// Sigma^{-1} (f - mu) via the cached factorization.
    Eigen::VectorXd whiten(const Eigen::VectorXd& f) const {
        if (f.size() != mean_.size())
            throw Error("whiten: dimension mismatch (" + std::to_string(f.size()) +
                        " vs " + std::to_string(mean_.size()) + ")");
        return llt_.solve(f - mean_);
    }

    std::uint64_t content_hash() const {
        std::uint64_t h = fnv1a64(&shrinkage_, sizeof(shrinkage_));
        h = fnv1a64(mean_.data(), sizeof(double) * static_cast<std::size_t>(mean_.size()), h);
        h = fnv1a64(cov_.data(), sizeof(double) * static_cast<std::size_t>(cov_.size()), h);
        return h;
    }

  private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    double shrinkage_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// mu = sample mean; Sigma = (1-s) * population covariance + s * scale * I,
/// where scale = trace/d of the sample covariance (unit scale when the sample
/// is degenerate) so Sigma stays positive-definite.
inline WhiteningModel fit_whitening(const std::vector<Eigen::VectorXd>& patches,
                                    double shrinkage) {
    if (patches.size() < 2)
        throw Error("fit_whitening: need at least 2 patches, got " +
                    std::to_string(patches.size()));
    if (shrinkage <= 0.0 || shrinkage > 1.0)
        throw Error("fit_whitening: shrinkage must be in (0,1]");
    const Eigen::Index d = patches.front().size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& p : patches) {
        if (p.size() != d) throw Error("fit_whitening: inhomogeneous patch dimensions");
        mean += p;
    }
    mean /= static_cast<double>(patches.size());

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& p : patches) {
        Eigen::VectorXd r = p - mean;
        cov.selfadjointView<Eigen::Lower>().rankUpdate(r, 1.0);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= static_cast<double>(patches.size());

    double scale = cov.trace() / static_cast<double>(d);
    if (!(scale > 1e-30)) scale = 1.0;
    Eigen::MatrixXd blended = (1.0 - shrinkage) * cov;
    blended.diagonal().array() += shrinkage * scale;
    // symmetrize exactly
    blended = ((blended + blended.transpose()) * 0.5).eval();
    return WhiteningModel(std::move(mean), std::move(blended), shrinkage);
}

/// Keeps the ceil(keep_fraction * |H|) window anchors with the largest
/// whitened-feature norm; ties resolved by (level,row,col) order. The result
/// is returned in (level,row,col) order and is monotone in keep_fraction.
inline std::vector<LatentLocation> discriminability_filter(const FeaturePyramid& pyr,
                                                           const WhiteningModel& model,
                                                           const WindowExtent& window,
                                                           double keep_fraction) {
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw Error("discriminability_filter: keep_fraction must be in (0,1]");
    std::vector<LatentLocation> locs = valid_locations(pyr, window);
    if (locs.empty()) throw Error("discriminability_filter: pyramid has no valid anchors");

    std::vector<double> norms(locs.size());
    parallel_for(locs.size(), [&](std::size_t i) {
        norms[i] = model.whiten(extract_patch_feature(pyr, locs[i], window)).norm();
    });

    std::vector<std::size_t> order(locs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (norms[a] != norms[b]) return norms[a] > norms[b];
        return locs[a] < locs[b];
    });

    std::size_t keep = static_cast<std::size_t>(
        std::ceil(keep_fraction * static_cast<double>(locs.size())));
    keep = std::clamp<std::size_t>(keep, 1, locs.size());
    std::vector<LatentLocation> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back(locs[order[i]]);
    std::sort(out.begin(), out.end());
    return out;
}

// ----------------------------------- PCA ----------------------------------

struct PcaModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;  // k x d, rows orthonormal, ordered by variance

    Eigen::Index k() const { return basis.rows(); }
    Eigen::Index input_dim() const { return basis.cols(); }
};

inline PcaModel fit_pca(const std::vector<Eigen::VectorXd>& features, Eigen::Index k) {
    if (features.empty()) throw Error("fit_pca: no samples");
    const Eigen::Index d = features.front().size();
    if (k < 1 || k > d || k > static_cast<Eigen::Index>(features.size()))
        throw Error("fit_pca: k must satisfy 1 <= k <= min(dim, samples)");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& f : features) {
        if (f.size() != d) throw Error("fit_pca: inhomogeneous dimensions");
        mean += f;
    }
    mean /= static_cast<double>(features.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& f : features) {
        Eigen::VectorXd r = f - mean;
        cov.selfadjointView<Eigen::Lower>().rankUpdate(r, 1.0);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= static_cast<double>(features.size());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw Error("fit_pca: eigendecomposition failed");
    // eigenvalues ascending; take the top k
    PcaModel model;
    model.mean = std::move(mean);
    model.basis.resize(k, d);
    for (Eigen::Index i = 0; i < k; ++i)
        model.basis.row(i) = eig.eigenvectors().col(d - 1 - i).transpose();
    return model;
}

inline Eigen::VectorXd apply_pca(const PcaModel& model, const Eigen::VectorXd& f) {
    if (f.size() != model.input_dim()) throw Error("apply_pca: dimension mismatch");
    return model.basis * (f - model.mean);
}

}  // namespace partforge
