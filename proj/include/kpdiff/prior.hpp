#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "kpdiff/error.hpp"
#include "kpdiff/geometry.hpp"
#include "kpdiff/rng.hpp"

namespace kpdiff {

/// PCA subspace of flattened keypoint sets plus a Gaussian KDE over the
/// projected training coordinates.
struct KeypointPrior {
  int keypoints = 0;
  Eigen::VectorXd mean;          // 3d
  Eigen::MatrixXd basis;         // 3d x r, orthonormal columns
  Eigen::VectorXd variances;     // r retained eigenvalues
  double total_variance = 0.0;
  Eigen::MatrixXd coords;        // n x r projected training sets
  Eigen::VectorXd bandwidth;     // r per-coordinate kernel widths
  Eigen::VectorXd aux_mean;      // mean auxiliary latent

  int rank() const { return static_cast<int>(basis.cols()); }

  Eigen::VectorXd project(const Points& k) const { return basis.transpose() * (flatten(k) - mean); }

  Points inverse(const Eigen::VectorXd& c) const {
    const Eigen::VectorXd v = mean + basis * c;
    Points out(keypoints, 3);
    for (int i = 0; i < keypoints; ++i) out.row(i) = v.segment<3>(3 * i).transpose();
    return out;
  }

  static Eigen::VectorXd flatten(const Points& k) {
    Eigen::VectorXd v(k.size());
    for (Eigen::Index i = 0; i < k.rows(); ++i) v.segment<3>(3 * i) = k.row(i).transpose();
    return v;
  }
};

/// Scott's rule per coordinate: std_j * n^(-1/(r+4)).
inline Eigen::VectorXd scott_bandwidth(const Eigen::MatrixXd& coords) {
  const auto n = static_cast<double>(coords.rows());
  const auto r = static_cast<double>(coords.cols());
  Eigen::VectorXd h(coords.cols());
  for (Eigen::Index j = 0; j < coords.cols(); ++j) {
    const double m = coords.col(j).mean();
    const double var = (coords.col(j).array() - m).square().sum() / n;
    h(j) = std::sqrt(var) * std::pow(n, -1.0 / (r + 4.0));
  }
  return h;
}

/// Fits the prior. `retained` is the fraction of variance kept; the KDE
/// bandwidth is Scott's rule scaled by `bandwidth_scale` (0 resamples the
/// training coordinates exactly).
inline KeypointPrior fit_prior(const std::vector<Points>& sets, const std::vector<Eigen::VectorXd>& aux_means,
                               double retained = 0.95, double bandwidth_scale = 1.0) {
  if (sets.size() < 2) throw Error(ErrorCode::TooFewSamples, "prior needs at least two keypoint sets");
  if (!(retained > 0.0 && retained <= 1.0) || !(bandwidth_scale >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "retained variance must be in (0,1] and bandwidth scale >= 0");
  }
  const auto d = sets.front().rows();
  const auto n = static_cast<Eigen::Index>(sets.size());
  Eigen::MatrixXd x(n, 3 * d);
  for (Eigen::Index s = 0; s < n; ++s) {
    if (sets[s].rows() != d) throw Error(ErrorCode::ShapeMismatch, "keypoint sets differ in size");
    x.row(s) = KeypointPrior::flatten(sets[s]).transpose();
  }
  KeypointPrior p;
  p.keypoints = static_cast<int>(d);
  // offsets from the first set keep the mean exact when every set is identical
  p.mean = x.row(0).transpose() + (x.rowwise() - x.row(0)).colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0).reverse();
  const Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();
  p.total_variance = ev.sum();
  Eigen::Index r = 0;
  if (p.total_variance > 1e-14 * std::max(1.0, p.mean.squaredNorm())) {
    double acc = 0.0;
    while (r < ev.size() && acc < retained * p.total_variance * (1.0 - 1e-12)) acc += ev(r++);
  }
  p.basis = vecs.leftCols(r);
  p.variances = ev.head(r);
  p.coords = centered * p.basis;
  p.bandwidth = scott_bandwidth(p.coords) * bandwidth_scale;
  if (!aux_means.empty()) {
    p.aux_mean = Eigen::VectorXd::Zero(aux_means.front().size());
    for (const auto& a : aux_means) p.aux_mean += a;
    p.aux_mean /= static_cast<double>(aux_means.size());
  }
  return p;
}

/// KDE draw mapped back through the inverse PCA.
inline Points sample_keypoints(const KeypointPrior& prior, Rng& rng) {
  const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(prior.coords.rows())));
  Eigen::VectorXd c = prior.coords.row(i).transpose();
  for (Eigen::Index j = 0; j < c.size(); ++j) {
    const double z = rng.normal();
    c(j) += prior.bandwidth(j) * z;
  }
  return prior.inverse(c);
}

}  // namespace kpdiff
