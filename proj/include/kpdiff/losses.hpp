#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "kpdiff/error.hpp"
#include "kpdiff/geometry.hpp"
#include "kpdiff/nn_search.hpp"

namespace kpdiff {

enum class FpsDirection { Symmetric, KeypointsToAnchors, AnchorsToKeypoints };

struct LossWeights {
  // Applied during the first n_init epochs.
  double fps = 1.0;
  double diff = 3.0;
  double chamfer = 1.0;
  double mse = 1.0;
  // Applied after n_init epochs.
  double fps_late = 0.0;  // anchor loss only bootstraps coverage
  double diff_late = 3.0;
  double chamfer_late = 1.0;
  double mse_late = 1.0;

  double alpha = 0.5;  // precision term of the asymmetric Chamfer
  double beta = 1.0;   // coverage term
  double rho = 0.1;
  double margin = 0.05;
  int k_nn = 4;
  long warmup_steps = 1000;
  double init_fraction = 0.1;
  FpsDirection fps_direction = FpsDirection::Symmetric;

  void validate() const {
    for (double w : {fps, diff, chamfer, mse, fps_late, diff_late, chamfer_late, mse_late, alpha, beta, rho, margin}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::BadWeights, "loss weights must be finite and nonnegative");
    }
    if (!(beta > alpha)) throw Error(ErrorCode::BadWeights, "asymmetric Chamfer needs beta > alpha");
    if (k_nn < 1) throw Error(ErrorCode::BadWeights, "k_nn must be >= 1");
    if (warmup_steps <= 0) throw Error(ErrorCode::BadWeights, "warmup_steps must be positive");
    if (!(init_fraction >= 0.0 && init_fraction <= 1.0)) throw Error(ErrorCode::BadWeights, "init_fraction outside [0,1]");
  }
};

struct LossTerms {
  double fps = 0.0;
  double diff = 0.0;
  double chamfer = 0.0;
  double mse = 0.0;
  double kl = 0.0;
};

struct LossBreakdown {
  LossTerms terms;
  // Effective lambda_0..lambda_4 used for this step.
  std::array<double, 5> lambda{};
  double total = 0.0;
};

/// Mean over A of the squared distance to the nearest point of B.
inline double chamfer_oneway(const Points& a, const Points& b, NnMode mode = NnMode::Auto) {
  if (a.rows() == 0 || b.rows() == 0) throw Error(ErrorCode::EmptyCloud, "chamfer on empty cloud");
  double sum = 0.0;
  for (const auto& nn : nearest_all(a, b, mode)) sum += nn.d2;
  return sum / static_cast<double>(a.rows());
}

inline double chamfer_asym(const Points& pred, const Points& target, double alpha, double beta) {
  if (!(beta > alpha) || !(alpha > 0.0)) throw Error(ErrorCode::BadWeights, "need beta > alpha > 0");
  return alpha * chamfer_oneway(pred, target) + beta * chamfer_oneway(target, pred);
}

/// Indices of the k nearest other points of row i (distance, then index order).
inline std::vector<Eigen::Index> knn_others(const Points& p, Eigen::Index i, int k) {
  std::vector<std::pair<double, Eigen::Index>> d;
  d.reserve(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index j = 0; j < p.rows(); ++j)
    if (j != i) d.emplace_back(sqdist(p, i, p, j), j);
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<Eigen::Index> out(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) out[t] = d[t].second;
  return out;
}

/// Hinge penalty on k-nearest-neighbour spacing below `margin`.
inline double repulsion(const Points& pred, int k_nn, double margin) {
  const Eigen::Index n = pred.rows();
  if (k_nn < 1 || n <= k_nn) throw Error(ErrorCode::TooFewPoints, "repulsion needs N > k_nn >= 1");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (auto j : knn_others(pred, i, k_nn)) sum += std::max(0.0, margin - std::sqrt(sqdist(pred, i, pred, j)));
  }
  return sum / (static_cast<double>(n) * k_nn);
}

inline double gamma_weight(double sigma, double sigma_data) { return sigma_data / (sigma + sigma_data); }

inline double keypoint_chamfer(const Points& keypoints, const Points& surface) {
  return chamfer_oneway(keypoints, surface);
}

inline double fps_anchor_loss(const Points& keypoints, const Points& anchors,
                              FpsDirection dir = FpsDirection::Symmetric) {
  switch (dir) {
    case FpsDirection::KeypointsToAnchors: return chamfer_oneway(keypoints, anchors);
    case FpsDirection::AnchorsToKeypoints: return chamfer_oneway(anchors, keypoints);
    case FpsDirection::Symmetric: break;
  }
  return 0.5 * (chamfer_oneway(keypoints, anchors) + chamfer_oneway(anchors, keypoints));
}

/// Order-aligned mean squared keypoint displacement.
inline double deformation_consistency(const Points& transformed, const Points& deformed) {
  if (transformed.rows() != deformed.rows() || transformed.rows() == 0) {
    throw Error(ErrorCode::SizeMismatch, "keypoint sets differ in size");
  }
  return (transformed - deformed).rowwise().squaredNorm().mean();
}

inline double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar) {
  if (mu.size() != logvar.size()) throw Error(ErrorCode::SizeMismatch, "mu/logvar size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) s += mu[i] * mu[i] + std::exp(logvar[i]) - logvar[i] - 1.0;
  return 0.5 * s;
}

inline double kl_warmup(double step, double warmup_steps) { return std::min(1.0, step / warmup_steps); }

/// Number of leading epochs that use the initial weight set.
inline long init_epochs(const LossWeights& w, long total_epochs) {
  return static_cast<long>(std::ceil(w.init_fraction * static_cast<double>(total_epochs) - 1e-9));
}

inline std::array<double, 5> loss_lambdas(const LossWeights& w, long step, long epoch, long total_epochs) {
  const bool init = epoch < init_epochs(w, total_epochs);
  return {init ? w.fps : w.fps_late, init ? w.diff : w.diff_late, init ? w.chamfer : w.chamfer_late,
          init ? w.mse : w.mse_late, kl_warmup(static_cast<double>(step), static_cast<double>(w.warmup_steps))};
}

/// Weighted total. `epoch` is zero-based.
inline LossBreakdown total_loss(const LossTerms& t, const LossWeights& w, long step, long epoch, long total_epochs) {
  LossBreakdown b;
  b.terms = t;
  b.lambda = loss_lambdas(w, step, epoch, total_epochs);
  b.total = b.lambda[0] * t.fps + b.lambda[1] * t.diff + b.lambda[2] * t.chamfer + b.lambda[3] * t.mse;
  // A zero warm-up weight drops the term even if it is not finite.
  if (b.lambda[4] != 0.0) b.total += b.lambda[4] * t.kl;
  return b;
}

}  // namespace kpdiff
