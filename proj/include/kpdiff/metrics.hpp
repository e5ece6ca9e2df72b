#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "kpdiff/assignment.hpp"
#include "kpdiff/error.hpp"
#include "kpdiff/geometry.hpp"
#include "kpdiff/losses.hpp"

namespace kpdiff {

inline double chamfer_symmetric(const Points& a, const Points& b) {
  return 0.5 * (chamfer_oneway(a, b) + chamfer_oneway(b, a));
}

/// Largest cloud size solved exactly by emd().
inline constexpr Eigen::Index kEmdExactLimit = 1024;

/// Mean Euclidean transport cost under the optimal bijection.
inline double emd(const Points& a, const Points& b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::SizeMismatch, "emd needs equal-size clouds");
  if (a.rows() == 0) throw Error(ErrorCode::EmptyCloud, "emd on empty clouds");
  if (a.rows() > kEmdExactLimit) {
    throw Error(ErrorCode::TooLargeForExact, "emd exact solver capped at " + std::to_string(kEmdExactLimit) + " points");
  }
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = std::sqrt(sqdist(a, i, b, j));
  return solve_assignment(cost).cost / static_cast<double>(n);
}

/// Keypoint-to-part correlation over a sample set.
struct CorrelationInputs {
  std::vector<KeypointSet> keypoints;
  std::vector<LabeledPointCloud> clouds;
  double tau = 0.05;
  int label_count = 0;  // 0: infer from the clouds
};

struct CorrelationResult {
  double score = 0.0;
  Eigen::MatrixXd association;  // d x L fraction of samples
};

inline CorrelationResult keypoint_correlation_detail(const CorrelationInputs& in) {
  if (in.keypoints.empty() || in.keypoints.size() != in.clouds.size()) {
    throw Error(ErrorCode::SizeMismatch, "need one keypoint set per labeled cloud");
  }
  int labels = in.label_count;
  if (labels == 0)
    for (const auto& c : in.clouds) labels = std::max(labels, c.label_count());
  if (labels <= 0) throw Error(ErrorCode::NoLabels, "no part labels");
  const auto d = static_cast<Eigen::Index>(in.keypoints.front().size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, labels);
  const double tau2 = in.tau * in.tau;
  for (std::size_t s = 0; s < in.clouds.size(); ++s) {
    const auto& kp = in.keypoints[s].points;
    const auto& cloud = in.clouds[s];
    if (kp.rows() != d) throw Error(ErrorCode::SizeMismatch, "keypoint count differs between samples");
    if (cloud.labels.size() != cloud.size()) throw Error(ErrorCode::SizeMismatch, "label array length");
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, labels);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < cloud.cloud.points.rows(); ++j) {
        const int l = cloud.labels[static_cast<std::size_t>(j)];
        if (l < 0 || l >= labels) throw Error(ErrorCode::NoLabels, "label out of range");
        if (sqdist(kp, i, cloud.cloud.points, j) <= tau2) c(i, l) = 1.0;
      }
    }
    m += c;
  }
  m /= static_cast<double>(in.clouds.size());
  return {m.colwise().maxCoeff().mean(), m};
}

inline double keypoint_correlation(const CorrelationInputs& in) { return keypoint_correlation_detail(in).score; }

struct Annotation {
  Vec3 xyz;
  int label;
};

/// One shape as seen by DAS: order-aligned predictions plus human annotations.
struct DasShape {
  KeypointSet predicted;
  std::vector<Annotation> annotations;
};

struct DasInputs {
  DasShape reference;
  DasShape evaluation;
  double window = 0.0;  // relaxed matching: 0.1 accepts annotations within +10% of the nearest distance
};

namespace detail {

/// Nearest annotation; ties go to the lowest annotation id (vector position).
inline std::size_t nearest_annotation(const Vec3& p, const std::vector<Annotation>& ann, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < ann.size(); ++a) {
    const double d = (ann[a].xyz - p).norm();
    if (d < best_d) {
      best_d = d;
      best = a;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

inline bool label_matches(const Vec3& p, const std::vector<Annotation>& ann, int label, double window) {
  double dmin = 0.0;
  const std::size_t nn = nearest_annotation(p, ann, &dmin);
  if (window <= 0.0) return ann[nn].label == label;
  const double limit = (1.0 + window) * dmin;
  for (const auto& a : ann)
    if (a.label == label && (a.xyz - p).norm() <= limit) return true;
  return false;
}

inline double das_direction(const DasShape& ref, const DasShape& eval, double window) {
  const std::size_t d = ref.predicted.size();
  std::size_t hits = 0;
  for (std::size_t k = 0; k < d; ++k) {
    const int label = ref.annotations[nearest_annotation(ref.predicted.point(k), ref.annotations)].label;
    if (label_matches(eval.predicted.point(k), eval.annotations, label, window)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(d);
}

}  // namespace detail

/// Dual alignment score: label propagation accuracy averaged over both
/// reference/evaluation orderings.
inline double das(const DasInputs& in) {
  if (in.reference.annotations.empty() || in.evaluation.annotations.empty()) {
    throw Error(ErrorCode::NoAnnotations, "DAS needs annotations on both shapes");
  }
  if (in.reference.predicted.size() != in.evaluation.predicted.size() || in.reference.predicted.size() == 0) {
    throw Error(ErrorCode::SizeMismatch, "predicted keypoint counts differ");
  }
  return 0.5 * (detail::das_direction(in.reference, in.evaluation, in.window) +
                detail::das_direction(in.evaluation, in.reference, in.window));
}

/// Minimum matching distance: mean over references of the best generated Chamfer distance.
inline double mmd_cd(const std::vector<Points>& generated, const std::vector<Points>& reference) {
  if (generated.empty() || reference.empty()) throw Error(ErrorCode::EmptySet, "mmd needs nonempty sets");
  double sum = 0.0;
  for (const auto& r : reference) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : generated) best = std::min(best, chamfer_symmetric(r, g));
    sum += best;
  }
  return sum / static_cast<double>(reference.size());
}

}  // namespace kpdiff
