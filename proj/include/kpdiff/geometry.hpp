#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "kpdiff/error.hpp"
#include "kpdiff/rng.hpp"

namespace kpdiff {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline bool all_finite(const Points& p) { return p.allFinite(); }

/// N x 3 coordinates. Constructing from an empty array throws EmptyCloud.
struct PointCloud {
  Points points;

  PointCloud() = default;
  explicit PointCloud(Points p) : points(std::move(p)) {
    if (points.rows() == 0) throw Error(ErrorCode::EmptyCloud, "point cloud has no points");
  }

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  Vec3 point(std::size_t i) const { return points.row(static_cast<Eigen::Index>(i)).transpose(); }
  Vec3 centroid() const { return points.colwise().mean().transpose(); }

  bool operator==(const PointCloud& o) const { return points == o.points; }
};

/// Ordered keypoints; row k is keypoint identity k across instances.
struct KeypointSet {
  Points points;

  KeypointSet() = default;
  explicit KeypointSet(Points p) : points(std::move(p)) {}

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  Vec3 point(std::size_t i) const { return points.row(static_cast<Eigen::Index>(i)).transpose(); }
  bool operator==(const KeypointSet& o) const { return points == o.points; }
};

struct LabeledPointCloud {
  PointCloud cloud;
  std::vector<int> labels;

  std::size_t size() const { return cloud.size(); }
  int label_count() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }
};

inline Points points_from(std::initializer_list<std::array<double, 3>> rows) {
  Points p(static_cast<Eigen::Index>(rows.size()), 3);
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    p.row(r++) << row[0], row[1], row[2];
  }
  return p;
}

struct Normalized {
  PointCloud cloud;
  Vec3 center;
  double scale;
};

/// Centers at the centroid and scales so the farthest point has norm 1.
/// Inverse: original = normalized * scale + center.
inline Normalized normalize(const PointCloud& pc) {
  if (pc.size() == 0) throw Error(ErrorCode::EmptyCloud, "normalize on empty cloud");
  const Vec3 center = pc.centroid();
  Points centered = pc.points.rowwise() - center.transpose();
  const double scale = centered.rowwise().norm().maxCoeff();
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::DegenerateCloud, "all points coincide");
  }
  centered /= scale;
  return {PointCloud(std::move(centered)), center, scale};
}

struct FpsResult {
  KeypointSet keypoints;
  std::vector<std::size_t> indices;
};

/// Greedy farthest-point sampling from a given start index.
/// Ties go to the lowest index.
inline FpsResult fps_from(const PointCloud& pc, std::size_t k, std::size_t start) {
  const std::size_t n = pc.size();
  if (k < 1 || k > n) throw Error(ErrorCode::KTooLarge, "fps k=" + std::to_string(k) + " with N=" + std::to_string(n));
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  std::size_t cur = start;
  for (std::size_t s = 0; s < k; ++s) {
    chosen.push_back(cur);
    const auto c = pc.points.row(static_cast<Eigen::Index>(cur));
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 = (pc.points.row(static_cast<Eigen::Index>(i)) - c).squaredNorm();
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d) {
        best_d = min_d2[i];
        best = i;
      }
    }
    cur = best;
  }
  Points out(static_cast<Eigen::Index>(k), 3);
  for (std::size_t s = 0; s < k; ++s) out.row(static_cast<Eigen::Index>(s)) = pc.points.row(static_cast<Eigen::Index>(chosen[s]));
  return {KeypointSet(std::move(out)), std::move(chosen)};
}

/// Farthest-point sampling with a seeded uniform start index.
inline FpsResult fps(const PointCloud& pc, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > pc.size()) throw Error(ErrorCode::KTooLarge, "fps k=" + std::to_string(k) + " with N=" + std::to_string(pc.size()));
  Rng rng(seed);
  return fps_from(pc, k, rng.index(pc.size()));
}

/// Indices of a uniform sample without replacement (partial Fisher-Yates).
inline std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t n, std::uint64_t seed) {
  if (n > total) throw Error(ErrorCode::NTooLarge, "subsample n=" + std::to_string(n) + " from N=" + std::to_string(total));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.index(total - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

inline Points gather_rows(const Points& p, const std::vector<std::size_t>& idx) {
  Points out(static_cast<Eigen::Index>(idx.size()), 3);
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline PointCloud subsample(const PointCloud& pc, std::size_t n, std::uint64_t seed) {
  return PointCloud(gather_rows(pc.points, subsample_indices(pc.size(), n, seed)));
}

inline LabeledPointCloud subsample(const LabeledPointCloud& pc, std::size_t n, std::uint64_t seed) {
  const auto idx = subsample_indices(pc.size(), n, seed);
  LabeledPointCloud out{PointCloud(gather_rows(pc.cloud.points, idx)), {}};
  out.labels.reserve(n);
  for (auto i : idx) out.labels.push_back(pc.labels[i]);
  return out;
}

}  // namespace kpdiff
