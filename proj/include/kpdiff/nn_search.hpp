#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "kpdiff/geometry.hpp"

namespace kpdiff {

inline double sqdist(const Points& a, Eigen::Index i, const Points& b, Eigen::Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

struct Nearest {
  Eigen::Index index;
  double d2;
};

/// Reference nearest-neighbour query: linear scan, ties to the lowest index.
inline Nearest nearest_brute(const Points& targets, const Points& queries, Eigen::Index q) {
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (Eigen::Index j = 0; j < targets.rows(); ++j) {
    const double d2 = sqdist(queries, q, targets, j);
    if (d2 < best.d2) best = {j, d2};
  }
  return best;
}

/// Uniform-grid bucketed exact nearest-neighbour index over a fixed target set.
class GridIndex {
 public:
  explicit GridIndex(const Points& targets) : targets_(targets) {
    const Eigen::Index m = targets.rows();
    lo_ = targets.colwise().minCoeff().transpose();
    const Vec3 hi = targets.colwise().maxCoeff().transpose();
    const Vec3 extent = (hi - lo_).cwiseMax(1e-12);
    const double per_axis = std::max(1.0, std::cbrt(static_cast<double>(m) / 2.0));
    cell_ = extent.maxCoeff() / per_axis;
    for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::floor(extent[a] / cell_)) + 1);
    start_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2] + 1, 0);
    std::vector<std::size_t> cell_of(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) {
      cell_of[j] = flat(cell_coord(targets(j, 0), 0), cell_coord(targets(j, 1), 1), cell_coord(targets(j, 2), 2));
      ++start_[cell_of[j] + 1];
    }
    for (std::size_t c = 1; c < start_.size(); ++c) start_[c] += start_[c - 1];
    items_.resize(static_cast<std::size_t>(m));
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (Eigen::Index j = 0; j < m; ++j) items_[fill[cell_of[j]]++] = j;
  }

  Nearest nearest(const Points& queries, Eigen::Index q) const {
    Nearest best{0, std::numeric_limits<double>::infinity()};
    const std::array<int, 3> c{cell_coord(queries(q, 0), 0), cell_coord(queries(q, 1), 1), cell_coord(queries(q, 2), 2)};
    const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (int ring = 0; ring <= max_ring; ++ring) {
      // Every point in ring r+1 or beyond lies at least (r * cell) away from the query.
      if (ring > 0) {
        const double bound = (ring - 1) * cell_;
        if (bound * bound > best.d2) break;
      }
      for (int x = c[0] - ring; x <= c[0] + ring; ++x) {
        if (x < 0 || x >= dims_[0]) continue;
        for (int y = c[1] - ring; y <= c[1] + ring; ++y) {
          if (y < 0 || y >= dims_[1]) continue;
          for (int z = c[2] - ring; z <= c[2] + ring; ++z) {
            if (z < 0 || z >= dims_[2]) continue;
            if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != ring) continue;
            const std::size_t cell = flat(x, y, z);
            for (std::size_t k = start_[cell]; k < start_[cell + 1]; ++k) {
              const Eigen::Index j = items_[k];
              const double d2 = sqdist(queries, q, targets_, j);
              if (d2 < best.d2 || (d2 == best.d2 && j < best.index)) best = {j, d2};
            }
          }
        }
      }
    }
    return best;
  }

 private:
  int cell_coord(double v, int axis) const {
    const int c = static_cast<int>(std::floor((v - lo_[axis]) / cell_));
    return std::clamp(c, 0, dims_[axis] - 1);
  }
  std::size_t flat(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims_[1] + y) * dims_[2] + z;
  }

  const Points& targets_;
  Vec3 lo_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<Eigen::Index> items_;
};

enum class NnMode { Auto, Brute, Grid };

/// Sizes up to this use the linear scan under NnMode::Auto.
inline constexpr Eigen::Index kExactScanLimit = 4096;

/// Nearest target for every query row.
inline std::vector<Nearest> nearest_all(const Points& queries, const Points& targets, NnMode mode = NnMode::Auto) {
  std::vector<Nearest> out(static_cast<std::size_t>(queries.rows()));
  const bool grid = mode == NnMode::Grid ||
                    (mode == NnMode::Auto && std::max(queries.rows(), targets.rows()) > kExactScanLimit);
  if (grid) {
    GridIndex index(targets);
    for (Eigen::Index i = 0; i < queries.rows(); ++i) out[i] = index.nearest(queries, i);
  } else {
    for (Eigen::Index i = 0; i < queries.rows(); ++i) out[i] = nearest_brute(targets, queries, i);
  }
  return out;
}

}  // namespace kpdiff
