#pragma once

#include <limits>
#include <vector>

#include <Eigen/Core>

namespace kpdiff {

struct Assignment {
  std::vector<Eigen::Index> row_to_col;
  double cost = 0.0;
};

/// Exact minimum-cost perfect matching on a square cost matrix
/// (Hungarian method with row/column potentials, O(n^3)).
inline Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  const Eigen::Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is the virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Eigen::Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Eigen::Index i0 = p[j0];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Eigen::Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a;
  a.row_to_col.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index j = 1; j <= n; ++j) a.row_to_col[p[j] - 1] = j - 1;
  // Summed from the original matrix so the cost is independent of potential drift.
  for (Eigen::Index i = 0; i < n; ++i) a.cost += cost(i, a.row_to_col[i]);
  return a;
}

}  // namespace kpdiff
