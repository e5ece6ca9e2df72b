#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "kpdiff/autodiff.hpp"
#include "kpdiff/model.hpp"

namespace kpdiff {

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords = 200;  // per tensor
  double floor = 1e-6;           // denominator floor, scaled by max(1, |f|)
  std::uint64_t seed = 7;
};

struct GradEntry {
  std::string tensor;
  Eigen::Index index = 0;  // row-major flat index
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradReport {
  std::size_t checked = 0;
  std::size_t straddled = 0;  // a +-h probe crossed a kink; no derivative to compare
  double max_rel_error = 0.0;
  std::vector<GradEntry> worst;  // descending, at most 5

  void add(GradEntry e) {
    ++checked;
    max_rel_error = std::max(max_rel_error, e.rel_error);
    worst.push_back(std::move(e));
    std::sort(worst.begin(), worst.end(), [](const GradEntry& a, const GradEntry& b) { return a.rel_error > b.rel_error; });
    if (worst.size() > 5) worst.pop_back();
  }

  /// Throws GradMismatch listing the worst coordinates when over `tol`.
  void require(double tol) const {
    if (max_rel_error <= tol) return;
    std::string msg = "gradient mismatch:";
    char buf[160];
    for (const auto& w : worst) {
      std::snprintf(buf, sizeof buf, " %s[%ld] analytic=%.6g numeric=%.6g rel=%.3g;", w.tensor.c_str(), long(w.index), w.analytic,
                    w.numeric, w.rel_error);
      msg += buf;
    }
    throw Error(ErrorCode::GradMismatch, msg);
  }
};

inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

namespace detail {

inline std::vector<Eigen::Index> coordinate_subset(Eigen::Index size, std::size_t max_coords, std::uint64_t seed) {
  std::vector<Eigen::Index> idx;
  if (static_cast<std::size_t>(size) <= max_coords) {
    for (Eigen::Index i = 0; i < size; ++i) idx.push_back(i);
    return idx;
  }
  for (auto i : subsample_indices(static_cast<std::size_t>(size), max_coords, seed)) idx.push_back(static_cast<Eigen::Index>(i));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline double& flat(ad::Matrix& m, Eigen::Index k) { return m(k / m.cols(), k % m.cols()); }
inline double flat(const ad::Matrix& m, Eigen::Index k) { return m(k / m.cols(), k % m.cols()); }

}  // namespace detail

using TapeFunction = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Central differences against the tape gradient of a scalar function of
/// plain matrices.
inline GradReport check_gradients(const TapeFunction& fn, std::vector<ad::Matrix> inputs, const GradCheckOptions& opt = {}) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.leaf(m));
  auto out = fn(tape, vars);
  tape.backward(out);
  const double floor = opt.floor * std::max(1.0, std::abs(out.scalar()));
  const std::uint64_t base = tape.branches();
  auto eval = [&]() {
    ad::Tape t;
    std::vector<ad::Var> vs;
    for (const auto& m : inputs) vs.push_back(t.constant(m));
    const double v = fn(t, vs).scalar();
    return std::pair{v, t.branches()};
  };
  GradReport report;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const ad::Matrix g = tape.grad(vars[a]);
    for (auto k : detail::coordinate_subset(inputs[a].size(), opt.max_coords, derive_seed(opt.seed, {a}))) {
      double& x = detail::flat(inputs[a], k);
      const double x0 = x;
      x = x0 + opt.step;
      const auto [fp, bp] = eval();
      x = x0 - opt.step;
      const auto [fm, bm] = eval();
      x = x0;
      if (bp != base || bm != base) {
        ++report.straddled;
        continue;
      }
      const double num = (fp - fm) / (2.0 * opt.step);
      const double ana = detail::flat(g, k);
      report.add({"input" + std::to_string(a), k, ana, num, relative_error(ana, num, floor)});
    }
  }
  return report;
}

using ParamFunction = std::function<ad::Var(const Bound&)>;

/// Central differences against the tape gradient for every trainable tensor.
inline GradReport check_param_gradients(const ParamFunction& fn, const ParamStore& params, const GradCheckOptions& opt = {}) {
  ad::Tape tape;
  Bound bound(tape, params, true);
  auto out = fn(bound);
  tape.backward(out);
  const double floor = opt.floor * std::max(1.0, std::abs(out.scalar()));
  const auto grads = bound.gradients(params);
  ParamStore probe = params;
  const std::uint64_t base = tape.branches();
  auto eval = [&]() {
    ad::Tape t;
    Bound b(t, probe, false);
    const double v = fn(b).scalar();
    return std::pair{v, t.branches()};
  };
  GradReport report;
  std::uint64_t salt = 0;
  for (const auto& [name, g] : grads) {
    auto& m = probe.at(name);
    for (auto k : detail::coordinate_subset(m.size(), opt.max_coords, derive_seed(opt.seed, {++salt}))) {
      double& x = detail::flat(m, k);
      const double x0 = x;
      x = x0 + opt.step;
      const auto [fp, bp] = eval();
      x = x0 - opt.step;
      const auto [fm, bm] = eval();
      x = x0;
      if (bp != base || bm != base) {
        ++report.straddled;
        continue;
      }
      const double num = (fp - fm) / (2.0 * opt.step);
      const double ana = detail::flat(g, k);
      report.add({name, k, ana, num, relative_error(ana, num, floor)});
    }
  }
  return report;
}

}  // namespace kpdiff
