#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "kpdiff/geometry.hpp"
#include "kpdiff/metrics.hpp"
#include "kpdiff/rng.hpp"

// Procedural stand-in category: an ellipsoid body along +x, two thin wing
// boxes spanning z and a vertical tail fin. Labels: 0 body, 1 wing, 2 tail.
namespace kpdiff::synth {

enum Part : int { Body = 0, Wing = 1, Tail = 2 };
inline constexpr int kPartCount = 3;
inline constexpr int kAnnotationCount = 5;
inline constexpr double kThickness = 0.04;

struct ShapeParams {
  double body_length;
  double body_radius;
  double wing_span;
  double wing_chord;
  double wing_offset;  // wing centre along x, as a fraction of body length
  double fin_height;

  static ShapeParams sample(Rng& rng) {
    ShapeParams p;
    p.body_length = rng.uniform(1.6, 2.4);
    p.body_radius = rng.uniform(0.15, 0.3);
    p.wing_span = rng.uniform(1.2, 2.2);
    p.wing_chord = rng.uniform(0.25, 0.5);
    p.wing_offset = rng.uniform(-0.1, 0.15);
    p.fin_height = rng.uniform(0.25, 0.55);
    return p;
  }

  double half_length() const { return 0.5 * body_length; }
  double wing_x() const { return wing_offset * body_length; }
  double fin_chord() const { return 0.6 * wing_chord; }
  double fin_x0() const { return -half_length() + 0.05; }
  double fin_y0() const { return 0.5 * body_radius; }
};

/// Axis-aligned box [lo, hi].
struct Box {
  Vec3 lo, hi;

  double area() const {
    const Vec3 e = hi - lo;
    return 2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
  }
  Vec3 sample_surface(Rng& rng) const {
    const Vec3 e = hi - lo;
    const std::array<double, 3> face{e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
    const double u = rng.uniform() * (face[0] + face[1] + face[2]);
    const int axis = u < face[0] ? 0 : (u < face[0] + face[1] ? 1 : 2);
    Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
    p[axis] = rng.uniform() < 0.5 ? lo[axis] : hi[axis];
    return p;
  }
  double surface_distance(const Vec3& p) const {
    // Distance to the boundary of the box (points inside count by the nearest face).
    const Vec3 c = p.cwiseMax(lo).cwiseMin(hi);
    if ((c - p).norm() > 0.0) return (c - p).norm();
    double m = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) m = std::min({m, p[a] - lo[a], hi[a] - p[a]});
    return m;
  }
};

struct ShapeGeometry {
  ShapeParams params;
  Vec3 body_axes;
  std::array<Box, 2> wings;
  Box fin;

  explicit ShapeGeometry(const ShapeParams& p) : params(p) {
    body_axes = Vec3(p.half_length(), p.body_radius, p.body_radius);
    const double x0 = p.wing_x() - 0.5 * p.wing_chord, x1 = p.wing_x() + 0.5 * p.wing_chord;
    const double t = 0.5 * kThickness;
    const double root = 0.5 * p.body_radius;
    wings[0] = Box{Vec3(x0, -t, root), Vec3(x1, t, 0.5 * p.wing_span)};
    wings[1] = Box{Vec3(x0, -t, -0.5 * p.wing_span), Vec3(x1, t, -root)};
    fin = Box{Vec3(p.fin_x0(), p.fin_y0(), -t), Vec3(p.fin_x0() + p.fin_chord(), p.fin_y0() + p.fin_height, t)};
  }

  /// Knud Thomsen's approximation of the ellipsoid surface area.
  double body_area() const {
    const double pw = 1.6075;
    const double a = std::pow(body_axes.x(), pw), b = std::pow(body_axes.y(), pw), c = std::pow(body_axes.z(), pw);
    return 4.0 * std::numbers::pi * std::pow((a * b + a * c + b * c) / 3.0, 1.0 / pw);
  }

  /// Uniform on the ellipsoid surface by rejection on the sphere-mapped density.
  Vec3 sample_body(Rng& rng) const {
    const Vec3& ax = body_axes;
    const double gmax = std::max({ax.y() * ax.z(), ax.x() * ax.z(), ax.x() * ax.y()});
    for (;;) {
      Vec3 u(rng.normal(), rng.normal(), rng.normal());
      const double n = u.norm();
      if (n < 1e-12) continue;
      u /= n;
      const double g = std::sqrt(std::pow(ax.y() * ax.z() * u.x(), 2) + std::pow(ax.x() * ax.z() * u.y(), 2) +
                                 std::pow(ax.x() * ax.y() * u.z(), 2));
      if (rng.uniform() * gmax <= g) return ax.cwiseProduct(u);
    }
  }

  double body_residual(const Vec3& p) const {
    return std::abs(p.cwiseQuotient(body_axes).squaredNorm() - 1.0);
  }

  /// Semantic annotations: nose, tail end, right wing tip, left wing tip, fin top.
  std::vector<Annotation> annotations() const {
    const auto& p = params;
    return {
        {Vec3(p.half_length(), 0, 0), 0},
        {Vec3(-p.half_length(), 0, 0), 1},
        {Vec3(p.wing_x(), 0, 0.5 * p.wing_span), 2},
        {Vec3(p.wing_x(), 0, -0.5 * p.wing_span), 3},
        {Vec3(p.fin_x0() + 0.5 * p.fin_chord(), p.fin_y0() + p.fin_height, 0), 4},
    };
  }

  /// Distance from p to the nearest part surface (exact for boxes; algebraic residual for the body).
  double surface_residual(const Vec3& p) const {
    return std::min({body_residual(p), wings[0].surface_distance(p), wings[1].surface_distance(p), fin.surface_distance(p)});
  }

  /// Stratified surface sample; each part gets at least `min_per_part` points.
  LabeledPointCloud sample(std::size_t n, Rng& rng, std::size_t min_per_part = 8) const {
    const std::array<double, 3> area{body_area(), wings[0].area() + wings[1].area(), fin.area()};
    const double total = area[0] + area[1] + area[2];
    std::array<std::size_t, 3> count{};
    for (int k = 1; k < 3; ++k) {
      count[k] = std::max(min_per_part, static_cast<std::size_t>(std::llround(area[k] / total * double(n))));
    }
    count[0] = n > count[1] + count[2] ? n - count[1] - count[2] : 1;
    LabeledPointCloud out;
    Points pts(static_cast<Eigen::Index>(count[0] + count[1] + count[2]), 3);
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < count[0]; ++i, ++r) {
      pts.row(r) = sample_body(rng).transpose();
      out.labels.push_back(Body);
    }
    const double w0 = wings[0].area() / (wings[0].area() + wings[1].area());
    for (std::size_t i = 0; i < count[1]; ++i, ++r) {
      pts.row(r) = (rng.uniform() < w0 ? wings[0] : wings[1]).sample_surface(rng).transpose();
      out.labels.push_back(Wing);
    }
    for (std::size_t i = 0; i < count[2]; ++i, ++r) {
      pts.row(r) = fin.sample_surface(rng).transpose();
      out.labels.push_back(Tail);
    }
    out.cloud = PointCloud(std::move(pts));
    return out;
  }
};

/// One normalised synthetic shape with its labels, annotations and the
/// normalisation that maps generator coordinates to the stored frame.
struct Sample {
  ShapeParams params;
  LabeledPointCloud cloud;
  std::vector<Annotation> annotations;
  Vec3 center;
  double scale;

  /// Same shape resampled at another density, in this sample's frame.
  LabeledPointCloud resample(std::size_t n, std::uint64_t seed) const {
    Rng rng(seed);
    auto c = ShapeGeometry(params).sample(n, rng);
    c.cloud.points = ((c.cloud.points.rowwise() - center.transpose()) / scale).eval();
    return c;
  }
};

inline Sample make_sample(const ShapeParams& params, std::size_t n_points, std::uint64_t seed) {
  Rng rng(seed);
  ShapeGeometry geo(params);
  auto raw = geo.sample(n_points, rng);
  auto norm = normalize(raw.cloud);
  Sample s{params, {norm.cloud, raw.labels}, geo.annotations(), norm.center, norm.scale};
  for (auto& a : s.annotations) a.xyz = (a.xyz - norm.center) / norm.scale;
  return s;
}

/// `count` shapes, deterministic in `seed`; shape i depends only on (seed, i).
inline std::vector<Sample> make_dataset(std::size_t count, std::size_t n_points, std::uint64_t seed) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng prng(derive_seed(seed, {0x5A, i}));
    out.push_back(make_sample(ShapeParams::sample(prng), n_points, derive_seed(seed, {0x5B, i})));
  }
  return out;
}

}  // namespace kpdiff::synth
