#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "kpdiff/geometry.hpp"
#include "kpdiff/rng.hpp"

namespace kpdiff {

enum class DeformKind { Stretch, Bend, Twist, Taper, Rotate };

inline const char* to_string(DeformKind k) {
  switch (k) {
    case DeformKind::Stretch: return "stretch";
    case DeformKind::Bend: return "bend";
    case DeformKind::Twist: return "twist";
    case DeformKind::Taper: return "taper";
    case DeformKind::Rotate: return "rotate";
  }
  return "?";
}

/// Parameter ranges of the deformation family.
struct DeformRanges {
  double stretch_max = 2.2;
  double bend_max = 1.8;
  double twist_max = 1.9;
  double taper_max = 1.6;
  double rotate_max = std::numbers::pi / 6.0;
};

/// Which mean-x drives the twist angle.
enum class TwistSource { Intermediate, Original };

struct DeformConfig {
  DeformRanges ranges;
  std::array<bool, 5> enabled{true, true, true, true, true};
  TwistSource twist_source = TwistSource::Intermediate;
};

struct DeformationSpec {
  DeformKind kind = DeformKind::Stretch;
  Vec3 direction = Vec3::UnitX();  // stretch
  double amount = 0.0;             // lambda, alpha, gamma, tau or phi
  int in_axis = 0;                 // bend
  int out_axis = 1;                // bend

  /// Matrix acting on column vectors. Twist needs the mean x of the cloud it acts on.
  Mat3 matrix(double mean_x = 0.0) const {
    Mat3 m = Mat3::Identity();
    switch (kind) {
      case DeformKind::Stretch:
        m += (amount - 1.0) * direction * direction.transpose();
        break;
      case DeformKind::Bend:
        m(out_axis, in_axis) += amount;
        break;
      case DeformKind::Twist: {
        const double theta = amount * mean_x;
        m(1, 1) = std::cos(theta);
        m(1, 2) = -std::sin(theta);
        m(2, 1) = std::sin(theta);
        m(2, 2) = std::cos(theta);
        break;
      }
      case DeformKind::Taper:
        m(0, 1) += amount;
        m(2, 1) += amount;
        break;
      case DeformKind::Rotate:
        m(0, 0) = std::cos(amount);
        m(0, 2) = std::sin(amount);
        m(2, 0) = -std::sin(amount);
        m(2, 2) = std::cos(amount);
        break;
    }
    return m;
  }

  static DeformationSpec stretch(Vec3 v, double lambda) { return {DeformKind::Stretch, v.normalized(), lambda, 0, 1}; }
  static DeformationSpec bend(int in_axis, int out_axis, double alpha) {
    return {DeformKind::Bend, Vec3::UnitX(), alpha, in_axis, out_axis};
  }
  static DeformationSpec twist(double gamma) { return {DeformKind::Twist, Vec3::UnitX(), gamma, 0, 1}; }
  static DeformationSpec taper(double tau) { return {DeformKind::Taper, Vec3::UnitX(), tau, 0, 1}; }
  static DeformationSpec rotate(double phi) { return {DeformKind::Rotate, Vec3::UnitX(), phi, 0, 1}; }
};

/// Ordered deformations; applied first to last.
struct DeformationChain {
  std::vector<DeformationSpec> specs;
  TwistSource twist_source = TwistSource::Intermediate;

  /// Composed matrix for this cloud: the product of the component matrices, last one leftmost.
  Mat3 resolve(const Points& cloud) const {
    Mat3 m = Mat3::Identity();
    const double original_mean_x = cloud.rows() > 0 ? cloud.col(0).mean() : 0.0;
    for (const auto& s : specs) {
      double mean_x = 0.0;
      if (s.kind == DeformKind::Twist) {
        if (twist_source == TwistSource::Original) {
          mean_x = original_mean_x;
        } else {
          // mean x of the intermediate cloud equals row 0 of m applied to the mean point
          mean_x = m.row(0).dot(cloud.colwise().mean().transpose());
        }
      }
      m = s.matrix(mean_x) * m;
    }
    return m;
  }
};

inline DeformationChain sample_chain(Rng& rng, const DeformConfig& cfg = {}) {
  DeformationChain chain;
  chain.twist_source = cfg.twist_source;
  const auto& r = cfg.ranges;
  // Draws happen for every kind so toggling one kind does not shift the others.
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-12) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  const double lambda = rng.uniform(1.0, r.stretch_max);
  static constexpr std::array<std::array<int, 2>, 6> kPairs{{{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}}};
  const auto pair = kPairs[rng.index(6)];
  const double alpha = rng.uniform(-r.bend_max, r.bend_max);
  const double gamma = rng.uniform(0.0, r.twist_max);
  const double tau = rng.uniform(0.0, r.taper_max);
  const double phi = rng.uniform(-r.rotate_max, r.rotate_max);
  if (cfg.enabled[0]) chain.specs.push_back(DeformationSpec::stretch(v, lambda));
  if (cfg.enabled[1]) chain.specs.push_back(DeformationSpec::bend(pair[0], pair[1], alpha));
  if (cfg.enabled[2]) chain.specs.push_back(DeformationSpec::twist(gamma));
  if (cfg.enabled[3]) chain.specs.push_back(DeformationSpec::taper(tau));
  if (cfg.enabled[4]) chain.specs.push_back(DeformationSpec::rotate(phi));
  return chain;
}

inline Mat3 matrix_of(const DeformationSpec& spec, const Points& cloud) {
  return spec.matrix(spec.kind == DeformKind::Twist && cloud.rows() > 0 ? cloud.col(0).mean() : 0.0);
}

/// Rows are points: out = in * M^T.
inline Points transform_rows(const Points& p, const Mat3& m) { return p * m.transpose(); }

inline PointCloud apply(const DeformationChain& chain, const PointCloud& pc) {
  return PointCloud(transform_rows(pc.points, chain.resolve(pc.points)));
}

/// The same linear map that apply() uses on `context`, applied to keypoints.
inline KeypointSet apply_to_keypoints(const DeformationChain& chain, const KeypointSet& k, const PointCloud& context) {
  return KeypointSet(transform_rows(k.points, chain.resolve(context.points)));
}

}  // namespace kpdiff
