#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <vector>

#include "kpdiff/error.hpp"
#include "kpdiff/geometry.hpp"
#include "kpdiff/rng.hpp"

namespace kpdiff {

struct EdmConfig {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double sigma_data = 0.3;
  double mu_init = -2.0;
  double mu_final = -1.2;
  double std_init = 0.6;
  double std_final = 1.2;
  double curriculum_fraction = 0.8;
  int ladder_steps = 64;

  void validate() const {
    if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw Error(ErrorCode::InvalidConfig, "need 0 < sigma_min < sigma_max");
    if (!(sigma_data > 0.0)) throw Error(ErrorCode::InvalidConfig, "sigma_data must be positive");
    if (!(curriculum_fraction > 0.0 && curriculum_fraction <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "curriculum_fraction must be in (0,1]");
    }
    if (std_init < 0.0 || std_final < 0.0) throw Error(ErrorCode::InvalidConfig, "negative curriculum std");
    if (ladder_steps < 2) throw Error(ErrorCode::InvalidConfig, "ladder_steps must be >= 2");
  }
};

struct NoisyCloud {
  Points noisy;
  Points eps;
};

/// S_t = S_0 + sigma * eps with eps ~ N(0, I); eps drawn row-major.
inline NoisyCloud add_noise(const Points& clean, double sigma, Rng& rng) {
  if (sigma < 0.0) throw Error(ErrorCode::NonPositiveSigma, "sigma must be >= 0");
  Points eps(clean.rows(), 3);
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (int c = 0; c < 3; ++c) eps(i, c) = rng.normal();
  return {clean + sigma * eps, std::move(eps)};
}

struct PreconditionCoeffs {
  double c_in;
  double c_out;
  double c_skip;
  double c_noise;
};

inline PreconditionCoeffs precondition(double sigma, double sigma_data) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::NonPositiveSigma, "precondition needs sigma > 0");
  const double var = sigma * sigma + sigma_data * sigma_data;
  const double c_in = 1.0 / std::sqrt(var);
  return {c_in, sigma * sigma_data * c_in, sigma_data * sigma_data / var, 0.25 * std::log(sigma)};
}

/// w(sigma) = (sigma^2 + sigma_data^2)^-2
inline double loss_weight(double sigma, double sigma_data) {
  const double var = sigma * sigma + sigma_data * sigma_data;
  return 1.0 / (var * var);
}

struct LogNormalParams {
  double mu;
  double std;
};

/// Log-sigma distribution at training progress `step` of `total`.
inline LogNormalParams curriculum_params(double step, double total, const EdmConfig& cfg) {
  const double alpha = total > 0.0 ? std::min(step / (cfg.curriculum_fraction * total), 1.0) : 1.0;
  return {(1.0 - alpha) * cfg.mu_init + alpha * cfg.mu_final, (1.0 - alpha) * cfg.std_init + alpha * cfg.std_final};
}

inline double sample_sigma(Rng& rng, LogNormalParams p, double sigma_min, double sigma_max) {
  const double draw = rng.normal();
  return std::clamp(std::exp(p.mu + p.std * draw), sigma_min, sigma_max);
}

/// Log-uniform from sigma_max down to sigma_min; endpoints exact.
inline std::vector<double> sigma_ladder(const EdmConfig& cfg) {
  const int n = cfg.ladder_steps;
  if (n < 2) throw Error(ErrorCode::InvalidConfig, "ladder needs >= 2 steps");
  std::vector<double> out(static_cast<std::size_t>(n));
  const double lmax = std::log(cfg.sigma_max), lmin = std::log(cfg.sigma_min);
  for (int i = 0; i < n; ++i) out[i] = std::exp(lmax + (lmin - lmax) * static_cast<double>(i) / (n - 1));
  out.front() = cfg.sigma_max;
  out.back() = cfg.sigma_min;
  return out;
}

/// D(x, sigma, z0) -> denoised cloud of the same shape.
template <typename F>
concept Denoiser = requires(const F& f, const Points& x, double sigma, const Eigen::VectorXd& z0) {
  { f(x, sigma, z0) } -> std::convertible_to<Points>;
};

/// Deterministic first-order probability-flow integration over the sigma ladder.
template <Denoiser D>
Points sample_shape(const D& denoiser, const Eigen::VectorXd& z0, std::size_t n_points, const EdmConfig& cfg, Rng& rng) {
  if (n_points < 1) throw Error(ErrorCode::EmptyCloud, "sample_shape needs n_points >= 1");
  const auto ladder = sigma_ladder(cfg);
  Points x(static_cast<Eigen::Index>(n_points), 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int c = 0; c < 3; ++c) x(i, c) = cfg.sigma_max * rng.normal();
  for (std::size_t i = 0; i + 1 < ladder.size(); ++i) {
    const double s = ladder[i], s_next = ladder[i + 1];
    const Points denoised = denoiser(x, s, z0);
    x += (s_next - s) / s * (x - denoised);
  }
  return x;
}

}  // namespace kpdiff
