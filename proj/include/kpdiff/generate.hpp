#pragma once

#include <vector>

#include "kpdiff/edm.hpp"
#include "kpdiff/model.hpp"
#include "kpdiff/parallel.hpp"
#include "kpdiff/prior.hpp"

namespace kpdiff {

struct GeneratedShape {
  Points keypoints;
  Points cloud;
};

/// Unconditional generation: prior keypoints plus the mean auxiliary latent
/// condition the probability-flow sampler.
inline std::vector<GeneratedShape> generate(const KeypointPrior& prior, const ParamStore& params, const ModelConfig& mc,
                                            const EdmConfig& ec, int n_points, std::size_t count, std::uint64_t seed,
                                            int threads = 0) {
  Eigen::VectorXd aux = prior.aux_mean.size() == mc.aux_dim ? prior.aux_mean : Eigen::VectorXd::Zero(mc.aux_dim);
  std::vector<GeneratedShape> out(count);
  const ModelDenoiser denoiser{params, mc, ec.sigma_data};
  parallel_for(count, resolve_threads(threads), [&](std::size_t i) {
    Rng rng(derive_seed(seed, {0x6E, i}));
    out[i].keypoints = sample_keypoints(prior, rng);
    out[i].cloud = sample_shape(denoiser, assemble_latent(out[i].keypoints, aux, mc), n_points, ec, rng);
  });
  return out;
}

/// Linear path between two keypoint sets, every step decoded from the same
/// initial noise.
inline std::vector<GeneratedShape> interpolate(const Points& ka, const Points& kb, const Eigen::VectorXd& z_aux, int steps,
                                               const ParamStore& params, const ModelConfig& mc, const EdmConfig& ec,
                                               int n_points, std::uint64_t seed, int threads = 0) {
  if (ka.rows() != kb.rows() || ka.rows() != mc.keypoints) throw Error(ErrorCode::ShapeMismatch, "keypoint sets differ in size");
  if (steps < 2) throw Error(ErrorCode::InvalidConfig, "interpolation needs at least two steps");
  std::vector<GeneratedShape> out(static_cast<std::size_t>(steps));
  const ModelDenoiser denoiser{params, mc, ec.sigma_data};
  parallel_for(out.size(), resolve_threads(threads), [&](std::size_t i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
    out[i].keypoints = i == 0 ? ka : (i + 1 == out.size() ? kb : Points((1.0 - t) * ka + t * kb));
    Rng rng(seed);
    out[i].cloud = sample_shape(denoiser, assemble_latent(out[i].keypoints, z_aux, mc), n_points, ec, rng);
  });
  return out;
}

}  // namespace kpdiff
