#pragma once

#include <vector>

#include "kpdiff/deformations.hpp"
#include "kpdiff/metrics.hpp"
#include "kpdiff/model.hpp"
#include "kpdiff/parallel.hpp"
#include "kpdiff/synthetic.hpp"

namespace kpdiff {

/// Predicted keypoints for every shape.
inline std::vector<KeypointSet> predict_keypoints(const ParamStore& params, const std::vector<Points>& shapes,
                                                  const ModelConfig& cfg, int threads = 0) {
  std::vector<KeypointSet> out(shapes.size(), KeypointSet{Points(0, 3)});
  parallel_for(shapes.size(), resolve_threads(threads),
               [&](std::size_t i) { out[i] = encode(params, shapes[i], cfg).keypoints; });
  return out;
}

/// Random keypoint baseline: d distinct surface points drawn from each shape.
inline std::vector<KeypointSet> random_keypoints(const std::vector<Points>& shapes, int d, std::uint64_t seed) {
  std::vector<KeypointSet> out;
  out.reserve(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto idx = subsample_indices(static_cast<std::size_t>(shapes[i].rows()), static_cast<std::size_t>(d),
                                       derive_seed(seed, {0xBA, i}));
    out.emplace_back(gather_rows(shapes[i], idx));
  }
  return out;
}

/// Mean deformation-consistency error of the encoder on seeded random
/// deformations of `shapes`.
inline double heldout_consistency(const ParamStore& params, const std::vector<Points>& shapes, const ModelConfig& mc,
                                  const DeformConfig& dc, std::uint64_t seed, int threads = 0) {
  std::vector<double> err(shapes.size(), 0.0);
  parallel_for(shapes.size(), resolve_threads(threads), [&](std::size_t i) {
    Rng rng(derive_seed(seed, {0xC0, i}));
    const auto chain = sample_chain(rng, dc);
    const Mat3 m = chain.resolve(shapes[i]);
    const auto k = encode(params, shapes[i], mc).keypoints.points;
    const auto kd = encode(params, transform_rows(shapes[i], m), mc).keypoints.points;
    err[i] = deformation_consistency(transform_rows(k, m), kd);
  });
  double s = 0.0;
  for (double e : err) s += e;
  return s / static_cast<double>(shapes.size());
}

/// DAS averaged over consecutive shape pairs (i, i+1).
inline double mean_das(const std::vector<KeypointSet>& keypoints, const std::vector<synth::Sample>& samples,
                       double window = 0.0) {
  if (keypoints.size() != samples.size() || samples.size() < 2) {
    throw Error(ErrorCode::SizeMismatch, "need at least two annotated shapes with keypoints");
  }
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    s += das({{keypoints[i], samples[i].annotations}, {keypoints[i + 1], samples[i + 1].annotations}, window});
  }
  return s / static_cast<double>(samples.size() - 1);
}

/// Keypoint-part correlation against a dense relabelled resample of each shape.
inline double part_correlation(const std::vector<KeypointSet>& keypoints, const std::vector<synth::Sample>& samples,
                               double tau, std::size_t dense_points, std::uint64_t seed) {
  CorrelationInputs in;
  in.keypoints = keypoints;
  in.tau = tau;
  in.label_count = synth::kPartCount;
  for (std::size_t i = 0; i < samples.size(); ++i) in.clouds.push_back(samples[i].resample(dense_points, derive_seed(seed, {0xDE, i})));
  return keypoint_correlation(in);
}

}  // namespace kpdiff
