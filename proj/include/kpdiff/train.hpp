#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "kpdiff/deformations.hpp"
#include "kpdiff/edm.hpp"
#include "kpdiff/losses.hpp"
#include "kpdiff/model.hpp"
#include "kpdiff/parallel.hpp"
#include "kpdiff/synthetic.hpp"

namespace kpdiff {

struct DataConfig {
  int shapes = 200;
  int points = 256;
  int holdout = 40;
  std::uint64_t seed = 11;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 12;
  int accumulation_steps = 4;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int fps_anchors = 0;  // 0: one anchor per keypoint
  std::uint64_t seed = 7;
  int threads = 0;
  ModelConfig model;
  LossWeights loss;
  EdmConfig edm;
  DeformConfig deform;
  DataConfig data;

  void validate() const {
    if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (batch_size < 1 || accumulation_steps < 1 || batch_size % accumulation_steps != 0) {
      throw Error(ErrorCode::InvalidConfig, "batch_size must be a positive multiple of accumulation_steps");
    }
    if (!(learning_rate >= 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be >= 0");
    if (fps_anchors < 0) throw Error(ErrorCode::InvalidConfig, "fps_anchors must be >= 0");
    if (data.shapes < 1 || data.points < model.keypoints || data.holdout < 0) {
      throw Error(ErrorCode::InvalidConfig, "data sizes out of range");
    }
    model.validate();
    loss.validate();
    edm.validate();
  }
};

/// Position in the optimisation schedule.
struct StepInfo {
  long step = 0;
  long epoch = 0;
  long total_steps = 1;
  long total_epochs = 1;
};

/// Every random quantity one training sample consumes.
struct SampleDraw {
  DeformationChain chain;
  Points deformed;
  Mat3 deform_matrix;
  Points anchors;
  double sigma = 1.0;
  Points noise;
  Eigen::VectorXd aux_eps;
};

inline SampleDraw draw_sample(const Points& shape, std::uint64_t sample_seed, const StepInfo& at, const TrainConfig& cfg) {
  Rng rng(sample_seed);
  SampleDraw d;
  d.chain = sample_chain(rng, cfg.deform);
  d.deform_matrix = d.chain.resolve(shape);
  d.deformed = transform_rows(shape, d.deform_matrix);
  const PointCloud cloud(shape);
  const auto anchors = std::min<std::size_t>(static_cast<std::size_t>(cfg.fps_anchors > 0 ? cfg.fps_anchors : cfg.model.keypoints), cloud.size());
  d.anchors = fps_from(cloud, anchors, rng.index(cloud.size())).keypoints.points;
  const auto lognormal = curriculum_params(static_cast<double>(at.step), static_cast<double>(at.total_steps), cfg.edm);
  d.sigma = sample_sigma(rng, lognormal, cfg.edm.sigma_min, cfg.edm.sigma_max);
  d.noise = add_noise(shape, 0.0, rng).eps;
  d.aux_eps.resize(cfg.model.aux_dim);
  for (auto& e : d.aux_eps) e = rng.normal();
  return d;
}

struct ObjectiveGraph {
  EncoderGraph encoded;
  EncoderGraph encoded_deformed;
  ad::Var z0;
  ad::Var denoised;
  ad::Var fps, diff, chamfer, mse, kl;
  ad::Var total;
};

/// Per-sample training objective. The latent that conditions the denoiser is
/// detached, so the diffusion term never reaches encoder parameters.
/// `fixed_z0` replaces that latent by a given value.
inline ObjectiveGraph build_objective(const Bound& p, const Points& shape, const SampleDraw& d, const TrainConfig& cfg,
                                      const std::array<double, 5>& lambda, const ad::Matrix* fixed_z0 = nullptr) {
  auto& tape = p.tape();
  const auto& mc = cfg.model;
  const auto& lw = cfg.loss;
  ObjectiveGraph g;
  auto s0 = tape.constant(shape);
  g.encoded = encode(p, s0, mc);
  g.encoded_deformed = encode(p, tape.constant(d.deformed), mc);
  auto kp = g.encoded.keypoints;

  auto z_aux = reparameterize(g.encoded.mu, g.encoded.logvar, d.aux_eps);
  auto projected = soft_project(kp, s0, mc.soft_tau);
  g.z0 = fixed_z0 ? tape.constant(*fixed_z0) : ad::detach(assemble_latent(projected, z_aux));

  auto noisy = tape.constant(Points(shape + d.sigma * d.noise));
  g.denoised = denoise(p, noisy, d.sigma, g.z0, mc, cfg.edm.sigma_data);
  auto cd = ad::add(ad::scale(ad::chamfer_oneway(g.denoised, s0), lw.alpha),
                    ad::scale(ad::chamfer_oneway(s0, g.denoised), lw.beta));
  g.diff = ad::add(ad::scale(cd, loss_weight(d.sigma, cfg.edm.sigma_data)),
                   ad::scale(ad::repulsion(g.denoised, lw.k_nn, lw.margin), lw.rho * gamma_weight(d.sigma, cfg.edm.sigma_data)));

  g.chamfer = ad::chamfer_oneway(kp, s0);
  auto anchors = tape.constant(d.anchors);
  switch (lw.fps_direction) {
    case FpsDirection::KeypointsToAnchors: g.fps = ad::chamfer_oneway(kp, anchors); break;
    case FpsDirection::AnchorsToKeypoints: g.fps = ad::chamfer_oneway(anchors, kp); break;
    case FpsDirection::Symmetric:
      g.fps = ad::scale(ad::add(ad::chamfer_oneway(kp, anchors), ad::chamfer_oneway(anchors, kp)), 0.5);
      break;
  }
  auto transformed = ad::matmul(kp, tape.constant(d.deform_matrix.transpose()));
  g.mse = ad::scale(ad::sum_squares(ad::sub(transformed, g.encoded_deformed.keypoints)), 1.0 / mc.keypoints);

  if (mc.aux_dim > 0) {
    const auto& mu = g.encoded.mu;
    const auto& lv = g.encoded.logvar;
    g.kl = ad::scale(ad::sum_all(ad::add_scalar(ad::sub(ad::add(ad::mul(mu, mu), ad::exp(lv)), lv), -1.0)), 0.5);
  } else {
    g.kl = tape.constant(ad::Matrix::Zero(1, 1));
  }

  g.total = ad::add(ad::add(ad::scale(g.fps, lambda[0]), ad::scale(g.diff, lambda[1])),
                    ad::add(ad::scale(g.chamfer, lambda[2]), ad::scale(g.mse, lambda[3])));
  if (lambda[4] != 0.0) g.total = ad::add(g.total, ad::scale(g.kl, lambda[4]));
  return g;
}

inline LossTerms terms_of(const ObjectiveGraph& g) {
  return {g.fps.scalar(), g.diff.scalar(), g.chamfer.scalar(), g.mse.scalar(), g.kl.scalar()};
}

/// Seed for the randomness of dataset item `index` in `epoch`.
inline std::uint64_t sample_seed(const TrainConfig& cfg, long epoch, std::size_t index) {
  return derive_seed(cfg.seed, {0xD7, static_cast<std::uint64_t>(epoch), index});
}

struct SampleResult {
  LossBreakdown breakdown;
  Gradients grads;
};

inline SampleResult sample_gradient(const ParamStore& params, const Points& shape, std::uint64_t seed, const StepInfo& at,
                                    const TrainConfig& cfg) {
  const auto draw = draw_sample(shape, seed, at, cfg);
  const auto lambda = loss_lambdas(cfg.loss, at.step, at.epoch, at.total_epochs);
  ad::Tape tape;
  Bound p(tape, params, true);
  auto g = build_objective(p, shape, draw, cfg, lambda);
  SampleResult r;
  r.breakdown = total_loss(terms_of(g), cfg.loss, at.step, at.epoch, at.total_epochs);
  r.breakdown.total = g.total.scalar();
  if (!std::isfinite(r.breakdown.total)) {
    throw Error(ErrorCode::NonFiniteLoss, "step " + std::to_string(at.step) + ": total=" + std::to_string(r.breakdown.total) +
                                              " sigma=" + std::to_string(draw.sigma));
  }
  tape.backward(g.total);
  r.grads = p.gradients(params);
  return r;
}

inline void axpy(Gradients& acc, const Gradients& g, double w) {
  for (const auto& [k, v] : g) {
    auto it = acc.find(k);
    if (it == acc.end()) {
      acc.emplace(k, w * v);
    } else {
      it->second += w * v;
    }
  }
}

struct BatchResult {
  Gradients grad;  // mean over the batch
  std::vector<LossBreakdown> losses;
};

/// Mean gradient over `indices`, accumulated micro-batch by micro-batch.
inline BatchResult batch_gradient(const ParamStore& params, const std::vector<Points>& shapes,
                                  const std::vector<std::size_t>& indices, const StepInfo& at, const TrainConfig& cfg,
                                  int accumulation_steps) {
  const std::size_t b = indices.size();
  std::vector<SampleResult> per(b);
  parallel_for(b, resolve_threads(cfg.threads), [&](std::size_t i) {
    per[i] = sample_gradient(params, shapes[indices[i]], sample_seed(cfg, at.epoch, indices[i]), at, cfg);
  });
  BatchResult out;
  const std::size_t micro = std::max<std::size_t>(1, (b + accumulation_steps - 1) / accumulation_steps);
  for (std::size_t start = 0; start < b; start += micro) {
    const std::size_t end = std::min(b, start + micro);
    Gradients mb;
    for (std::size_t i = start; i < end; ++i) axpy(mb, per[i].grads, 1.0 / static_cast<double>(end - start));
    axpy(out.grad, mb, static_cast<double>(end - start) / static_cast<double>(b));
  }
  for (auto& r : per) out.losses.push_back(r.breakdown);
  return out;
}

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  Gradients m, v;

  void step(ParamStore& params, const Gradients& grad, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, double(t));
    const double c2 = 1.0 - std::pow(beta2, double(t));
    for (const auto& [name, g] : grad) {
      if (!params.trainable(name)) continue;
      auto& mm = m.try_emplace(name, ad::Matrix::Zero(g.rows(), g.cols())).first->second;
      auto& vv = v.try_emplace(name, ad::Matrix::Zero(g.rows(), g.cols())).first->second;
      mm = beta1 * mm + (1.0 - beta1) * g;
      vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
      auto& p = params.at(name);
      p.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
    }
  }
};

struct EpochLog {
  long epoch = 0;  // one-based
  LossTerms terms;
  double total = 0.0;
  double kl_weight = 0.0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochLog> log;
};

inline long steps_per_epoch(std::size_t n, int batch) { return static_cast<long>((n + batch - 1) / batch); }

/// Optimises a freshly initialised model on `shapes`. Deterministic in cfg.seed.
inline TrainResult train(const std::vector<Points>& shapes, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (shapes.empty()) throw Error(ErrorCode::EmptySet, "training set is empty");
  TrainResult result{init_params(cfg.model, derive_seed(cfg.seed, {0x1A})), {}};
  Adam adam;
  adam.beta1 = cfg.adam_beta1;
  adam.beta2 = cfg.adam_beta2;
  adam.eps = cfg.adam_eps;
  const long spe = steps_per_epoch(shapes.size(), cfg.batch_size);
  StepInfo at{0, 0, spe * cfg.epochs, cfg.epochs};
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    at.epoch = epoch;
    std::vector<std::size_t> order(shapes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, {0xE0, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    EpochLog log{epoch + 1, {}, 0.0, 0.0};
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + std::min(order.size(), start + cfg.batch_size));
      auto br = batch_gradient(result.params, shapes, batch, at, cfg, cfg.accumulation_steps);
      for (const auto& l : br.losses) {
        log.terms.fps += l.terms.fps;
        log.terms.diff += l.terms.diff;
        log.terms.chamfer += l.terms.chamfer;
        log.terms.mse += l.terms.mse;
        log.terms.kl += l.terms.kl;
        log.total += l.total;
        log.kl_weight = l.lambda[4];
      }
      seen += batch.size();
      adam.step(result.params, br.grad, cfg.learning_rate);
      if (!result.params.all_finite()) {
        throw Error(ErrorCode::NonFiniteLoss, "step " + std::to_string(at.step) + ": parameters became non-finite");
      }
      ++at.step;
    }
    const double inv = 1.0 / static_cast<double>(seen);
    log.terms = {log.terms.fps * inv, log.terms.diff * inv, log.terms.chamfer * inv, log.terms.mse * inv, log.terms.kl * inv};
    log.total *= inv;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace kpdiff
