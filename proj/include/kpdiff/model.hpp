#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "kpdiff/autodiff.hpp"
#include "kpdiff/edm.hpp"
#include "kpdiff/error.hpp"
#include "kpdiff/geometry.hpp"
#include "kpdiff/rng.hpp"

namespace kpdiff {

enum class AuxPooling { Mean, Max };

struct ModelConfig {
  int keypoints = 10;      // d
  int aux_dim = 5;         // m
  int feature_dim = 64;    // per-point backbone features
  int embed_dim = 64;      // D, query width
  int fourier_count = 16;  // columns of the fixed frequency matrix
  double fourier_scale = 1.0;
  int aux_hidden = 32;
  AuxPooling aux_pooling = AuxPooling::Mean;
  double logvar_min = -30.0;
  double logvar_max = 10.0;
  double soft_tau = 0.02;
  int decoder_width = 64;
  int time_embed_dim = 16;
  int film_depth = 3;  // FiLM layers; the last one runs after global pooling
  double query_init_scale = 1.0;
  double attention_scale = 1.0;  // multiplies the 1/sqrt(D) logit scaling
  double output_init_scale = 0.1;

  int latent_dim() const { return 3 * keypoints + aux_dim; }

  void validate() const {
    if (keypoints < 1 || aux_dim < 0 || feature_dim < 1 || embed_dim < 1 || fourier_count < 1 || aux_hidden < 1 ||
        decoder_width < 1 || time_embed_dim < 2 || time_embed_dim % 2 != 0 || film_depth < 1) {
      throw Error(ErrorCode::InvalidConfig, "model dimensions out of range");
    }
    if (!(soft_tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "soft_tau must be positive");
  }
};

/// Named parameter tensors. Iteration order is the lexicographic name order.
class ParamStore {
 public:
  using Matrix = ad::Matrix;

  void add(const std::string& name, Matrix value, bool trainable = true) {
    tensors_[name] = std::move(value);
    if (!trainable) frozen_.insert(name);
  }
  const Matrix& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error(ErrorCode::ShapeMismatch, "unknown parameter " + name);
    return it->second;
  }
  Matrix& at(const std::string& name) { return tensors_.at(name); }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  bool trainable(const std::string& name) const { return frozen_.count(name) == 0; }
  const std::map<std::string, Matrix>& tensors() const { return tensors_; }
  std::map<std::string, Matrix>& tensors() { return tensors_; }
  const std::set<std::string>& frozen() const { return frozen_; }
  void set_frozen(std::set<std::string> f) { frozen_ = std::move(f); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : tensors_) n += static_cast<std::size_t>(v.size());
    return n;
  }
  bool all_finite() const {
    for (const auto& [k, v] : tensors_)
      if (!v.allFinite()) return false;
    return true;
  }
  bool operator==(const ParamStore& o) const { return tensors_ == o.tensors_ && frozen_ == o.frozen_; }

 private:
  std::map<std::string, Matrix> tensors_;
  std::set<std::string> frozen_;
};

using Gradients = std::map<std::string, ad::Matrix>;

namespace detail {
inline ad::Matrix gaussian(Rng& rng, Eigen::Index r, Eigen::Index c, double std) {
  ad::Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = std * rng.normal();
  return m;
}
inline void dense(ParamStore& p, Rng& rng, const std::string& name, int in, int out, double gain = std::sqrt(2.0)) {
  p.add(name + ".w", gaussian(rng, in, out, gain / std::sqrt(static_cast<double>(in))));
  p.add(name + ".b", ad::Matrix::Zero(1, out));
}
}  // namespace detail

/// Seeded initialisation of every encoder and denoiser tensor.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore p;
  Rng rng(seed);
  const int fourier = 2 * cfg.fourier_count;
  p.add("enc.fourier", detail::gaussian(rng, 3, cfg.fourier_count, cfg.fourier_scale), false);
  detail::dense(p, rng, "enc.feat1", 3 + fourier, cfg.feature_dim);
  detail::dense(p, rng, "enc.feat2", cfg.feature_dim, cfg.feature_dim);
  detail::dense(p, rng, "enc.embed", cfg.feature_dim + fourier, cfg.embed_dim, 1.0);
  p.add("enc.key", detail::gaussian(rng, cfg.embed_dim, cfg.embed_dim, 1.0 / std::sqrt(double(cfg.embed_dim))));
  p.add("enc.value", detail::gaussian(rng, cfg.embed_dim, cfg.embed_dim, 1.0 / std::sqrt(double(cfg.embed_dim))));
  p.add("enc.queries", detail::gaussian(rng, cfg.keypoints, cfg.embed_dim, cfg.query_init_scale));
  detail::dense(p, rng, "enc.aux1", cfg.embed_dim, cfg.aux_hidden);
  detail::dense(p, rng, "enc.mu", cfg.aux_hidden, std::max(cfg.aux_dim, 1), 1.0);
  detail::dense(p, rng, "enc.logvar", cfg.aux_hidden, std::max(cfg.aux_dim, 1), 1.0);

  const int h = cfg.decoder_width;
  detail::dense(p, rng, "dec.time1", cfg.time_embed_dim, h);
  detail::dense(p, rng, "dec.time2", h, h, 1.0);
  detail::dense(p, rng, "dec.lat1", cfg.latent_dim(), h);
  detail::dense(p, rng, "dec.lat2", h, h, 1.0);
  detail::dense(p, rng, "dec.in", 3, h);
  detail::dense(p, rng, "dec.tok", 3, h);
  detail::dense(p, rng, "dec.ctok", 2 * h, h, 1.0);
  p.add("dec.attn_q", detail::gaussian(rng, h, h, 1.0 / std::sqrt(double(h))));
  p.add("dec.attn_k", detail::gaussian(rng, h, h, 1.0 / std::sqrt(double(h))));
  p.add("dec.attn_v", detail::gaussian(rng, h, h, 1.0 / std::sqrt(double(h))));
  for (int l = 0; l < cfg.film_depth; ++l) {
    const std::string n = "dec.film" + std::to_string(l);
    const int in = (l == cfg.film_depth - 1 && cfg.film_depth > 1) ? 2 * h : h;
    detail::dense(p, rng, n, in, h);
    detail::dense(p, rng, n + ".scale", 2 * h, h, 0.1);
    detail::dense(p, rng, n + ".shift", 2 * h, h, 0.1);
  }
  detail::dense(p, rng, "dec.out", h, 3, cfg.output_init_scale);
  return p;
}

/// Parameters placed on a tape, either as differentiable leaves or constants.
class Bound {
 public:
  Bound(ad::Tape& tape, const ParamStore& params, bool requires_grad) : tape_(tape) {
    for (const auto& [name, value] : params.tensors()) {
      vars_.emplace(name, requires_grad && params.trainable(name) ? tape.leaf(value) : tape.constant(value));
    }
  }
  ad::Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw Error(ErrorCode::ShapeMismatch, "unbound parameter " + name);
    return it->second;
  }
  ad::Tape& tape() const { return tape_; }

  Gradients gradients(const ParamStore& params) const {
    Gradients g;
    for (const auto& [name, v] : vars_)
      if (params.trainable(name)) g.emplace(name, tape_.grad(v));
    return g;
  }

 private:
  ad::Tape& tape_;
  std::map<std::string, ad::Var> vars_;
};

inline ad::Var dense(const Bound& p, const std::string& name, ad::Var x) {
  return ad::add_row(ad::matmul(x, p[name + ".w"]), p[name + ".b"]);
}

/// [sin(2 pi x F), cos(2 pi x F)] per row.
inline ad::Var fourier_encode(ad::Var x, ad::Var freq) {
  auto proj = ad::scale(ad::matmul(x, freq), 2.0 * std::numbers::pi);
  return ad::concat_cols({ad::sin(proj), ad::cos(proj)});
}

inline Eigen::RowVectorXd fourier_encode(const Vec3& x, const ad::Matrix& freq) {
  const Eigen::RowVectorXd proj = 2.0 * std::numbers::pi * (x.transpose() * freq);
  Eigen::RowVectorXd out(2 * proj.size());
  out << proj.array().sin().matrix(), proj.array().cos().matrix();
  return out;
}

struct EncoderGraph {
  ad::Var keypoints;  // d x 3
  ad::Var attention;  // d x N, rows on the simplex
  ad::Var mu;         // 1 x m
  ad::Var logvar;     // 1 x m, clamped
};

/// Query cross-attention over per-point features; keypoints are attention-weighted
/// convex combinations of the input coordinates.
inline EncoderGraph encode(const Bound& p, ad::Var points, const ModelConfig& cfg) {
  if (points.rows() < cfg.keypoints) throw Error(ErrorCode::TooFewPoints, "encoder needs N >= d");
  auto gamma = fourier_encode(points, p["enc.fourier"]);
  auto h = ad::relu(dense(p, "enc.feat1", ad::concat_cols({points, gamma})));
  auto f = ad::relu(dense(p, "enc.feat2", h));
  auto e = dense(p, "enc.embed", ad::concat_cols({f, gamma}));
  auto keys = ad::matmul(e, p["enc.key"]);
  auto values = ad::matmul(e, p["enc.value"]);
  auto logits = ad::scale(ad::matmul(p["enc.queries"], ad::transpose(keys)), cfg.attention_scale / std::sqrt(double(cfg.embed_dim)));
  auto attn = ad::softmax_rows(logits);
  auto kp = ad::matmul(attn, points);
  auto attended = ad::matmul(attn, values);
  auto pooled = cfg.aux_pooling == AuxPooling::Mean ? ad::mean_rows(attended) : ad::max_rows(attended);
  auto hidden = ad::relu(dense(p, "enc.aux1", pooled));
  auto mu = dense(p, "enc.mu", hidden);
  auto logvar = ad::clamp(dense(p, "enc.logvar", hidden), cfg.logvar_min, cfg.logvar_max);
  if (cfg.aux_dim == 0) {
    mu = ad::slice_cols(mu, 0, 0);
    logvar = ad::slice_cols(logvar, 0, 0);
  }
  return {kp, attn, mu, logvar};
}

/// Softmin-weighted average of surface points with temperature tau.
inline ad::Var soft_project(ad::Var keypoints, ad::Var surface, double tau) {
  auto w = ad::softmax_rows(ad::scale(ad::pairwise_dist(keypoints, surface), -1.0 / tau));
  return ad::matmul(w, surface);
}

inline Points soft_project(const Points& keypoints, const Points& surface, double tau) {
  ad::Tape t;
  return Points(soft_project(t.constant(keypoints), t.constant(surface), tau).value());
}

/// vec(K) (row-major) followed by z_aux.
inline Eigen::VectorXd assemble_latent(const Points& keypoints, const Eigen::VectorXd& z_aux) {
  Eigen::VectorXd z(3 * keypoints.rows() + z_aux.size());
  for (Eigen::Index k = 0; k < keypoints.rows(); ++k)
    for (int c = 0; c < 3; ++c) z[3 * k + c] = keypoints(k, c);
  z.tail(z_aux.size()) = z_aux;
  return z;
}

inline Eigen::VectorXd assemble_latent(const Points& keypoints, const Eigen::VectorXd& z_aux, const ModelConfig& cfg) {
  if (keypoints.rows() != cfg.keypoints || z_aux.size() != cfg.aux_dim) {
    throw Error(ErrorCode::ShapeMismatch, "latent parts do not match d x 3 and m");
  }
  return assemble_latent(keypoints, z_aux);
}

struct LatentParts {
  Points keypoints;
  Eigen::VectorXd z_aux;
};

inline LatentParts split_latent(const Eigen::VectorXd& z0, int keypoints) {
  if (z0.size() < 3 * keypoints) throw Error(ErrorCode::ShapeMismatch, "latent shorter than 3d");
  LatentParts out{Points(keypoints, 3), z0.tail(z0.size() - 3 * keypoints)};
  for (int k = 0; k < keypoints; ++k)
    for (int c = 0; c < 3; ++c) out.keypoints(k, c) = z0[3 * k + c];
  return out;
}

inline ad::Var assemble_latent(ad::Var keypoints, ad::Var z_aux) {
  auto flat = ad::reshape(keypoints, 1, keypoints.value().size());
  return z_aux.cols() == 0 ? flat : ad::concat_cols({flat, z_aux});
}

/// z = mu + exp(logvar / 2) * eps with logvar clamped.
inline ad::Var reparameterize(ad::Var mu, ad::Var logvar, const Eigen::VectorXd& eps) {
  auto std = ad::exp(ad::scale(logvar, 0.5));
  auto noise = mu.tape->constant(eps.transpose());
  return ad::add(mu, ad::mul(std, noise));
}

inline Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, Rng& rng,
                                      double logvar_min = -30.0, double logvar_max = 10.0) {
  if (mu.size() != logvar.size()) throw Error(ErrorCode::SizeMismatch, "mu/logvar size mismatch");
  Eigen::VectorXd z(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double lv = std::clamp(logvar[i], logvar_min, logvar_max);
    z[i] = mu[i] + std::exp(0.5 * lv) * rng.normal();
  }
  return z;
}

/// Fixed sinusoidal embedding of the scalar noise level.
inline ad::Matrix noise_embedding(double c_noise, int dim) {
  ad::Matrix e(1, dim);
  const int half = dim / 2;
  for (int j = 0; j < half; ++j) {
    const double freq = std::exp(std::log(100.0) * j / std::max(1, half - 1));
    e(0, j) = std::sin(c_noise * freq);
    e(0, half + j) = std::cos(c_noise * freq);
  }
  return e;
}

/// F_theta(x_in, c_noise, z0): per-point network conditioned by FiLM on the
/// noise level and latent code, with a keypoint cross-attention block and one
/// global pooled summary.
inline ad::Var denoiser_network(const Bound& p, ad::Var x_in, double c_noise, ad::Var z0, const ModelConfig& cfg) {
  auto& tape = p.tape();
  const Eigen::Index n = x_in.rows();
  if (z0.rows() != 1 || z0.cols() != cfg.latent_dim()) throw Error(ErrorCode::ShapeMismatch, "z0 must be 1 x (3d+m)");
  auto temb = tape.constant(noise_embedding(c_noise, cfg.time_embed_dim));
  auto t = dense(p, "dec.time2", ad::relu(dense(p, "dec.time1", temb)));
  auto z = dense(p, "dec.lat2", ad::relu(dense(p, "dec.lat1", z0)));
  auto cond = ad::concat_cols({t, z});

  auto h = ad::relu(dense(p, "dec.in", x_in));
  auto kp = ad::reshape(ad::slice_cols(z0, 0, 3 * cfg.keypoints), cfg.keypoints, 3);
  auto tokens = ad::concat_rows({ad::relu(dense(p, "dec.tok", kp)), dense(p, "dec.ctok", cond)});
  auto q = ad::matmul(h, p["dec.attn_q"]);
  auto k = ad::matmul(tokens, p["dec.attn_k"]);
  auto v = ad::matmul(tokens, p["dec.attn_v"]);
  auto attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(double(cfg.decoder_width))));
  h = ad::add(h, ad::matmul(attn, v));

  for (int l = 0; l < cfg.film_depth; ++l) {
    const std::string name = "dec.film" + std::to_string(l);
    if (l == cfg.film_depth - 1 && cfg.film_depth > 1) {
      h = ad::concat_cols({h, ad::broadcast_rows(ad::mean_rows(h), n)});
    }
    h = ad::relu(dense(p, name, h));
    auto scale = ad::add_scalar(dense(p, name + ".scale", cond), 1.0);
    auto shift = dense(p, name + ".shift", cond);
    h = ad::add_row(ad::mul_row(h, scale), shift);
  }
  return dense(p, "dec.out", h);
}

/// D(x, sigma, z0) = c_skip x + c_out F(c_in x, c_noise, z0).
inline ad::Var denoise(const Bound& p, ad::Var noisy, double sigma, ad::Var z0, const ModelConfig& cfg, double sigma_data) {
  const auto c = precondition(sigma, sigma_data);
  auto f = denoiser_network(p, ad::scale(noisy, c.c_in), c.c_noise, z0, cfg);
  return ad::add(ad::scale(noisy, c.c_skip), ad::scale(f, c.c_out));
}

struct EncodeResult {
  KeypointSet keypoints;
  ad::Matrix attention;
  Eigen::VectorXd mu;
  Eigen::VectorXd logvar;
};

inline EncodeResult encode(const ParamStore& params, const Points& cloud, const ModelConfig& cfg) {
  ad::Tape tape;
  Bound p(tape, params, false);
  auto g = encode(p, tape.constant(cloud), cfg);
  return {KeypointSet(Points(g.keypoints.value())), g.attention.value(), g.mu.value().row(0).transpose(),
          g.logvar.value().row(0).transpose()};
}

/// Read-only denoiser over a parameter store; shareable across threads.
struct ModelDenoiser {
  const ParamStore& params;
  ModelConfig cfg;
  double sigma_data = 0.3;

  Points operator()(const Points& x, double sigma, const Eigen::VectorXd& z0) const {
    if (z0.size() != cfg.latent_dim()) throw Error(ErrorCode::ShapeMismatch, "z0 length must be 3d+m");
    ad::Tape tape;
    Bound p(tape, params, false);
    auto out = denoise(p, tape.constant(x), sigma, tape.constant(z0.transpose()), cfg, sigma_data);
    return Points(out.value());
  }
};

}  // namespace kpdiff
