#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "kpdiff/train.hpp"

namespace kpdiff {

using Json = nlohmann::json;

struct MetricConfig {
  double corr_tau = 0.05;
  double das_window = 0.0;
  int corr_dense_points = 2048;
};

struct PriorConfig {
  double retained = 0.95;
  double bandwidth_scale = 1.0;
};

struct GenerateConfig {
  int count = 0;  // 0: one per reference shape
  int points = 0;  // 0: data.points
  int interp_steps = 8;
};

/// Every tunable of the command-line tool.
struct Config {
  TrainConfig train;
  MetricConfig metrics;
  PriorConfig prior;
  GenerateConfig generate;
};

/// Paper-scale sizes; everything else keeps the desk defaults.
inline Config paper_profile() {
  Config c;
  c.train.data.points = 2048;
  c.train.batch_size = 120;
  c.train.accumulation_steps = 10;
  c.train.epochs = 200;
  c.train.fps_anchors = 20;
  return c;
}

namespace detail {

/// Walks every (section, key, field) triple; `v` is called as v(section, key, field&).
template <typename C, typename V>
void visit_config(C& c, V&& v) {
  auto& t = c.train;
  v("train", "epochs", t.epochs);
  v("train", "batch_size", t.batch_size);
  v("train", "accumulation_steps", t.accumulation_steps);
  v("train", "learning_rate", t.learning_rate);
  v("train", "adam_beta1", t.adam_beta1);
  v("train", "adam_beta2", t.adam_beta2);
  v("train", "adam_eps", t.adam_eps);
  v("train", "fps_anchors", t.fps_anchors);
  v("train", "seed", t.seed);

  v("data", "shapes", t.data.shapes);
  v("data", "points", t.data.points);
  v("data", "holdout", t.data.holdout);
  v("data", "seed", t.data.seed);

  auto& m = t.model;
  v("model", "keypoints", m.keypoints);
  v("model", "aux_dim", m.aux_dim);
  v("model", "feature_dim", m.feature_dim);
  v("model", "embed_dim", m.embed_dim);
  v("model", "fourier_count", m.fourier_count);
  v("model", "fourier_scale", m.fourier_scale);
  v("model", "aux_hidden", m.aux_hidden);
  v("model", "aux_pooling", m.aux_pooling);
  v("model", "logvar_min", m.logvar_min);
  v("model", "logvar_max", m.logvar_max);
  v("model", "soft_tau", m.soft_tau);
  v("model", "decoder_width", m.decoder_width);
  v("model", "time_embed_dim", m.time_embed_dim);
  v("model", "film_depth", m.film_depth);
  v("model", "query_init_scale", m.query_init_scale);
  v("model", "attention_scale", m.attention_scale);
  v("model", "output_init_scale", m.output_init_scale);

  auto& l = t.loss;
  v("loss", "fps", l.fps);
  v("loss", "diff", l.diff);
  v("loss", "chamfer", l.chamfer);
  v("loss", "mse", l.mse);
  v("loss", "fps_late", l.fps_late);
  v("loss", "diff_late", l.diff_late);
  v("loss", "chamfer_late", l.chamfer_late);
  v("loss", "mse_late", l.mse_late);
  v("loss", "alpha", l.alpha);
  v("loss", "beta", l.beta);
  v("loss", "rho", l.rho);
  v("loss", "margin", l.margin);
  v("loss", "k_nn", l.k_nn);
  v("loss", "warmup_steps", l.warmup_steps);
  v("loss", "init_fraction", l.init_fraction);
  v("loss", "fps_direction", l.fps_direction);

  auto& e = t.edm;
  v("edm", "sigma_min", e.sigma_min);
  v("edm", "sigma_max", e.sigma_max);
  v("edm", "sigma_data", e.sigma_data);
  v("edm", "mu_init", e.mu_init);
  v("edm", "mu_final", e.mu_final);
  v("edm", "std_init", e.std_init);
  v("edm", "std_final", e.std_final);
  v("edm", "curriculum_fraction", e.curriculum_fraction);
  v("edm", "ladder_steps", e.ladder_steps);

  auto& d = t.deform;
  v("deform", "stretch_max", d.ranges.stretch_max);
  v("deform", "bend_max", d.ranges.bend_max);
  v("deform", "twist_max", d.ranges.twist_max);
  v("deform", "taper_max", d.ranges.taper_max);
  v("deform", "rotate_max", d.ranges.rotate_max);
  v("deform", "stretch", d.enabled[0]);
  v("deform", "bend", d.enabled[1]);
  v("deform", "twist", d.enabled[2]);
  v("deform", "taper", d.enabled[3]);
  v("deform", "rotate", d.enabled[4]);
  v("deform", "twist_source", d.twist_source);

  v("metrics", "corr_tau", c.metrics.corr_tau);
  v("metrics", "das_window", c.metrics.das_window);
  v("metrics", "corr_dense_points", c.metrics.corr_dense_points);
  v("prior", "retained", c.prior.retained);
  v("prior", "bandwidth_scale", c.prior.bandwidth_scale);
  v("generate", "count", c.generate.count);
  v("generate", "points", c.generate.points);
  v("generate", "interp_steps", c.generate.interp_steps);
}

inline const char* enum_name(AuxPooling p) { return p == AuxPooling::Mean ? "mean" : "max"; }
inline const char* enum_name(TwistSource s) { return s == TwistSource::Intermediate ? "intermediate" : "original"; }
inline const char* enum_name(FpsDirection f) {
  switch (f) {
    case FpsDirection::Symmetric: return "symmetric";
    case FpsDirection::KeypointsToAnchors: return "keypoints_to_anchors";
    case FpsDirection::AnchorsToKeypoints: return "anchors_to_keypoints";
  }
  return "symmetric";
}

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<E> options, const std::string& key) {
  for (E o : options)
    if (s == enum_name(o)) return o;
  throw Error(ErrorCode::InvalidConfig, "bad value '" + s + "' for " + key);
}

template <typename T>
Json to_json_value(const T& v) {
  if constexpr (std::is_enum_v<T>) {
    return enum_name(v);
  } else {
    return v;
  }
}

template <typename T>
void from_json_value(const Json& j, T& out, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, AuxPooling>) {
      out = parse_enum(j.get<std::string>(), {AuxPooling::Mean, AuxPooling::Max}, key);
    } else if constexpr (std::is_same_v<T, TwistSource>) {
      out = parse_enum(j.get<std::string>(), {TwistSource::Intermediate, TwistSource::Original}, key);
    } else if constexpr (std::is_same_v<T, FpsDirection>) {
      out = parse_enum(j.get<std::string>(),
                       {FpsDirection::Symmetric, FpsDirection::KeypointsToAnchors, FpsDirection::AnchorsToKeypoints}, key);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw Error(ErrorCode::InvalidConfig, key + " must be a boolean");
      out = j.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw Error(ErrorCode::InvalidConfig, key + " must be an integer");
      out = j.get<T>();
    } else {
      if (!j.is_number()) throw Error(ErrorCode::InvalidConfig, key + " must be a number");
      out = j.get<T>();
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, key + ": " + e.what());
  }
}

}  // namespace detail

inline Json to_json(const Config& c) {
  Json j = Json::object();
  detail::visit_config(c, [&](const char* sec, const char* key, const auto& field) { j[sec][key] = detail::to_json_value(field); });
  return j;
}

/// Overlays `j` on `base`. Unknown sections or keys are errors.
inline Config config_from_json(const Json& j, Config base = {}) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  std::set<std::string> known;
  detail::visit_config(base, [&](const char* sec, const char* key, auto& field) {
    known.insert(std::string(sec) + "." + key);
    known.insert(sec);
    if (j.contains(sec) && j.at(sec).contains(key)) detail::from_json_value(j.at(sec).at(key), field, std::string(sec) + "." + key);
  });
  for (const auto& [sec, body] : j.items()) {
    if (!known.count(sec)) throw Error(ErrorCode::InvalidConfig, "unknown config section '" + sec + "'");
    if (!body.is_object()) throw Error(ErrorCode::InvalidConfig, "config section '" + sec + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      if (!known.count(sec + "." + key)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + sec + "." + key + "'");
    }
  }
  base.train.validate();
  return base;
}

/// Rounds every floating-point number to 12 significant digits.
inline Json round_floats(Json j) {
  if (j.is_number_float()) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", j.get<double>());
    return std::strtod(buf, nullptr);
  }
  if (j.is_structured())
    for (auto& v : j) v = round_floats(v);
  return j;
}

/// Canonical text: sorted keys, 12-digit floats, no whitespace.
inline std::string canonical_dump(const Json& j) { return round_floats(j).dump(); }

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const Config& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical_dump(to_json(c)))));
  return buf;
}

}  // namespace kpdiff
