#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kpdiff/checkpoint.hpp"
#include "kpdiff/config.hpp"
#include "kpdiff/evaluation.hpp"
#include "kpdiff/generate.hpp"
#include "kpdiff/gradcheck.hpp"
#include "kpdiff/io.hpp"
#include "kpdiff/prior.hpp"

namespace kpdiff::cli {

namespace fs = std::filesystem;

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw Error(ErrorCode::ShapeMismatch, "ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline Json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Json prior_json(const KeypointPrior& p) {
  return {{"keypoints", p.keypoints},          {"mean", vector_json(p.mean)},
          {"basis", matrix_json(p.basis)},     {"variances", vector_json(p.variances)},
          {"total_variance", p.total_variance}, {"coords", matrix_json(p.coords)},
          {"bandwidth", vector_json(p.bandwidth)}, {"aux_mean", vector_json(p.aux_mean)}};
}

inline KeypointPrior prior_from_json(const Json& j) {
  KeypointPrior p;
  p.keypoints = j.at("keypoints").get<int>();
  p.mean = vector_from_json(j.at("mean"));
  p.variances = vector_from_json(j.at("variances"));
  const auto r = p.variances.size();
  p.basis = matrix_from_json(j.at("basis"));
  if (p.basis.rows() == 0) p.basis.resize(p.mean.size(), r);
  p.total_variance = j.at("total_variance").get<double>();
  p.coords = matrix_from_json(j.at("coords"), r);
  p.bandwidth = vector_from_json(j.at("bandwidth"));
  p.aux_mean = vector_from_json(j.at("aux_mean"));
  return p;
}

inline std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string loss_csv(const std::vector<EpochLog>& log) {
  std::string s = "epoch,total,fps,diff,chamfer,mse,kl,kl_weight\n";
  for (const auto& e : log) {
    s += std::to_string(e.epoch);
    for (double v : {e.total, e.terms.fps, e.terms.diff, e.terms.chamfer, e.terms.mse, e.terms.kl, e.kl_weight}) s += "," + format_g(v);
    s += "\n";
  }
  return s;
}

/// Shapes of the configured synthetic corpus: the first data.shapes are the
/// training split, the remaining data.holdout are held out.
struct Corpus {
  std::vector<synth::Sample> samples;
  std::vector<Points> train;
  std::vector<Points> heldout;
  std::vector<synth::Sample> heldout_samples;
};

inline Corpus make_corpus(const TrainConfig& t) {
  Corpus c;
  c.samples = synth::make_dataset(static_cast<std::size_t>(t.data.shapes + t.data.holdout), static_cast<std::size_t>(t.data.points),
                                  t.data.seed);
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    if (static_cast<int>(i) < t.data.shapes) {
      c.train.push_back(c.samples[i].cloud.cloud.points);
    } else {
      c.heldout.push_back(c.samples[i].cloud.cloud.points);
      c.heldout_samples.push_back(c.samples[i]);
    }
  }
  return c;
}

inline KeypointPrior fit_prior_from(const ParamStore& params, const std::vector<Points>& shapes, const Config& cfg) {
  std::vector<Points> sets(shapes.size());
  std::vector<Eigen::VectorXd> mus(shapes.size());
  const auto& mc = cfg.train.model;
  parallel_for(shapes.size(), resolve_threads(cfg.train.threads), [&](std::size_t i) {
    const auto enc = encode(params, shapes[i], mc);
    sets[i] = soft_project(enc.keypoints.points, shapes[i], mc.soft_tau);
    mus[i] = enc.mu;
  });
  return fit_prior(sets, mus, cfg.prior.retained, cfg.prior.bandwidth_scale);
}

inline std::vector<std::pair<std::string, fs::path>> cloud_files(const std::string& dir) {
  std::vector<std::pair<std::string, fs::path>> files;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".xyz" || ext == ".ply" || ext == ".txt")) files.emplace_back(e.path().stem().string(), e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::EmptySet, "no point cloud files in " + dir);
  return files;
}

inline Points load_points(const std::string& path) { return cloud_of(load_pointcloud(path)).points; }

inline LabeledPointCloud load_labeled(const std::string& path) {
  auto parsed = load_pointcloud(path);
  if (auto* l = std::get_if<LabeledPointCloud>(&parsed)) return *l;
  throw Error(ErrorCode::NoLabels, "file has no label column: " + path);
}

inline std::map<std::string, std::vector<Annotation>> load_annotations(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Io, "annotations JSON: " + std::string(e.what()));
  }
  std::map<std::string, std::vector<Annotation>> out;
  for (const auto& [id, list] : j.items()) {
    auto& v = out[id];
    for (const auto& a : list) {
      const auto xyz = a.at("xyz").get<std::vector<double>>();
      if (xyz.size() != 3) throw Error(ErrorCode::ShapeMismatch, "annotation xyz needs 3 values");
      v.push_back({Vec3(xyz[0], xyz[1], xyz[2]), a.at("label").get<int>()});
    }
  }
  return out;
}

inline Json annotations_json(const std::vector<Annotation>& ann) {
  Json list = Json::array();
  for (const auto& a : ann) list.push_back({{"xyz", {a.xyz.x(), a.xyz.y(), a.xyz.z()}}, {"label", a.label}});
  return list;
}

inline std::string indexed(const std::string& stem, std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return stem + buf + ext;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
}

inline Json load_json(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
  }
}

inline void emit(std::ostream& os, Json j, const std::string& hash) {
  j["config_hash"] = hash;
  os << round_floats(std::move(j)).dump(2) << "\n";
}

struct Run {
  Config cfg;
  ParamStore params;
  KeypointPrior prior;
};

inline Run load_run(const std::string& dir) {
  Run r;
  r.cfg = config_from_json(load_json((fs::path(dir) / "config.json").string()));
  r.params = load_params((fs::path(dir) / "params.bin").string());
  r.prior = prior_from_json(load_json((fs::path(dir) / "prior.json").string()));
  return r;
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int dispatch(int argc, const char* const* argv, Streams io = {}) {
  CLI::App app{"Keypoint-conditioned point cloud diffusion toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, profile = "desk", out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", config_path, "JSON config overlay");
  app.add_option("--profile", profile, "base profile: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  auto* seed_opt = app.add_option("--seed", seed, "overrides train.seed");
  app.add_option("--out", out_dir, "output file or directory");
  app.add_option("--threads", threads, "worker cap (falls back to KPDIFF_THREADS)");

  // deform
  auto* deform = app.add_subcommand("deform", "apply a random deformation chain to a cloud");
  std::string in_path, chain_json;
  deform->add_option("--in", in_path)->required();
  deform->add_option("--chain-json", chain_json, "write the sampled chain as JSON");

  // fps
  auto* fps_cmd = app.add_subcommand("fps", "farthest point sampling");
  std::size_t fps_k = 0;
  fps_cmd->add_option("--in", in_path)->required();
  fps_cmd->add_option("-k,--k", fps_k)->required();

  // metrics
  auto* metrics = app.add_subcommand("metrics", "evaluation metrics");
  metrics->require_subcommand(1);
  std::string a_path, b_path, pred_dir, ann_path, cloud_dir, gen_dir, ref_dir, ckpt;
  double window = -1.0, tau = -1.0;
  auto* m_cd = metrics->add_subcommand("cd", "symmetric Chamfer distance");
  m_cd->add_option("--a", a_path)->required();
  m_cd->add_option("--b", b_path)->required();
  auto* m_emd = metrics->add_subcommand("emd", "earth mover's distance");
  m_emd->add_option("--a", a_path)->required();
  m_emd->add_option("--b", b_path)->required();
  auto* m_das = metrics->add_subcommand("das", "dual alignment score over consecutive shapes");
  m_das->add_option("--pred", pred_dir, "directory of predicted keypoint files")->required();
  m_das->add_option("--annotations", ann_path)->required();
  m_das->add_option("--window", window);
  auto* m_corr = metrics->add_subcommand("corr", "keypoint-part correlation");
  m_corr->add_option("--pred", pred_dir)->required();
  m_corr->add_option("--clouds", cloud_dir, "directory of labelled clouds")->required();
  m_corr->add_option("--tau", tau);
  auto* m_mmd = metrics->add_subcommand("mmd", "minimum matching distance (Chamfer)");
  m_mmd->add_option("--gen", gen_dir)->required();
  m_mmd->add_option("--ref", ref_dir)->required();
  auto* m_loss = metrics->add_subcommand("loss", "per-sample training objective of a checkpoint");
  m_loss->add_option("--run", ckpt, "training output directory")->required();
  m_loss->add_option("--in", in_path)->required();
  long loss_step = 0, loss_epoch = 0;
  m_loss->add_option("--step", loss_step);
  m_loss->add_option("--epoch", loss_epoch);

  // schedule-dump
  auto* sched = app.add_subcommand("schedule-dump", "noise curriculum, loss weights and sampling ladder");
  long sched_steps = 0;
  sched->add_option("--steps", sched_steps, "total optimisation steps (default: from config)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train on the synthetic corpus");

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "unconditional generation from a trained run");
  std::string run_dir;
  int count = -1;
  sample_cmd->add_option("--run", run_dir)->required();
  sample_cmd->add_option("--count", count);

  // interpolate
  auto* interp_cmd = app.add_subcommand("interpolate", "decode a linear keypoint path between two training shapes");
  std::size_t ia = 0, ib = 1;
  int steps = -1;
  interp_cmd->add_option("--run", run_dir)->required();
  interp_cmd->add_option("--a", ia);
  interp_cmd->add_option("--b", ib);
  interp_cmd->add_option("--steps", steps);

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the composed training loss");
  double tol = 1e-4;
  int grad_points = 32;
  std::size_t grad_coords = 200;
  grad_cmd->add_option("--tol", tol);
  grad_cmd->add_option("--points", grad_points);
  grad_cmd->add_option("--max-coords", grad_coords);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "write the synthetic corpus");
  int synth_count = -1, synth_points = -1;
  synth_cmd->add_option("--count", synth_count);
  synth_cmd->add_option("--points", synth_points);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    io.out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    io.err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  try {
    Config cfg = profile == "paper" ? paper_profile() : Config{};
    if (!config_path.empty()) cfg = config_from_json(load_json(config_path), cfg);
    if (seed_opt->count()) cfg.train.seed = seed;
    cfg.train.threads = resolve_threads(threads);
    cfg.train.validate();
    const std::string hash = config_hash(cfg);
    const auto& tc = cfg.train;

    if (deform->parsed()) {
      const Points p = load_points(in_path);
      Rng rng(derive_seed(tc.seed, {0xDF}));
      const auto chain = sample_chain(rng, tc.deform);
      const Mat3 m = chain.resolve(p);
      Json specs = Json::array();
      for (const auto& s : chain.specs) {
        Json js = {{"kind", to_string(s.kind)}, {"amount", s.amount}};
        if (s.kind == DeformKind::Stretch) js["direction"] = {s.direction.x(), s.direction.y(), s.direction.z()};
        if (s.kind == DeformKind::Bend) js["axes"] = {s.in_axis, s.out_axis};
        specs.push_back(std::move(js));
      }
      if (!out_dir.empty()) save_points(out_dir, transform_rows(p, m));
      Json report = {{"command", "deform"}, {"matrix", matrix_json(m)}, {"chain", specs}};
      if (!chain_json.empty()) write_file(chain_json, round_floats(report).dump(2) + "\n");
      emit(io.out, report, hash);
      return 0;
    }
    if (fps_cmd->parsed()) {
      const PointCloud pc(load_points(in_path));
      const auto r = fps(pc, fps_k, tc.seed);
      if (!out_dir.empty()) save_points(out_dir, r.keypoints.points);
      emit(io.out, {{"command", "fps"}, {"indices", r.indices}, {"points", matrix_json(r.keypoints.points)}}, hash);
      return 0;
    }
    if (metrics->parsed()) {
      if (m_cd->parsed()) {
        emit(io.out, {{"cd", chamfer_symmetric(load_points(a_path), load_points(b_path))}}, hash);
      } else if (m_emd->parsed()) {
        emit(io.out, {{"emd", emd(load_points(a_path), load_points(b_path))}}, hash);
      } else if (m_das->parsed()) {
        const auto ann = load_annotations(ann_path);
        std::vector<DasShape> shapes;
        std::vector<std::string> ids;
        for (const auto& [id, path] : cloud_files(pred_dir)) {
          auto it = ann.find(id);
          if (it == ann.end()) throw Error(ErrorCode::NoAnnotations, "no annotations for shape " + id);
          shapes.push_back({KeypointSet(load_points(path.string())), it->second});
          ids.push_back(id);
        }
        if (shapes.size() < 2) throw Error(ErrorCode::TooFewSamples, "DAS needs at least two shapes");
        const double w = window >= 0.0 ? window : cfg.metrics.das_window;
        Json pairs = Json::array();
        double sum = 0.0;
        for (std::size_t i = 0; i + 1 < shapes.size(); ++i) {
          const double s = das({shapes[i], shapes[i + 1], w});
          pairs.push_back({{"reference", ids[i]}, {"evaluation", ids[i + 1]}, {"das", s}});
          sum += s;
        }
        emit(io.out, {{"das", sum / static_cast<double>(pairs.size())}, {"window", w}, {"pairs", pairs}}, hash);
      } else if (m_corr->parsed()) {
        CorrelationInputs in;
        in.tau = tau > 0.0 ? tau : cfg.metrics.corr_tau;
        const auto clouds = cloud_files(cloud_dir);
        std::map<std::string, fs::path> by_id(clouds.begin(), clouds.end());
        for (const auto& [id, path] : cloud_files(pred_dir)) {
          auto it = by_id.find(id);
          if (it == by_id.end()) throw Error(ErrorCode::NoLabels, "no labelled cloud for shape " + id);
          in.keypoints.emplace_back(load_points(path.string()));
          in.clouds.push_back(load_labeled(it->second.string()));
        }
        const auto r = keypoint_correlation_detail(in);
        emit(io.out, {{"corr", r.score}, {"tau", in.tau}, {"association", matrix_json(r.association)}}, hash);
      } else if (m_mmd->parsed()) {
        std::vector<Points> gen, ref;
        for (const auto& f : cloud_files(gen_dir)) gen.push_back(load_points(f.second.string()));
        for (const auto& f : cloud_files(ref_dir)) ref.push_back(load_points(f.second.string()));
        emit(io.out, {{"mmd_cd", mmd_cd(gen, ref)}, {"generated", gen.size()}, {"reference", ref.size()}}, hash);
      } else if (m_loss->parsed()) {
        const auto run = load_run(ckpt);
        const Points shape = load_points(in_path);
        const auto& rc = run.cfg.train;
        const long spe = steps_per_epoch(static_cast<std::size_t>(rc.data.shapes), rc.batch_size);
        const StepInfo at{loss_step, loss_epoch, spe * rc.epochs, rc.epochs};
        const auto r = sample_gradient(run.params, shape, derive_seed(tc.seed, {0x10}), at, rc);
        const auto& t = r.breakdown.terms;
        emit(io.out,
             {{"fps", t.fps}, {"diff", t.diff}, {"chamfer", t.chamfer}, {"mse", t.mse}, {"kl", t.kl},
              {"lambda", r.breakdown.lambda}, {"total", r.breakdown.total}, {"run_config_hash", config_hash(run.cfg)}},
             hash);
      }
      return 0;
    }
    if (sched->parsed()) {
      const long total = sched_steps > 0 ? sched_steps
                                         : steps_per_epoch(static_cast<std::size_t>(tc.data.shapes), tc.batch_size) * tc.epochs;
      const long spe = std::max<long>(1, total / tc.epochs);
      Json rows = Json::array();
      for (long s = 0; s <= total; ++s) {
        const long epoch = std::min<long>(s / spe, tc.epochs - 1);
        const auto ln = curriculum_params(static_cast<double>(s), static_cast<double>(total), tc.edm);
        rows.push_back({{"step", s}, {"epoch", epoch}, {"mu", ln.mu}, {"std", ln.std},
                        {"lambda", loss_lambdas(tc.loss, s, epoch, tc.epochs)}});
      }
      emit(io.out, {{"total_steps", total}, {"schedule", rows}, {"ladder", sigma_ladder(tc.edm)}}, hash);
      return 0;
    }
    if (train_cmd->parsed()) {
      if (out_dir.empty()) throw Error(ErrorCode::InvalidConfig, "train needs --out DIR");
      ensure_dir(out_dir);
      const auto corpus = make_corpus(tc);
      const fs::path dir(out_dir);
      write_file((dir / "config.json").string(), to_json(cfg).dump(2) + "\n");
      auto result = train(corpus.train, tc, [&](const EpochLog& e) {
        io.err << "epoch " << e.epoch << " total " << format_g(e.total) << "\n";
      });
      save_params((dir / "params.bin").string(), result.params);
      write_file((dir / "loss.csv").string(), loss_csv(result.log));
      const auto prior = fit_prior_from(result.params, corpus.train, cfg);
      write_file((dir / "prior.json").string(), prior_json(prior).dump() + "\n");
      Json manifest = {{"format", "kpdiff-checkpoint"},
                       {"version", kCheckpointVersion},
                       {"config_hash", hash},
                       {"seed", tc.seed},
                       {"keypoints", tc.model.keypoints},
                       {"aux_dim", tc.model.aux_dim},
                       {"latent_dim", tc.model.latent_dim()},
                       {"parameters", result.params.parameter_count()},
                       {"epochs", tc.epochs}};
      Json tensors = Json::object();
      for (const auto& [name, m] : result.params.tensors()) tensors[name] = {m.rows(), m.cols()};
      manifest["tensors"] = tensors;
      write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
      const auto& first = result.log.front();
      const auto& last = result.log.back();
      emit(io.out,
           {{"command", "train"}, {"epochs", tc.epochs}, {"first_total", first.total}, {"final_total", last.total},
            {"prior_rank", prior.rank()}, {"out", out_dir}},
           hash);
      return 0;
    }
    if (sample_cmd->parsed()) {
      if (out_dir.empty()) throw Error(ErrorCode::InvalidConfig, "sample needs --out DIR");
      const auto run = load_run(run_dir);
      const auto& rc = run.cfg.train;
      const auto corpus = make_corpus(rc);
      const std::size_t n = count >= 0 ? static_cast<std::size_t>(count)
                                       : (run.cfg.generate.count > 0 ? static_cast<std::size_t>(run.cfg.generate.count)
                                                                     : corpus.train.size());
      const int pts = run.cfg.generate.points > 0 ? run.cfg.generate.points : rc.data.points;
      const auto shapes = generate(run.prior, run.params, rc.model, rc.edm, pts, n, tc.seed, tc.threads);
      ensure_dir(out_dir);
      std::vector<Points> clouds;
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        save_points((fs::path(out_dir) / indexed("shape", i, ".ply")).string(), shapes[i].cloud);
        save_points((fs::path(out_dir) / indexed("keypoints", i, ".ply")).string(), shapes[i].keypoints);
        clouds.push_back(shapes[i].cloud);
      }
      Json j = {{"command", "sample"}, {"count", shapes.size()}, {"points", pts}, {"run_config_hash", config_hash(run.cfg)}};
      if (!clouds.empty()) j["mmd_cd_train"] = mmd_cd(clouds, corpus.train);
      emit(io.out, j, hash);
      return 0;
    }
    if (interp_cmd->parsed()) {
      if (out_dir.empty()) throw Error(ErrorCode::InvalidConfig, "interpolate needs --out DIR");
      const auto run = load_run(run_dir);
      const auto& rc = run.cfg.train;
      const auto corpus = make_corpus(rc);
      if (ia >= corpus.train.size() || ib >= corpus.train.size()) throw Error(ErrorCode::InvalidConfig, "shape index out of range");
      const auto ka = soft_project(encode(run.params, corpus.train[ia], rc.model).keypoints.points, corpus.train[ia], rc.model.soft_tau);
      const auto kb = soft_project(encode(run.params, corpus.train[ib], rc.model).keypoints.points, corpus.train[ib], rc.model.soft_tau);
      const int s = steps > 0 ? steps : run.cfg.generate.interp_steps;
      const int pts = run.cfg.generate.points > 0 ? run.cfg.generate.points : rc.data.points;
      Eigen::VectorXd aux = run.prior.aux_mean.size() == rc.model.aux_dim ? run.prior.aux_mean : Eigen::VectorXd::Zero(rc.model.aux_dim);
      const auto path = interpolate(ka, kb, aux, s, run.params, rc.model, rc.edm, pts, tc.seed, tc.threads);
      ensure_dir(out_dir);
      Json adjacent = Json::array();
      for (std::size_t i = 0; i < path.size(); ++i) {
        save_points((fs::path(out_dir) / indexed("step", i, ".ply")).string(), path[i].cloud);
        save_points((fs::path(out_dir) / indexed("keypoints", i, ".ply")).string(), path[i].keypoints);
        if (i > 0) adjacent.push_back(chamfer_symmetric(path[i - 1].cloud, path[i].cloud));
      }
      emit(io.out, {{"command", "interpolate"}, {"steps", s}, {"adjacent_cd", adjacent}, {"run_config_hash", config_hash(run.cfg)}},
           hash);
      return 0;
    }
    if (grad_cmd->parsed()) {
      TrainConfig gc = tc;
      gc.data.points = grad_points;
      const auto sample = synth::make_dataset(1, static_cast<std::size_t>(grad_points), derive_seed(tc.seed, {0x6C}));
      const Points shape = sample[0].cloud.cloud.points;
      const auto params = init_params(gc.model, derive_seed(tc.seed, {0x1A}));
      const StepInfo at{gc.loss.warmup_steps / 2, 0, 1000, gc.epochs};
      const auto draw = draw_sample(shape, derive_seed(tc.seed, {0x6D}), at, gc);
      const auto lambda = loss_lambdas(gc.loss, at.step, at.epoch, at.total_epochs);
      ad::Matrix z0;
      {
        ad::Tape t;
        Bound b(t, params, false);
        z0 = build_objective(b, shape, draw, gc, lambda).z0.value();
      }
      GradCheckOptions opt;
      opt.max_coords = grad_coords;
      opt.seed = tc.seed;
      const auto report = check_param_gradients(
          [&](const Bound& b) { return build_objective(b, shape, draw, gc, lambda, &z0).total; }, params, opt);
      Json worst = Json::array();
      for (const auto& w : report.worst) {
        worst.push_back({{"tensor", w.tensor}, {"index", w.index}, {"analytic", w.analytic}, {"numeric", w.numeric}, {"rel_error", w.rel_error}});
      }
      const bool ok = report.max_rel_error <= tol;
      emit(io.out,
           {{"command", "gradcheck"}, {"checked", report.checked}, {"straddled", report.straddled},
            {"max_rel_error", report.max_rel_error}, {"tol", tol}, {"pass", ok}, {"worst", worst}},
           hash);
      return ok ? 0 : 1;
    }
    if (synth_cmd->parsed()) {
      if (out_dir.empty()) throw Error(ErrorCode::InvalidConfig, "synth needs --out DIR");
      const std::size_t n = synth_count > 0 ? static_cast<std::size_t>(synth_count) : static_cast<std::size_t>(tc.data.shapes);
      const std::size_t p = synth_points > 0 ? static_cast<std::size_t>(synth_points) : static_cast<std::size_t>(tc.data.points);
      const auto data = synth::make_dataset(n, p, tc.data.seed);
      ensure_dir(out_dir);
      Json ann = Json::object();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const std::string id = indexed("shape", i, "");
        save_points((fs::path(out_dir) / (id + ".ply")).string(), data[i].cloud.cloud.points, &data[i].cloud.labels);
        ann[id] = annotations_json(data[i].annotations);
      }
      write_file((fs::path(out_dir) / "annotations.json").string(), round_floats(ann).dump(2) + "\n");
      emit(io.out, {{"command", "synth"}, {"count", n}, {"points", p}}, hash);
      return 0;
    }
    return 2;
  } catch (const Error& e) {
    Json j = {{"error", to_string(e.code())}, {"message", e.what()}};
    if (const auto* ml = dynamic_cast<const MalformedLine*>(&e)) j["row"] = ml->row();
    io.err << j.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    io.err << Json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}

}  // namespace kpdiff::cli
