#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kpdiff/gradcheck.hpp"
#include "kpdiff/model.hpp"
#include "kpdiff/train.hpp"

using namespace kpdiff;
using ad::Matrix;
using ad::Var;

namespace {

Points cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  Points p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = rng.uniform(-1.0, 1.0);
  return p;
}

Matrix gaussian(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

ModelConfig small_model() {
  ModelConfig m;
  m.keypoints = 4;
  m.aux_dim = 2;
  m.feature_dim = 8;
  m.embed_dim = 8;
  m.fourier_count = 4;
  m.aux_hidden = 6;
  m.decoder_width = 8;
  m.time_embed_dim = 4;
  m.film_depth = 2;
  return m;
}

// Weighted sum so every output entry carries a distinct cotangent.
Var probe(ad::Tape& t, Var v) { return ad::sum_all(ad::mul(v, t.constant(gaussian(int(v.rows()), int(v.cols()), 99)))); }

}  // namespace

TEST(Tape, ReusedNodeAccumulates) {
  ad::Tape t;
  auto x = t.leaf(Matrix::Constant(1, 1, 3.0));
  auto y = ad::add(ad::mul(x, x), x);
  t.backward(y);
  EXPECT_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(Tape, DetachBlocksGradient) {
  ad::Tape t;
  auto x = t.leaf(Matrix::Constant(2, 2, 1.5));
  auto y = ad::sum_all(ad::mul(ad::detach(x), x));
  t.backward(y);
  EXPECT_EQ(t.grad(x), Matrix::Constant(2, 2, 1.5));
}

TEST(GradCheck, QuadraticIsExact) {
  const auto r = check_gradients([](ad::Tape&, const std::vector<Var>& v) { return ad::sum_squares(v[0]); },
                                 {gaussian(3, 4, 1)});
  EXPECT_EQ(r.checked, 12u);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, Primitives) {
  const std::vector<std::pair<const char*, TapeFunction>> cases = {
      {"matmul", [](ad::Tape& t, const std::vector<Var>& v) { return probe(t, ad::matmul(v[0], ad::transpose(v[1]))); }},
      {"softmax", [](ad::Tape& t, const std::vector<Var>& v) { return probe(t, ad::softmax_rows(v[0])); }},
      {"sin_cos", [](ad::Tape& t, const std::vector<Var>& v) { return probe(t, ad::concat_cols({ad::sin(v[0]), ad::cos(v[1])})); }},
      {"exp_log", [](ad::Tape& t, const std::vector<Var>& v) { return probe(t, ad::log(ad::add(ad::exp(v[0]), ad::exp(v[1])))); }},
      {"mean", [](ad::Tape& t, const std::vector<Var>& v) { return probe(t, ad::mean_rows(ad::relu(v[0]))); }},
      {"pairwise", [](ad::Tape& t, const std::vector<Var>& v) { return probe(t, ad::pairwise_dist(v[0], v[1])); }},
  };
  for (const auto& [name, fn] : cases) {
    const auto r = check_gradients(fn, {gaussian(4, 3, 2), gaussian(4, 3, 3)});
    EXPECT_LT(r.max_rel_error, 1e-6) << name;
  }
}

TEST(GradCheck, AttentionPath) {
  const auto cfg = small_model();
  const auto params = init_params(cfg, 3);
  const Points pc = cloud(16, 4);
  const auto r = check_param_gradients(
      [&](const Bound& b) { return probe(b.tape(), encode(b, b.tape().constant(pc), cfg).keypoints); }, params);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, KinkIsSkippedNotCompared) {
  Matrix x(1, 3);
  x << 1e-7, 0.5, -0.5;
  const auto r = check_gradients([](ad::Tape&, const std::vector<Var>& v) { return ad::sum_all(ad::relu(v[0])); }, {x});
  EXPECT_EQ(r.straddled, 1u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-9);

  ad::Tape a, b;
  ad::relu(a.constant(x));
  ad::relu(b.constant(-x));
  EXPECT_NE(a.branches(), b.branches());
}

TEST(GradCheck, MismatchIsReported) {
  GradReport r;
  r.add({"w", 0, 1.0, 2.0, 0.5});
  try {
    r.require(1e-4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GradMismatch);
    EXPECT_NE(std::string(e.what()).find("w[0]"), std::string::npos);
  }
}

TEST(Fourier, Examples) {
  const Matrix f = gaussian(3, 5, 5);
  const auto zero = fourier_encode(Vec3::Zero(), f);
  EXPECT_EQ(zero.head(5), Eigen::RowVectorXd::Zero(5));
  EXPECT_EQ(zero.tail(5), Eigen::RowVectorXd::Ones(5));
  const auto any = fourier_encode(Vec3(0.3, -7.0, 2.2), f);
  EXPECT_LE(any.cwiseAbs().maxCoeff(), 1.0);
  Matrix single = Matrix::Zero(3, 1);
  single(0, 0) = 1.0;
  const auto q = fourier_encode(Vec3(0.25, 0.7, -0.1), single);
  EXPECT_NEAR(q(0), 1.0, 1e-15);
  EXPECT_NEAR(q(1), 0.0, 1e-15);
}

TEST(Encoder, UniformAttentionGivesCentroid) {
  const auto cfg = small_model();
  auto params = init_params(cfg, 6);
  params.at("enc.key").setZero();
  const Points pc = cloud(20, 7);
  const auto r = encode(params, pc, cfg);
  for (int k = 0; k < cfg.keypoints; ++k) {
    EXPECT_LT((r.keypoints.point(k) - PointCloud(pc).centroid()).norm(), 1e-12);
  }
}

TEST(Encoder, SharpAttentionSelectsInputPoint) {
  auto cfg = small_model();
  cfg.attention_scale = 1e9;
  const auto params = init_params(cfg, 8);
  const Points pc = cloud(20, 9);
  const auto r = encode(params, pc, cfg);
  for (int k = 0; k < cfg.keypoints; ++k) {
    Eigen::Index arg;
    EXPECT_EQ(r.attention.row(k).maxCoeff(&arg), 1.0);
    EXPECT_EQ(r.keypoints.point(k), Vec3(pc.row(arg).transpose()));
  }
}

TEST(Encoder, KeypointsAreConvexCombinations) {
  const auto cfg = small_model();
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto params = init_params(cfg, 1000 + s);
    const Points pc = cloud(12 + static_cast<int>(s % 20), 2000 + s);
    const auto r = encode(params, pc, cfg);
    EXPECT_GE(r.attention.minCoeff(), 0.0);
    EXPECT_LT((r.attention.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
    EXPECT_LT((r.attention * pc - r.keypoints.points).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(r.mu.size(), cfg.aux_dim);
    EXPECT_GE(r.logvar.minCoeff(), cfg.logvar_min);
    EXPECT_LE(r.logvar.maxCoeff(), cfg.logvar_max);
  }
}

TEST(Encoder, TooFewPoints) {
  const auto cfg = small_model();
  try {
    encode(init_params(cfg, 1), cloud(3, 1), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewPoints);
  }
}

TEST(Reparameterize, Examples) {
  Rng rng(10);
  Eigen::VectorXd mu(2), lv(2);
  mu << 0.5, -1.0;
  lv << -std::numeric_limits<double>::infinity(), -1e6;
  EXPECT_LT((reparameterize(mu, lv, rng) - mu).cwiseAbs().maxCoeff(), 1e-5);

  lv << 0.4, -0.6;
  const int n = 100000;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(2);
  for (int i = 0; i < n; ++i) s += reparameterize(mu, lv, rng);
  for (int i = 0; i < 2; ++i) EXPECT_LE(std::abs(s(i) / n - mu(i)), 3.0 * std::exp(0.5 * lv(i)) / std::sqrt(double(n)));

  Rng a(11), b(11);
  EXPECT_EQ(reparameterize(mu, lv, a), reparameterize(mu, lv, b));
}

TEST(SoftProject, TwoPointClosedForm) {
  const Points s = points_from({{0, 0, 0}, {1, 0, 0}});
  const Points out = soft_project(points_from({{0.25, 0, 0}}), s, 0.25);
  const double expect = std::exp(-3.0) / (std::exp(-1.0) + std::exp(-3.0));
  EXPECT_NEAR(out(0, 0), expect, 1e-15);
  EXPECT_NEAR(expect, 0.1192, 5e-5);
}

TEST(SoftProject, Limits) {
  for (std::uint64_t t = 0; t < 20; ++t) {
    const Points s = cloud(30, 3000 + t), k = cloud(4, 4000 + t);
    const Points hard = soft_project(k, s, 1e-6);
    for (int i = 0; i < 4; ++i) {
      Eigen::Index arg;
      (s.rowwise() - k.row(i)).rowwise().squaredNorm().minCoeff(&arg);
      EXPECT_LT((hard.row(i) - s.row(arg)).norm(), 1e-9);
    }
    const Points soft = soft_project(k, s, 1e6);
    for (int i = 0; i < 4; ++i) EXPECT_LT((soft.row(i) - s.colwise().mean()).norm(), 1e-6);
    const Points mid = soft_project(k, s, 0.1);
    for (int c = 0; c < 3; ++c) {
      EXPECT_GE(mid.col(c).minCoeff(), s.col(c).minCoeff() - 1e-12);
      EXPECT_LE(mid.col(c).maxCoeff(), s.col(c).maxCoeff() + 1e-12);
    }
  }
}

TEST(Latent, AssembleAndSplit) {
  Eigen::VectorXd z(1);
  z << 9;
  EXPECT_EQ(assemble_latent(points_from({{1, 2, 3}}), z), Eigen::Vector4d(1, 2, 3, 9));
  ModelConfig paper;
  EXPECT_EQ(paper.latent_dim(), 35);
  const Points k = cloud(10, 1);
  const Eigen::VectorXd aux = Eigen::VectorXd::LinSpaced(5, 0, 1);
  const auto full = assemble_latent(k, aux, paper);
  EXPECT_EQ(full.size(), 35);
  const auto parts = split_latent(full, 10);
  EXPECT_EQ(parts.keypoints, k);
  EXPECT_EQ(parts.z_aux, aux);
  try {
    assemble_latent(cloud(9, 1), aux, paper);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Denoiser, ZeroNetworkIsSkipOnly) {
  const auto cfg = small_model();
  auto params = init_params(cfg, 12);
  params.at("dec.out.w").setZero();
  params.at("dec.out.b").setZero();
  const Points x = cloud(16, 13);
  const double sigma = 0.7;
  const ModelDenoiser d{params, cfg, 0.3};
  EXPECT_EQ(d(x, sigma, Eigen::VectorXd::Ones(cfg.latent_dim())), precondition(sigma, 0.3).c_skip * x);
}

TEST(Denoiser, PermutationEquivariant) {
  const auto cfg = small_model();
  const auto params = init_params(cfg, 14);
  const ModelDenoiser d{params, cfg, 0.3};
  const Points x = cloud(16, 15);
  const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(cfg.latent_dim(), -1, 1);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(16);
  perm.setIdentity();
  Rng rng(16);
  std::shuffle(perm.indices().data(), perm.indices().data() + 16, rng.engine());
  const Points px = perm * x;
  EXPECT_LT((d(px, 0.5, z) - perm * d(x, 0.5, z)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Denoiser, LatentConditioningIsLive) {
  const auto cfg = small_model();
  const auto params = init_params(cfg, 17);
  const ModelDenoiser d{params, cfg, 0.3};
  const Points x = cloud(16, 18);
  Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(cfg.latent_dim(), -1, 1);
  const Points base = d(x, 0.5, z);
  double max_sens = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Eigen::VectorXd zp = z;
    zp(i) += 1e-4;
    max_sens = std::max(max_sens, (d(x, 0.5, zp) - base).cwiseAbs().maxCoeff() / 1e-4);
  }
  EXPECT_GT(max_sens, 1e-6);
  EXPECT_THROW(d(x, 0.5, Eigen::VectorXd::Zero(3)), Error);
}

TEST(StopGradient, DiffusionTermNeverReachesEncoder) {
  TrainConfig cfg;
  cfg.model = small_model();
  cfg.data.points = 24;
  const Points shape = cloud(24, 19);
  const auto params = init_params(cfg.model, 20);
  const auto draw = draw_sample(shape, 21, StepInfo{0, 0, 10, 1}, cfg);
  ad::Tape tape;
  Bound b(tape, params, true);
  const auto g = build_objective(b, shape, draw, cfg, {0.0, 1.0, 0.0, 0.0, 0.0});
  tape.backward(g.diff);
  std::size_t encoder = 0;
  double decoder_norm = 0.0;
  for (const auto& [name, grad] : b.gradients(params)) {
    if (name.rfind("enc.", 0) == 0) {
      ++encoder;
      EXPECT_EQ(grad.cwiseAbs().maxCoeff(), 0.0) << name;
    } else {
      decoder_norm += grad.norm();
    }
  }
  EXPECT_GT(encoder, 0u);
  EXPECT_GT(decoder_norm, 0.0);
}

TEST(ParamStore, SeededAndFrequenciesFrozen) {
  const auto cfg = small_model();
  EXPECT_EQ(init_params(cfg, 5), init_params(cfg, 5));
  EXPECT_FALSE(init_params(cfg, 5) == init_params(cfg, 6));
  const auto p = init_params(cfg, 5);
  EXPECT_FALSE(p.trainable("enc.fourier"));
  EXPECT_TRUE(p.trainable("enc.queries"));
  EXPECT_TRUE(p.all_finite());
  ad::Tape t;
  Bound b(t, p, true);
  EXPECT_EQ(b.gradients(p).count("enc.fourier"), 0u);
}
