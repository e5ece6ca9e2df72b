#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Geometry>

#include "kpdiff/losses.hpp"

using namespace kpdiff;

namespace {

Points cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  Points p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = rng.uniform(-1.0, 1.0);
  return p;
}

double brute_oneway(const Points& a, const Points& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) best = std::min(best, (a.row(i) - b.row(j)).squaredNorm());
    s += best;
  }
  return s / static_cast<double>(a.rows());
}

}  // namespace

TEST(Chamfer, Examples) {
  const Points a = cloud(10, 1);
  EXPECT_EQ(chamfer_oneway(a, a), 0.0);
  EXPECT_EQ(chamfer_oneway(points_from({{0, 0, 0}}), points_from({{1, 0, 0}, {0, 2, 0}})), 1.0);
  EXPECT_EQ(chamfer_oneway(points_from({{0, 0, 0}, {3, 0, 0}}), points_from({{1, 0, 0}})), 2.5);
  EXPECT_THROW(chamfer_oneway(Points(0, 3), a), Error);
}

TEST(Chamfer, MatchesBruteForce) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const Points a = cloud(1 + static_cast<int>(rng.index(16)), 10 + t);
    const Points b = cloud(1 + static_cast<int>(rng.index(16)), 1000 + t);
    EXPECT_EQ(chamfer_oneway(a, b), brute_oneway(a, b));
    EXPECT_EQ(chamfer_oneway(a, b, NnMode::Grid), brute_oneway(a, b));
  }
}

TEST(ChamferAsym, Examples) {
  const Points p = points_from({{0, 0, 0}}), t = points_from({{1, 0, 0}});
  EXPECT_EQ(chamfer_asym(p, t, 1.0, 2.0), 3.0);
  EXPECT_EQ(chamfer_asym(t, t, 0.5, 1.0), 0.0);
  const Points a = points_from({{0, 0, 0}, {1, 0, 0}}), b = points_from({{0, 0, 0}});
  EXPECT_NE(chamfer_asym(a, b, 0.5, 1.0), chamfer_asym(b, a, 0.5, 1.0));
  try {
    chamfer_asym(p, t, 1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadWeights);
  }
}

TEST(Repulsion, Examples) {
  const double m = 0.05;
  EXPECT_EQ(repulsion(points_from({{0, 0, 0}, {2 * m, 0, 0}}), 1, m), 0.0);
  EXPECT_DOUBLE_EQ(repulsion(points_from({{0, 0, 0}, {0, 0, 0}}), 1, m), m);
  // nearest neighbours: 0 -> m/2, m/2 -> 0, 2m -> m/2; hinges m/2, m/2, 0
  EXPECT_DOUBLE_EQ(repulsion(points_from({{0, 0, 0}, {m / 2, 0, 0}, {2 * m, 0, 0}}), 1, m), m / 3.0);
  EXPECT_THROW(repulsion(points_from({{0, 0, 0}, {1, 0, 0}}), 2, m), Error);
}

TEST(Repulsion, IsometryInvariant) {
  const Points p = cloud(40, 3) * 0.1;
  Mat3 r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Points q = (p * r.transpose()).rowwise() + Eigen::RowVector3d(0.3, -2.0, 5.0);
  EXPECT_NEAR(repulsion(p, 4, 0.05), repulsion(q, 4, 0.05), 1e-9);
}

TEST(Gamma, Examples) {
  EXPECT_EQ(gamma_weight(0.0, 0.3), 1.0);
  EXPECT_EQ(gamma_weight(0.3, 0.3), 0.5);
  EXPECT_DOUBLE_EQ(gamma_weight(0.9, 0.3), 0.25);
}

TEST(KeypointChamfer, Examples) {
  const Points s = cloud(20, 4);
  EXPECT_EQ(keypoint_chamfer(s.topRows(5), s), 0.0);
  EXPECT_EQ(keypoint_chamfer(points_from({{2, 0, 0}}), points_from({{0, 0, 0}})), 4.0);
  const Points k = cloud(5, 5);
  Points more(40, 3);
  more << s, cloud(20, 6);
  EXPECT_LE(keypoint_chamfer(k, more), keypoint_chamfer(k, s));
}

TEST(FpsAnchor, Examples) {
  const Points anchors = cloud(20, 7);
  EXPECT_EQ(fps_anchor_loss(anchors, anchors), 0.0);
  EXPECT_EQ(fps_anchor_loss(anchors.topRows(10), anchors, FpsDirection::KeypointsToAnchors), 0.0);
  // K->A: 0.25; A->K: (0.25 + 2.25) / 2; symmetric mean of both
  const Points a = points_from({{0, 0, 0}, {2, 0, 0}}), k = points_from({{0.5, 0, 0}});
  EXPECT_DOUBLE_EQ(fps_anchor_loss(k, a), 0.75);
  EXPECT_DOUBLE_EQ(fps_anchor_loss(k, a, FpsDirection::AnchorsToKeypoints), 1.25);
}

TEST(Consistency, Examples) {
  const Points k = cloud(6, 8);
  EXPECT_EQ(deformation_consistency(k, k), 0.0);
  Points swapped = k;
  swapped.row(0).swap(swapped.row(1));
  EXPECT_GT(deformation_consistency(k, swapped), 0.0);
  const Points a = points_from({{0, 0, 0}, {0, 0, 0}}), b = points_from({{1, 0, 0}, {0, 2, 0}});
  EXPECT_EQ(deformation_consistency(a, b), 2.5);
  try {
    deformation_consistency(a, k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SizeMismatch);
  }
}

TEST(Kl, Examples) {
  EXPECT_EQ(kl_divergence(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), 0.0);
  EXPECT_EQ(kl_divergence(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1)), 0.5);
  EXPECT_NEAR(kl_divergence(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)), 0.5 * (std::exp(1.0) - 2.0), 1e-15);
  EXPECT_NEAR(0.5 * (std::exp(1.0) - 2.0), 0.3591, 5e-5);
}

TEST(Kl, MatchesMonteCarlo) {
  Rng rng(9);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd mu(3), lv(3);
    for (int i = 0; i < 3; ++i) {
      mu(i) = rng.uniform(-1.0, 1.0);
      lv(i) = rng.uniform(-1.0, 1.0);
    }
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < n; ++k) {
      double v = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double sd = std::exp(0.5 * lv(i));
        const double eps = rng.normal();
        const double z = mu(i) + sd * eps;
        v += -0.5 * eps * eps - std::log(sd) + 0.5 * z * z;
      }
      s += v;
      s2 += v * v;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    EXPECT_LE(std::abs(mean - kl_divergence(mu, lv)), 3.0 * se);
  }
}

TEST(Warmup, Examples) {
  EXPECT_EQ(kl_warmup(0, 1000), 0.0);
  EXPECT_EQ(kl_warmup(500, 1000), 0.5);
  EXPECT_EQ(kl_warmup(3000, 1000), 1.0);
}

TEST(Total, Examples) {
  const LossWeights w;
  EXPECT_EQ(total_loss({}, w, 100, 0, 50).total, 0.0);
  LossTerms diff_only;
  diff_only.diff = 1.0;
  EXPECT_EQ(total_loss(diff_only, w, 100, 0, 50).total, 3.0);
  LossTerms kl_only;
  kl_only.kl = 123.0;
  EXPECT_EQ(total_loss(kl_only, w, 0, 0, 50).total, 0.0);
}

TEST(Total, InitPhaseThenLateWeights) {
  LossWeights w;
  w.fps_late = 0.25;
  LossTerms t{1.0, 1.0, 1.0, 1.0, 1.0};
  // 10% of 50 epochs: epochs 0..4 use the initial set
  EXPECT_EQ(total_loss(t, w, 0, 4, 50).lambda[0], 1.0);
  EXPECT_EQ(total_loss(t, w, 0, 5, 50).lambda[0], 0.25);
}

TEST(Total, EqualsWeightedSum) {
  Rng rng(10);
  const LossWeights w;
  for (int i = 0; i < 100; ++i) {
    LossTerms t{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const auto b = total_loss(t, w, static_cast<long>(rng.index(3000)), static_cast<long>(rng.index(50)), 50);
    const double s = b.lambda[0] * t.fps + b.lambda[1] * t.diff + b.lambda[2] * t.chamfer + b.lambda[3] * t.mse + b.lambda[4] * t.kl;
    EXPECT_NEAR(b.total, s, 1e-12 * std::abs(s));
  }
}

TEST(Weights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.beta = w.alpha;
  EXPECT_THROW(w.validate(), Error);
}
