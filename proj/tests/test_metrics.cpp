#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include <Eigen/Geometry>

#include "kpdiff/metrics.hpp"

using namespace kpdiff;

namespace {

Points cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  Points p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = rng.uniform(-1.0, 1.0);
  return p;
}

double brute_emd(const Points& a, const Points& b) {
  std::vector<int> perm(static_cast<std::size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) s += (a.row(i) - b.row(perm[i])).norm();
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(a.rows());
}

// Each point of `a` in turn takes its nearest unused point of `b`.
double greedy_emd(const Points& a, const Points& b) {
  std::vector<bool> used(static_cast<std::size_t>(b.rows()), false);
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (!used[j] && (arg < 0 || (a.row(i) - b.row(j)).norm() < (a.row(i) - b.row(arg)).norm())) arg = j;
    }
    used[arg] = true;
    s += (a.row(i) - b.row(arg)).norm();
  }
  return s / static_cast<double>(a.rows());
}

LabeledPointCloud two_part_cloud() {
  return {PointCloud(points_from({{0, 0, 0}, {1, 0, 0}})), {0, 1}};
}

}  // namespace

TEST(ChamferSymmetric, Examples) {
  const Points a = cloud(12, 1), b = cloud(9, 2);
  EXPECT_EQ(chamfer_symmetric(a, a), 0.0);
  EXPECT_EQ(chamfer_symmetric(a, b), chamfer_symmetric(b, a));
  EXPECT_EQ(chamfer_symmetric(points_from({{0, 0, 0}}), points_from({{2, 0, 0}})), 4.0);
}

TEST(Emd, Examples) {
  const Points a = cloud(8, 3);
  Points perm = a;
  perm.row(0).swap(perm.row(5));
  perm.row(2).swap(perm.row(7));
  EXPECT_EQ(emd(a, perm), 0.0);
  EXPECT_EQ(emd(points_from({{0, 0, 0}, {1, 0, 0}}), points_from({{0, 0, 0}, {2, 0, 0}})), 0.5);
  EXPECT_THROW(emd(a, cloud(7, 4)), Error);
}

TEST(Emd, BeatsGreedyWhereGreedyFails) {
  bool found = false;
  for (std::uint64_t s = 0; s < 200 && !found; ++s) {
    const Points a = cloud(3, 10 + s), b = cloud(3, 500 + s);
    if (greedy_emd(a, b) > brute_emd(a, b) + 1e-6) {
      found = true;
      EXPECT_NEAR(emd(a, b), brute_emd(a, b), 1e-12);
      EXPECT_LT(emd(a, b), greedy_emd(a, b));
    }
  }
  EXPECT_TRUE(found);
}

TEST(Emd, MatchesFactorialBruteForce) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + static_cast<int>(rng.index(6));
    const Points a = cloud(n, 20 + t), b = cloud(n, 900 + t);
    EXPECT_NEAR(emd(a, b), brute_emd(a, b), 1e-9);
  }
}

TEST(Emd, MetricProperties) {
  for (std::uint64_t t = 0; t < 50; ++t) {
    const Points a = cloud(6, 3 * t), b = cloud(6, 3 * t + 1), c = cloud(6, 3 * t + 2);
    EXPECT_NEAR(emd(a, b), emd(b, a), 1e-12);
    EXPECT_LE(emd(a, c), emd(a, b) + emd(b, c) + 1e-9);
    EXPECT_GT(emd(a, b), 0.0);
  }
}

TEST(Emd, CapIsEnforced) {
  const Points big = Points::Zero(kEmdExactLimit + 1, 3);
  try {
    emd(big, big);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooLargeForExact);
  }
}

TEST(Correlation, PerfectConsistency) {
  CorrelationInputs in;
  in.keypoints = {KeypointSet(points_from({{0, 0, 0}, {1, 0, 0}}))};
  in.clouds = {two_part_cloud()};
  EXPECT_EQ(keypoint_correlation(in), 1.0);
}

TEST(Correlation, FarKeypointsScoreZero) {
  CorrelationInputs in;
  in.keypoints = {KeypointSet(points_from({{5, 5, 5}, {6, 6, 6}}))};
  in.clouds = {two_part_cloud()};
  EXPECT_EQ(keypoint_correlation(in), 0.0);
}

// Keypoint 0 sits on label 0 in the first sample only; keypoint 1 sits on
// label 1 in both. M = [[0.5, 0], [0, 1]], score = (0.5 + 1) / 2.
TEST(Correlation, HandBuiltTwoSampleFixture) {
  CorrelationInputs in;
  in.keypoints = {KeypointSet(points_from({{0, 0, 0}, {1, 0, 0}})), KeypointSet(points_from({{5, 5, 5}, {1, 0.01, 0}}))};
  in.clouds = {two_part_cloud(), two_part_cloud()};
  const auto r = keypoint_correlation_detail(in);
  Eigen::MatrixXd expect(2, 2);
  expect << 0.5, 0.0, 0.0, 1.0;
  EXPECT_EQ(r.association, expect);
  EXPECT_EQ(r.score, 0.75);
  std::swap(in.keypoints[0], in.keypoints[1]);
  std::swap(in.clouds[0], in.clouds[1]);
  EXPECT_EQ(keypoint_correlation(in), 0.75);
}

TEST(Correlation, NoLabels) {
  CorrelationInputs in;
  in.keypoints = {KeypointSet(points_from({{0, 0, 0}}))};
  in.clouds = {LabeledPointCloud{PointCloud(points_from({{0, 0, 0}})), {}}};
  in.clouds[0].labels.clear();
  EXPECT_THROW(keypoint_correlation(in), Error);
}

namespace {

std::vector<Annotation> line_annotations() {
  return {{Vec3(0, 0, 0), 0}, {Vec3(1, 0, 0), 1}, {Vec3(2, 0, 0), 2}};
}

DasShape exact_shape(const std::vector<Annotation>& ann) {
  Points p(static_cast<Eigen::Index>(ann.size()), 3);
  for (std::size_t i = 0; i < ann.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = ann[i].xyz.transpose();
  return {KeypointSet(p), ann};
}

}  // namespace

TEST(Das, PredictionsEqualAnnotations) {
  const auto ann = line_annotations();
  EXPECT_EQ(das({exact_shape(ann), exact_shape(ann)}), 1.0);
}

TEST(Das, AllMismatched) {
  const auto ann = line_annotations();
  DasShape ref = exact_shape(ann);
  DasShape eval{KeypointSet(points_from({{1, 0, 0}, {2, 0, 0}, {0, 0, 0}})), ann};
  EXPECT_EQ(das({ref, eval}), 0.0);
}

// Reference: k0 on label 0, k1 on label 1. Evaluation: both keypoints on
// label 1. Each direction hits only k1, so both accuracies are 1/2.
TEST(Das, SwappedLabels) {
  const std::vector<Annotation> ann{{Vec3(0, 0, 0), 0}, {Vec3(1, 0, 0), 1}};
  DasShape ref{KeypointSet(points_from({{0, 0, 0}, {1, 0, 0}})), ann};
  DasShape eval{KeypointSet(points_from({{0.9, 0, 0}, {1, 0, 0}})), ann};
  EXPECT_EQ(detail::das_direction(ref, eval, 0.0), 0.5);
  EXPECT_EQ(detail::das_direction(eval, ref, 0.0), 0.5);
  EXPECT_EQ(das({ref, eval}), 0.5);
}

TEST(Das, RelaxedWindowAcceptsNearTies) {
  const std::vector<Annotation> ann{{Vec3(0, 0, 0), 0}, {Vec3(1, 0, 0), 1}};
  DasShape ref{KeypointSet(points_from({{0, 0, 0}})), ann};
  DasShape eval{KeypointSet(points_from({{0.52, 0, 0}})), ann};
  EXPECT_EQ(detail::das_direction(ref, eval, 0.0), 0.0);
  EXPECT_EQ(detail::das_direction(ref, eval, 0.1), 1.0);
}

TEST(Das, RigidInvariance) {
  Rng rng(6);
  std::vector<Annotation> ann;
  for (int i = 0; i < 6; ++i) ann.push_back({Vec3(rng.normal(), rng.normal(), rng.normal()), i % 3});
  DasShape ref{KeypointSet(cloud(5, 7)), ann};
  DasShape eval{KeypointSet(cloud(5, 8)), ann};
  const double before = das({ref, eval});
  const Mat3 r = Eigen::AngleAxisd(1.1, Vec3(0.2, 1, -0.4).normalized()).toRotationMatrix();
  const Vec3 t(1, -2, 0.5);
  auto move = [&](DasShape s) {
    for (auto& a : s.annotations) a.xyz = r * a.xyz + t;
    s.predicted.points = (s.predicted.points * r.transpose()).rowwise() + t.transpose();
    return s;
  };
  EXPECT_EQ(das({move(ref), eval}), before);
  EXPECT_GE(before, 0.0);
  EXPECT_LE(before, 1.0);
  EXPECT_THROW(das({DasShape{KeypointSet(cloud(5, 7)), {}}, eval}), Error);
}

TEST(Mmd, Examples) {
  const std::vector<Points> ref{cloud(10, 1), cloud(10, 2)};
  EXPECT_EQ(mmd_cd(ref, ref), 0.0);
  const std::vector<Points> one{points_from({{0, 0, 0}})};
  const std::vector<Points> gen{points_from({{std::sqrt(0.3), 0, 0}}), points_from({{std::sqrt(0.1), 0, 0}})};
  EXPECT_NEAR(mmd_cd(gen, one), 0.1, 1e-15);
  auto more = gen;
  more.push_back(cloud(4, 3));
  EXPECT_LE(mmd_cd(more, one), mmd_cd(gen, one));
  EXPECT_THROW(mmd_cd({}, one), Error);
}
