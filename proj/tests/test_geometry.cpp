#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "kpdiff/geometry.hpp"
#include "kpdiff/io.hpp"
#include "kpdiff/nn_search.hpp"

using namespace kpdiff;

namespace {

Points random_points(int n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Points p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = rng.uniform(lo, hi);
  return p;
}

Points line(int n) {
  Points p = Points::Zero(n, 3);
  for (int i = 0; i < n; ++i) p(i, 0) = i;
  return p;
}

}  // namespace

TEST(Parse, TwoPointXyz) {
  auto pc = cloud_of(parse_pointcloud("0 0 0\n1 0 0", CloudFormat::XyzText));
  EXPECT_EQ(pc.points, points_from({{0, 0, 0}, {1, 0, 0}}));
}

TEST(Parse, EmptyInputIsEmptyCloud) {
  try {
    parse_pointcloud("", CloudFormat::XyzText);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCloud);
  }
}

TEST(Parse, FourthColumnBecomesLabels) {
  auto parsed = parse_pointcloud("0 0 0 2\n1 1 1 0", CloudFormat::XyzText);
  ASSERT_TRUE(std::holds_alternative<LabeledPointCloud>(parsed));
  const auto& l = std::get<LabeledPointCloud>(parsed);
  EXPECT_EQ(l.labels, (std::vector<int>{2, 0}));
  EXPECT_EQ(l.cloud.points, points_from({{0, 0, 0}, {1, 1, 1}}));
}

TEST(Parse, CommentsAndBlankLinesSkipped) {
  auto pc = cloud_of(parse_pointcloud("# header\n\n1 2 3\n  # x\n4 5 6\n", CloudFormat::XyzText));
  EXPECT_EQ(pc.size(), 2u);
}

TEST(Parse, MalformedLineReportsRow) {
  try {
    parse_pointcloud("0 0 0\n1 x 0\n", CloudFormat::XyzText);
    FAIL();
  } catch (const MalformedLine& e) {
    EXPECT_EQ(e.row(), 1u);
  }
  EXPECT_THROW(parse_pointcloud("0 0\n", CloudFormat::XyzText), MalformedLine);
  EXPECT_THROW(parse_pointcloud("0 0 0\n1 1 1 3\n", CloudFormat::XyzText), MalformedLine);
}

TEST(Parse, PlyWithLabels) {
  const std::string ply =
      "ply\nformat ascii 1.0\ncomment x\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
      "property int label\nend_header\n0 0 0 1\n1 2 3 0\n";
  auto parsed = parse_pointcloud(ply, CloudFormat::PlyAscii);
  const auto& l = std::get<LabeledPointCloud>(parsed);
  EXPECT_EQ(l.labels, (std::vector<int>{1, 0}));
  EXPECT_EQ(l.cloud.point(1), Vec3(1, 2, 3));
}

TEST(Parse, RoundTripAtNineDigits) {
  const Points p = random_points(50, 3);
  for (auto fmt : {CloudFormat::XyzText, CloudFormat::PlyAscii}) {
    const auto once = cloud_of(parse_pointcloud(serialize(p, fmt), fmt));
    const auto twice = cloud_of(parse_pointcloud(serialize(once.points, fmt), fmt));
    EXPECT_EQ(once, twice);
    EXPECT_LT((once.points - p).cwiseAbs().maxCoeff(), 1e-8);
  }
  std::vector<int> labels(50);
  for (int i = 0; i < 50; ++i) labels[i] = i % 3;
  const auto l = std::get<LabeledPointCloud>(parse_pointcloud(serialize_ply(p, &labels), CloudFormat::PlyAscii));
  EXPECT_EQ(l.labels, labels);
}

TEST(Normalize, HandComputedPair) {
  const auto n = normalize(PointCloud(points_from({{1, 1, 1}, {3, 1, 1}})));
  EXPECT_EQ(n.center, Vec3(2, 1, 1));
  EXPECT_DOUBLE_EQ(n.scale, 1.0);
  EXPECT_EQ(n.cloud.points, points_from({{-1, 0, 0}, {1, 0, 0}}));
}

TEST(Normalize, CentroidZeroAndUnitRadius) {
  const auto n = normalize(PointCloud(random_points(100, 5, 2.0, 7.0)));
  EXPECT_LT(n.cloud.centroid().norm(), 1e-9);
  EXPECT_NEAR(n.cloud.points.rowwise().norm().maxCoeff(), 1.0, 1e-9);
}

TEST(Normalize, Idempotent) {
  const auto a = normalize(PointCloud(random_points(64, 9, -3.0, 5.0)));
  const auto b = normalize(a.cloud);
  EXPECT_LT((a.cloud.points - b.cloud.points).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(b.center.norm(), 1e-9);
  EXPECT_NEAR(b.scale, 1.0, 1e-9);
}

TEST(Normalize, RepeatedPointIsDegenerate) {
  Points p(5, 3);
  p.rowwise() = Eigen::RowVector3d(0.5, 1.0, -2.0);
  try {
    normalize(PointCloud(p));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateCloud);
  }
}

TEST(Fps, ExhaustionReturnsAllPoints) {
  const PointCloud pc(random_points(20, 1));
  auto r = fps(pc, 20, 4);
  std::sort(r.indices.begin(), r.indices.end());
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(r.indices[i], i);
}

TEST(Fps, CollinearLine) {
  const PointCloud pc(line(11));
  EXPECT_EQ(fps_from(pc, 2, 0).indices, (std::vector<std::size_t>{0, 10}));
  EXPECT_EQ(fps_from(pc, 3, 0).indices, (std::vector<std::size_t>{0, 10, 5}));
}

TEST(Fps, TooManyPoints) {
  try {
    fps(PointCloud(line(4)), 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::KTooLarge);
  }
}

// Brute-force greedy: every step maximises the minimum distance to the
// already selected set, ties to the lowest index.
TEST(Fps, MatchesBruteForceGreedy) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    const int n = 2 + static_cast<int>(rng.index(11));
    const auto k = 1 + rng.index(std::min(4, n));
    const PointCloud pc(random_points(n, 100 + s));
    const std::size_t start = rng.index(static_cast<std::size_t>(n));
    std::vector<std::size_t> expect{start};
    while (expect.size() < k) {
      double best = -1.0;
      std::size_t arg = 0;
      for (int j = 0; j < n; ++j) {
        double dmin = 1e300;
        for (auto e : expect) dmin = std::min(dmin, (pc.point(j) - pc.point(e)).squaredNorm());
        if (dmin > best) {
          best = dmin;
          arg = static_cast<std::size_t>(j);
        }
      }
      expect.push_back(arg);
    }
    const auto got = fps_from(pc, k, start);
    EXPECT_EQ(got.indices, expect) << "seed " << s;
    for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(got.keypoints.point(i), pc.point(got.indices[i]));
  }
}

TEST(Fps, SeededStartIsDeterministic) {
  const PointCloud pc(random_points(40, 2));
  EXPECT_EQ(fps(pc, 6, 11).indices, fps(pc, 6, 11).indices);
}

TEST(Subsample, FullSizeIsPermutation) {
  const PointCloud pc(random_points(30, 8));
  const auto idx = subsample_indices(30, 30, 5);
  std::set<std::size_t> u(idx.begin(), idx.end());
  EXPECT_EQ(u.size(), 30u);
  EXPECT_EQ(subsample(pc, 30, 5).size(), 30u);
}

TEST(Subsample, Deterministic) {
  const PointCloud pc(random_points(30, 8));
  EXPECT_EQ(subsample(pc, 1, 77), subsample(pc, 1, 77));
  EXPECT_THROW(subsample(pc, 31, 1), Error);
}

TEST(Subsample, UniformSinglePick) {
  std::array<int, 4> hist{};
  const int draws = 100000;
  for (int s = 0; s < draws; ++s) ++hist[subsample_indices(4, 1, static_cast<std::uint64_t>(s))[0]];
  for (int h : hist) EXPECT_NEAR(h / double(draws), 0.25, 0.01);
}

TEST(Subsample, LabelsFollowPoints) {
  LabeledPointCloud l{PointCloud(line(10)), {0, 1, 2, 0, 1, 2, 0, 1, 2, 0}};
  const auto s = subsample(l, 5, 3);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(s.labels[i], static_cast<int>(s.cloud.point(i).x()) % 3);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
}

TEST(NearestNeighbour, GridMatchesBrute) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Points q = random_points(40, 2 * s);
    const Points t = random_points(1 + static_cast<int>(s % 60), 2 * s + 1);
    const auto brute = nearest_all(q, t, NnMode::Brute);
    const auto grid = nearest_all(q, t, NnMode::Grid);
    for (std::size_t i = 0; i < brute.size(); ++i) {
      EXPECT_EQ(brute[i].index, grid[i].index);
      EXPECT_EQ(brute[i].d2, grid[i].d2);
    }
  }
}
