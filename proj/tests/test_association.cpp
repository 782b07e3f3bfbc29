#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "t4d/association.hpp"

using namespace t4d;

namespace {

StageMask smask(ClassId c, std::vector<PointIndex> pts, std::vector<double> f, double conf = 1.0) {
  return {c, conf, std::move(pts), std::move(f)};
}

const std::vector<PointIndex>* stage_points(const InstanceMask& m, StageIndex t) { return m.points_at(t); }

}  // namespace

TEST(Semantic, IdenticalFeaturesPairUp) {
  StagePredictionSet a{0, {smask(0, {0, 1}, {1, 0, 0}), smask(0, {2, 3}, {0, 1, 0}), smask(0, {4}, {0, 0, 1})}};
  StagePredictionSet b{1, {smask(0, {7}, {0, 0, 1}), smask(0, {5}, {1, 0, 0}), smask(0, {6}, {0, 1, 0})}};
  const auto out = associate_semantic(a, b);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(*stage_points(out[0], 1), std::vector<PointIndex>{5});
  EXPECT_EQ(*stage_points(out[1], 1), std::vector<PointIndex>{6});
  EXPECT_EQ(*stage_points(out[2], 1), std::vector<PointIndex>{7});
  for (InstanceId i = 0; i < 3; ++i) EXPECT_EQ(out[static_cast<std::size_t>(i)].instance_id, i);
}

TEST(Semantic, NeverPairsAcrossClasses) {
  StagePredictionSet a{0, {smask(0, {0}, {1, 0}), smask(1, {1}, {0, 1})}};
  StagePredictionSet b{1, {smask(1, {0}, {1, 0}), smask(0, {1}, {0, 1})}};
  const auto out = associate_semantic(a, b);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(*stage_points(out[0], 1), std::vector<PointIndex>{1});
  EXPECT_EQ(*stage_points(out[1], 1), std::vector<PointIndex>{0});
}

TEST(Semantic, MatchesExhaustiveOptimum) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  for (int it = 0; it < 100; ++it) {
    const std::size_t na = 1 + rng() % 4, nb = 1 + rng() % 4;
    StagePredictionSet a{0, {}}, b{1, {}};
    for (std::size_t i = 0; i < na; ++i) a.masks.push_back(smask(0, {PointIndex(i)}, {nd(rng), nd(rng), nd(rng)}));
    for (std::size_t j = 0; j < nb; ++j) b.masks.push_back(smask(0, {PointIndex(j)}, {nd(rng), nd(rng), nd(rng)}));
    Matrix cost(na, nb);
    for (std::size_t i = 0; i < na; ++i)
      for (std::size_t j = 0; j < nb; ++j) {
        const auto& fa = *a.masks[i].feature;
        const auto& fb = *b.masks[j].feature;
        double ab = 0, aa = 0, bb = 0;
        for (int d = 0; d < 3; ++d) {
          ab += fa[d] * fb[d];
          aa += fa[d] * fa[d];
          bb += fb[d] * fb[d];
        }
        cost(i, j) = -ab / std::sqrt(aa * bb);
      }
    const auto out = associate_semantic(a, b, -1.0);
    double total = 0.0;
    for (std::size_t i = 0; i < na; ++i)
      if (const auto* q = stage_points(out[i], 1)) total += cost(i, (*q)[0]);
    EXPECT_NEAR(total, oracle::min_assignment_total(cost), 1e-9);
    EXPECT_EQ(out.size(), std::max(na, nb));
  }
}

TEST(Semantic, FloorLeavesWeakPairsApart) {
  StagePredictionSet a{0, {smask(0, {0}, {1, 0}, 0.4)}};
  StagePredictionSet b{1, {smask(0, {0}, {1, 0.1}, 0.8)}};
  auto out = associate_semantic(a, b, 0.999);
  EXPECT_EQ(out.size(), 2u);
  out = associate_semantic(a, b, 0.9);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].confidence, 0.6);
}

TEST(Semantic, Errors) {
  StagePredictionSet a{0, {StageMask{0, 1.0, {0}, std::nullopt}}};
  StagePredictionSet b{1, {smask(0, {0}, {1})}};
  EXPECT_THROW(associate_semantic(a, b), Error);
  StagePredictionSet c{1, {smask(0, {0}, {1, 2})}};
  EXPECT_THROW(associate_semantic(b, c), Error);
  StagePredictionSet d{1, {smask(0, {0}, {1})}};
  EXPECT_THROW(associate_semantic(b, d), Error);
}

TEST(Geometric, IdenticalCloudCopiesLabels) {
  auto cloud = support::line_cloud(10);
  StagePredictionSet a{0, {smask(0, {0, 1, 2}, {}), smask(1, {5, 6}, {})}};
  const auto out = associate_geometric(a, cloud, cloud, 1);
  ASSERT_EQ(out.size(), 2u);
  for (const auto& m : out) EXPECT_EQ(*m.points_at(0), *m.points_at(1));
}

TEST(Geometric, NearAndFarObjects) {
  StageCloud a_cloud, b_cloud;
  for (int i = 0; i < 5; ++i) a_cloud.positions.push_back({0.1 * i, 0, 0});
  for (int i = 0; i < 5; ++i) a_cloud.positions.push_back({10 + 0.1 * i, 0, 0});
  for (int i = 0; i < 5; ++i) b_cloud.positions.push_back({10.05 + 0.1 * i, 0, 0});
  StagePredictionSet a{0, {smask(0, support::range(0, 5), {}), smask(0, support::range(5, 10), {})}};
  const auto out = associate_geometric(a, a_cloud, b_cloud, 1);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].points_at(1), nullptr);
  EXPECT_EQ(*out[1].points_at(1), support::range(0, 5));
}

TEST(Geometric, MatchesBruteForceTransfer) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0, 5);
  StageCloud a_cloud, b_cloud;
  for (int i = 0; i < 300; ++i) a_cloud.positions.push_back({u(rng), u(rng), u(rng)});
  for (int i = 0; i < 300; ++i) b_cloud.positions.push_back({u(rng), u(rng), u(rng)});
  StagePredictionSet a{0, {}};
  for (int m = 0; m < 6; ++m) {
    std::vector<PointIndex> pts;
    for (PointIndex p = static_cast<PointIndex>(m * 40); p < static_cast<PointIndex>(m * 40 + 40); ++p) pts.push_back(p);
    a.masks.push_back(smask(0, pts, {}));
  }
  std::vector<InstanceId> a_labels(300, kNoInstance);
  for (std::size_t m = 0; m < a.masks.size(); ++m)
    for (auto p : a.masks[m].points) a_labels[p] = static_cast<InstanceId>(m);
  const auto expect = oracle::nn_transfer(a_cloud.positions, a_labels, b_cloud.positions);
  const auto out = associate_geometric(a, a_cloud, b_cloud, 1);
  std::vector<InstanceId> got(300, kNoInstance);
  std::size_t total = 0;
  for (const auto& m : out)
    if (const auto* q = m.points_at(1))
      for (auto p : *q) {
        got[p] = m.instance_id;
        ++total;
      }
  EXPECT_EQ(got, expect);
  std::size_t labelled = 0;
  for (auto l : expect) labelled += l != kNoInstance;
  EXPECT_EQ(total, labelled);
}

TEST(Geometric, OverlappingMasksGoToMostConfident) {
  StagePredictionSet a{0, {smask(0, {0, 1, 2}, {}, 0.3), smask(0, {2, 3}, {}, 0.9)}};
  const auto labels = point_labels(a, 5);
  EXPECT_EQ(labels, (std::vector<InstanceId>{0, 0, 1, 1, kNoInstance}));
}

TEST(Geometric, Errors) {
  StagePredictionSet a{0, {smask(0, {0}, {})}};
  EXPECT_THROW(associate_geometric(a, StageCloud{}, support::line_cloud(3), 1), Error);
  EXPECT_THROW(associate_geometric(a, support::line_cloud(3), support::line_cloud(3), 0), Error);
  StagePredictionSet bad{0, {smask(0, {9}, {})}};
  EXPECT_THROW(associate_geometric(bad, support::line_cloud(3), support::line_cloud(3), 1), Error);
}
