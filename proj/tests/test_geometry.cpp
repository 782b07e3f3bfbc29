#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <random>
#include <set>

#include "oracles.hpp"
#include "t4d/geometry.hpp"
#include "t4d/kdtree.hpp"

using namespace t4d;

namespace {

std::vector<Vec3> random_points(std::mt19937_64& rng, std::size_t n, double extent = 1.0) {
  std::uniform_real_distribution<double> u(0.0, extent);
  std::vector<Vec3> out(n);
  for (auto& p : out) p = {u(rng), u(rng), u(rng)};
  return out;
}

SequencePointCloud sequence_of(std::vector<std::vector<Vec3>> stages) {
  SequencePointCloud seq;
  seq.sequence_id = "g";
  for (auto& s : stages) seq.stages.push_back({std::move(s), std::nullopt, std::nullopt});
  return seq;
}

}  // namespace

TEST(Voxelize, NearbyPointsShareAVoxel) {
  const auto g = voxelize(sequence_of({{{0.001, 0, 0}, {0.015, 0, 0}}}), 0.02);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g.keys[0], (VoxelKey{0, 0, 0, 0}));
  EXPECT_EQ(g.voxel_of(0, 0), g.voxel_of(0, 1));
}

TEST(Voxelize, StagesNeverMerge) {
  const auto g = voxelize(sequence_of({{{0.01, 0, 0}}, {{0.01, 0, 0}}}), 0.02);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g.keys[0], (VoxelKey{0, 0, 0, 0}));
  EXPECT_EQ(g.keys[1], (VoxelKey{0, 0, 0, 1}));
}

TEST(Voxelize, FloorQuantization) {
  const auto g = voxelize(sequence_of({{{-0.001, 0.039, 0.04}}}), 0.02);
  EXPECT_EQ(g.keys[0], (VoxelKey{-1, 1, 2, 0}));
}

TEST(Voxelize, CountMatchesHashSetOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto pts = random_points(rng, 1000);
    const auto g = voxelize(sequence_of({pts}), 0.02);
    EXPECT_EQ(g.size(), oracle::count_quantized(pts, 0.02, 0));
    std::vector<std::size_t> seen(g.size(), 0);
    for (std::size_t p = 0; p < pts.size(); ++p) {
      const auto& k = g.keys[g.voxel_of(0, static_cast<PointIndex>(p))];
      EXPECT_EQ(k[0], static_cast<int>(std::floor(pts[p][0] / 0.02)));
      ++seen[g.voxel_of(0, static_cast<PointIndex>(p))];
    }
    for (std::size_t v = 0; v < g.size(); ++v) EXPECT_EQ(seen[v], g.points_of(v).size());
  }
}

TEST(Voxelize, NonFiniteCoordinateThrows) {
  auto seq = sequence_of({{{0, std::numeric_limits<double>::infinity(), 0}}});
  try {
    voxelize(seq);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_coordinate);
    EXPECT_NE(std::string(e.what()).find("invalid coordinate"), std::string::npos);
  }
  EXPECT_THROW(voxelize(sequence_of({{{0, 0, 0}}}), 0.0), Error);
}

TEST(Voxelize, CoarserResolutionNeverAddsVoxels) {
  std::mt19937_64 rng(5);
  auto seq = sequence_of({random_points(rng, 500), random_points(rng, 700)});
  for (double res : {0.01, 0.02, 0.05, 0.1}) {
    const auto fine = voxelize(seq, res);
    const auto coarse = voxelize(seq, 2 * res);
    for (std::size_t t = 0; t < 2; ++t) {
      auto count = [&](const VoxelGrid4D& g) {
        return std::count_if(g.keys.begin(), g.keys.end(), [&](const VoxelKey& k) { return k[3] == static_cast<int>(t); });
      };
      EXPECT_LE(count(coarse), count(fine));
    }
  }
}

TEST(Voxelize, ColorsAreAveraged) {
  auto seq = sequence_of({{{0.001, 0, 0}, {0.002, 0, 0}}});
  seq.stages[0].colors = std::vector<Rgb>{{0.0f, 0.2f, 1.0f}, {1.0f, 0.4f, 0.0f}};
  const auto g = voxelize(seq);
  ASSERT_TRUE(g.voxel_colors);
  EXPECT_FLOAT_EQ((*g.voxel_colors)[0][0], 0.5f);
  EXPECT_FLOAT_EQ((*g.voxel_colors)[0][1], 0.3f);
}

TEST(Downsample, FloorHalvesSpaceKeepsTime) {
  auto seq = sequence_of({{{0.001, 0.001, 0.001}, {0.021, 0.021, 0.021}}, {{0.001, 0.001, 0.001}}});
  const auto g = voxelize(seq, 0.02);
  ASSERT_EQ(g.size(), 3u);
  const auto up = downsample_level(g);
  ASSERT_EQ(up.size(), 2u);
  EXPECT_EQ(up.keys[0], (VoxelKey{0, 0, 0, 0}));
  EXPECT_EQ(up.keys[1], (VoxelKey{0, 0, 0, 1}));
  const auto pyr = build_grid_pyramid(g, 6);
  EXPECT_EQ(pyr.back().size(), 2u);
  EXPECT_EQ(pyr.back().level, 5);
}

TEST(Downsample, NegativeKeysFloor) {
  EXPECT_EQ(parent_key({-1, -2, -3, 4}), (VoxelKey{-1, -1, -2, 4}));
}

TEST(Downsample, ParentMapMatchesRecomputation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<Vec3> a(400), b(400);
  for (auto* v : {&a, &b})
    for (auto& p : *v) p = {u(rng), u(rng), u(rng)};
  auto g = voxelize(sequence_of({a, b}), 0.02);
  for (int level = 0; level < 4; ++level) {
    const auto up = downsample_level(g);
    ASSERT_EQ(up.parent_of_child.size(), g.size());
    for (std::size_t c = 0; c < g.size(); ++c) {
      const auto& k = g.keys[c];
      const VoxelKey expect{static_cast<int>(std::floor(k[0] / 2.0)), static_cast<int>(std::floor(k[1] / 2.0)),
                            static_cast<int>(std::floor(k[2] / 2.0)), k[3]};
      EXPECT_EQ(up.keys[up.parent_of_child[c]], expect);
    }
    std::set<VoxelKey> uniq(up.keys.begin(), up.keys.end());
    EXPECT_EQ(uniq.size(), up.size());
    for (std::size_t p = 0; p < g.point_to_voxel.size(); ++p)
      EXPECT_EQ(up.point_to_voxel[p], up.parent_of_child[g.point_to_voxel[p]]);
    g = up;
  }
}

TEST(FeatureHierarchy, MeanPoolsChildren) {
  auto g = voxelize(sequence_of({{{0.001, 0, 0}, {0.021, 0, 0}, {0.041, 0, 0}}}), 0.02);
  Matrix f{{1.0}, {3.0}, {10.0}};
  const auto h = build_feature_hierarchy(g, f, 2);
  ASSERT_EQ(h.levels.size(), 2u);
  ASSERT_EQ(h.levels[1].coordinates.size(), 2u);
  EXPECT_DOUBLE_EQ(h.levels[1].features(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(h.levels[1].features(1, 0), 10.0);
  EXPECT_EQ(h.pooling_maps[0], (std::vector<std::uint32_t>{0, 0, 1}));
}

TEST(Superpoints, IdenticalFeaturesPoolToThemselves) {
  StageCloud s;
  s.positions.resize(4);
  s.segment_ids = std::vector<std::int64_t>(4, 9);
  const auto r = pool_superpoint_features(s, Matrix{{1, 2}, {1, 2}, {1, 2}, {1, 2}});
  ASSERT_EQ(r.segment_ids, (std::vector<std::int64_t>{9}));
  EXPECT_DOUBLE_EQ(r.features(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(r.features(0, 1), 2.0);
}

TEST(Superpoints, TwoPointMean) {
  StageCloud s;
  s.positions.resize(2);
  s.segment_ids = std::vector<std::int64_t>{0, 0};
  const auto r = pool_superpoint_features(s, Matrix{{0, 2}, {2, 0}});
  EXPECT_DOUBLE_EQ(r.features(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(r.features(0, 1), 1.0);
}

TEST(Superpoints, MatchesNaiveGrouping) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> seg(0, 6);
  std::normal_distribution<double> nd;
  StageCloud s;
  s.positions.resize(100);
  s.segment_ids.emplace();
  std::vector<std::vector<double>> f(100, std::vector<double>(5));
  for (std::size_t i = 0; i < 100; ++i) {
    s.segment_ids->push_back(seg(rng) * 3 - 4);
    for (auto& v : f[i]) v = nd(rng);
  }
  const auto r = pool_superpoint_features(s, Matrix::from_rows(f));
  const auto ref = oracle::segment_means(*s.segment_ids, f);
  ASSERT_EQ(r.segment_ids.size(), ref.size());
  std::size_t row = 0;
  for (const auto& [id, mean] : ref) {
    EXPECT_EQ(r.segment_ids[row], id);
    for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(r.features(row, d), mean[d], 1e-12);
    ++row;
  }
}

TEST(Superpoints, Errors) {
  StageCloud s;
  s.positions.resize(2);
  EXPECT_THROW(pool_superpoint_features(s, Matrix(2, 1)), Error);
  s.segment_ids = std::vector<std::int64_t>{0, 1};
  EXPECT_THROW(pool_superpoint_features(s, Matrix(3, 1)), Error);
}

TEST(NearestNeighbor, CopyOfSourceCopiesLabels) {
  std::mt19937_64 rng(1);
  StageCloud s{random_points(rng, 200), std::nullopt, std::nullopt};
  std::vector<InstanceId> labels(200);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<InstanceId>(i % 7) - 1;
  EXPECT_EQ(nearest_neighbor_labels(s, labels, s), labels);
}

TEST(NearestNeighbor, SingleSource) {
  StageCloud s{{{0, 0, 0}}, std::nullopt, std::nullopt};
  std::mt19937_64 rng(2);
  StageCloud q{random_points(rng, 50, 10.0), std::nullopt, std::nullopt};
  const std::vector<InstanceId> labels{5};
  for (auto l : nearest_neighbor_labels(s, labels, q)) EXPECT_EQ(l, 5);
}

TEST(NearestNeighbor, MatchesExhaustiveScan) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    StageCloud s{random_points(rng, 500), std::nullopt, std::nullopt};
    StageCloud q{random_points(rng, 500), std::nullopt, std::nullopt};
    std::vector<InstanceId> labels(500);
    std::iota(labels.begin(), labels.end(), 0);
    EXPECT_EQ(nearest_neighbor_labels(s, labels, q), oracle::nn_transfer(s.positions, labels, q.positions));
  }
}

TEST(NearestNeighbor, TiesGoToLowestIndex) {
  // Duplicated and grid-aligned points create many exact ties.
  std::vector<Vec3> src;
  for (int rep = 0; rep < 3; ++rep)
    for (int x = 0; x < 6; ++x)
      for (int y = 0; y < 6; ++y) src.push_back({double(x), double(y), 0.0});
  KdTree3 tree(src);
  for (int x = 0; x < 11; ++x)
    for (int y = 0; y < 11; ++y) {
      const Vec3 q{x * 0.5, y * 0.5, 0.0};
      EXPECT_EQ(tree.nearest(q), oracle::nearest_index(src, q));
    }
}

TEST(NearestNeighbor, QueryPermutationPermutesOutput) {
  std::mt19937_64 rng(6);
  StageCloud s{random_points(rng, 100), std::nullopt, std::nullopt};
  StageCloud q{random_points(rng, 80), std::nullopt, std::nullopt};
  std::vector<InstanceId> labels(100);
  std::iota(labels.begin(), labels.end(), 0);
  const auto base = nearest_neighbor_labels(s, labels, q);
  std::vector<std::size_t> perm(80);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  StageCloud qp;
  for (auto i : perm) qp.positions.push_back(q.positions[i]);
  const auto shuffled = nearest_neighbor_labels(s, labels, qp);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(shuffled[i], base[perm[i]]);
}

TEST(NearestNeighbor, EmptySourceThrows) {
  EXPECT_THROW(nearest_neighbor_labels(StageCloud{}, {}, StageCloud{{{0, 0, 0}}, std::nullopt, std::nullopt}), Error);
}

TEST(TemporalSeparation, NoKeySharedAcrossStagesAtAnyLevel) {
  std::mt19937_64 rng(12);
  auto pts = random_points(rng, 300);
  auto g = voxelize(sequence_of({pts, pts, pts}), 0.02);
  for (int level = 0; level < 8; ++level) {
    std::set<std::array<int, 3>> seen[3];
    for (const auto& k : g.keys) seen[k[3]].insert({k[0], k[1], k[2]});
    std::size_t per_stage = seen[0].size() + seen[1].size() + seen[2].size();
    EXPECT_EQ(per_stage, g.size());
    g = downsample_level(g);
  }
}
