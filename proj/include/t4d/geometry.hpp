#pragma once

// 4D voxelization that keeps stages apart, hierarchical downsampling,
// superpoint feature pooling and exact nearest-neighbour label transfer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "t4d/core.hpp"
#include "t4d/kdtree.hpp"
#include "t4d/matrix.hpp"

namespace t4d {

/// Integer voxel coordinate (i, j, k, t).
using VoxelKey = std::array<std::int32_t, 4>;

inline constexpr double kDefaultVoxelResolution = 0.02;

/// Orders keys by stage first, then spatially.
inline bool stage_major_less(const VoxelKey& a, const VoxelKey& b) {
  if (a[3] != b[3]) return a[3] < b[3];
  if (a[0] != b[0]) return a[0] < b[0];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[2] < b[2];
}

/// Sparse voxel set over a whole sequence. Points are addressed by a global
/// index: stage_offsets[t] + local index.
struct VoxelGrid4D {
  double resolution = kDefaultVoxelResolution;
  int level = 0;
  std::vector<VoxelKey> keys;  // unique, sorted by stage_major_less
  std::vector<std::size_t> stage_offsets;
  std::vector<std::uint32_t> point_to_voxel;
  std::vector<std::uint32_t> voxel_offsets;  // CSR into voxel_points, size keys+1
  std::vector<std::uint32_t> voxel_points;
  /// For a grid produced by downsample_level: the voxel of this grid that each
  /// voxel of the finer grid pools into.
  std::vector<std::uint32_t> parent_of_child;
  /// Mean color of member points, when the input carried colors.
  std::optional<std::vector<Rgb>> voxel_colors;

  std::size_t size() const noexcept { return keys.size(); }

  std::span<const std::uint32_t> points_of(std::size_t v) const {
    return {voxel_points.data() + voxel_offsets[v], voxel_offsets[v + 1] - voxel_offsets[v]};
  }

  std::size_t global_index(StageIndex t, PointIndex p) const {
    return stage_offsets[static_cast<std::size_t>(t)] + p;
  }

  std::uint32_t voxel_of(StageIndex t, PointIndex p) const {
    return point_to_voxel[global_index(t, p)];
  }
};

namespace detail {

inline void build_voxel_csr(VoxelGrid4D& g) {
  g.voxel_offsets.assign(g.keys.size() + 1, 0);
  for (auto v : g.point_to_voxel) ++g.voxel_offsets[v + 1];
  for (std::size_t i = 1; i < g.voxel_offsets.size(); ++i)
    g.voxel_offsets[i] += g.voxel_offsets[i - 1];
  g.voxel_points.resize(g.point_to_voxel.size());
  auto cursor = g.voxel_offsets;
  for (std::uint32_t p = 0; p < g.point_to_voxel.size(); ++p)
    g.voxel_points[cursor[g.point_to_voxel[p]]++] = p;
}

inline std::int32_t quantize(double x, double resolution) {
  if (!std::isfinite(x)) throw Error(ErrorCode::invalid_coordinate, "invalid coordinate");
  const double q = std::floor(x / resolution);
  if (q < std::numeric_limits<std::int32_t>::min() || q > std::numeric_limits<std::int32_t>::max())
    throw Error(ErrorCode::invalid_coordinate, "invalid coordinate (outside voxel index range)");
  return static_cast<std::int32_t>(q);
}

}  // namespace detail

/// Quantizes every point to (floor(x/res), floor(y/res), floor(z/res), t).
/// Points of one stage sharing a cell merge; stages never merge.
inline VoxelGrid4D voxelize(const SequencePointCloud& seq,
                            double resolution = kDefaultVoxelResolution) {
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    throw Error(ErrorCode::invalid_argument, "voxel resolution must be positive");

  VoxelGrid4D g;
  g.resolution = resolution;
  g.stage_offsets.assign(seq.stages.size() + 1, 0);
  for (std::size_t t = 0; t < seq.stages.size(); ++t)
    g.stage_offsets[t + 1] = g.stage_offsets[t] + seq.stages[t].point_count();
  const std::size_t n = g.stage_offsets.back();
  if (n >= std::numeric_limits<std::uint32_t>::max())
    throw Error(ErrorCode::invalid_argument, "too many points for one grid");

  struct Entry {
    VoxelKey key;
    std::uint32_t point;
  };
  std::vector<Entry> entries(n);
  for (std::size_t t = 0; t < seq.stages.size(); ++t) {
    const auto& pos = seq.stages[t].positions;
    for (std::size_t p = 0; p < pos.size(); ++p) {
      entries[g.stage_offsets[t] + p] = {
          {detail::quantize(pos[p][0], resolution), detail::quantize(pos[p][1], resolution),
           detail::quantize(pos[p][2], resolution), static_cast<std::int32_t>(t)},
          static_cast<std::uint32_t>(g.stage_offsets[t] + p)};
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.key != b.key) return stage_major_less(a.key, b.key);
    return a.point < b.point;
  });

  g.point_to_voxel.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || entries[i].key != entries[i - 1].key) g.keys.push_back(entries[i].key);
    g.point_to_voxel[entries[i].point] = static_cast<std::uint32_t>(g.keys.size() - 1);
  }
  detail::build_voxel_csr(g);

  const bool colored = !seq.stages.empty() &&
                       std::all_of(seq.stages.begin(), seq.stages.end(),
                                   [](const StageCloud& s) { return s.colors.has_value(); });
  if (colored) {
    std::vector<std::array<double, 3>> sum(g.keys.size(), {0.0, 0.0, 0.0});
    for (std::size_t t = 0; t < seq.stages.size(); ++t) {
      const auto& colors = *seq.stages[t].colors;
      for (std::size_t p = 0; p < colors.size(); ++p) {
        auto& s = sum[g.point_to_voxel[g.stage_offsets[t] + p]];
        for (int c = 0; c < 3; ++c) s[c] += colors[p][c];
      }
    }
    std::vector<Rgb> out(g.keys.size());
    for (std::size_t v = 0; v < out.size(); ++v) {
      const double cnt = g.voxel_offsets[v + 1] - g.voxel_offsets[v];
      for (int c = 0; c < 3; ++c) out[v][c] = static_cast<float>(sum[v][c] / cnt);
    }
    g.voxel_colors = std::move(out);
  }
  return g;
}

/// Parent of a key one hierarchy level up: spatial axes floor-halved, t kept.
inline VoxelKey parent_key(const VoxelKey& k) {
  // >> on signed values is an arithmetic (flooring) shift since C++20.
  return {k[0] >> 1, k[1] >> 1, k[2] >> 1, k[3]};
}

/// Next coarser level. Records the child -> parent map in parent_of_child.
inline VoxelGrid4D downsample_level(const VoxelGrid4D& grid) {
  VoxelGrid4D out;
  out.resolution = grid.resolution * 2.0;
  out.level = grid.level + 1;
  out.stage_offsets = grid.stage_offsets;

  std::vector<std::pair<VoxelKey, std::uint32_t>> pk(grid.keys.size());
  for (std::uint32_t c = 0; c < grid.keys.size(); ++c) pk[c] = {parent_key(grid.keys[c]), c};
  std::sort(pk.begin(), pk.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return stage_major_less(a.first, b.first);
    return a.second < b.second;
  });
  out.parent_of_child.resize(grid.keys.size());
  for (std::size_t i = 0; i < pk.size(); ++i) {
    if (i == 0 || pk[i].first != pk[i - 1].first) out.keys.push_back(pk[i].first);
    out.parent_of_child[pk[i].second] = static_cast<std::uint32_t>(out.keys.size() - 1);
  }

  out.point_to_voxel.resize(grid.point_to_voxel.size());
  for (std::size_t p = 0; p < grid.point_to_voxel.size(); ++p)
    out.point_to_voxel[p] = out.parent_of_child[grid.point_to_voxel[p]];
  detail::build_voxel_csr(out);

  if (grid.voxel_colors) {
    std::vector<std::array<double, 3>> sum(out.keys.size(), {0.0, 0.0, 0.0});
    for (std::size_t c = 0; c < grid.keys.size(); ++c) {
      const double w = grid.voxel_offsets[c + 1] - grid.voxel_offsets[c];
      for (int ch = 0; ch < 3; ++ch) sum[out.parent_of_child[c]][ch] += w * (*grid.voxel_colors)[c][ch];
    }
    std::vector<Rgb> colors(out.keys.size());
    for (std::size_t v = 0; v < colors.size(); ++v) {
      const double cnt = out.voxel_offsets[v + 1] - out.voxel_offsets[v];
      for (int ch = 0; ch < 3; ++ch) colors[v][ch] = static_cast<float>(sum[v][ch] / cnt);
    }
    out.voxel_colors = std::move(colors);
  }
  return out;
}

/// Levels 0..n_levels-1, level 0 being the input grid.
inline std::vector<VoxelGrid4D> build_grid_pyramid(const VoxelGrid4D& finest, int n_levels) {
  if (n_levels < 1) throw Error(ErrorCode::invalid_argument, "n_levels must be >= 1");
  std::vector<VoxelGrid4D> levels{finest};
  for (int r = 1; r < n_levels; ++r) levels.push_back(downsample_level(levels.back()));
  return levels;
}

struct FeatureLevel {
  std::vector<VoxelKey> coordinates;
  Matrix features;
};

/// Mean-pooled voxel features at successively coarser levels.
/// pooling_maps[r] maps each voxel of level r to its parent in level r+1.
struct FeatureHierarchy {
  std::vector<FeatureLevel> levels;
  std::vector<std::vector<std::uint32_t>> pooling_maps;
};

inline FeatureHierarchy build_feature_hierarchy(const VoxelGrid4D& grid, const Matrix& voxel_features,
                                                int n_levels) {
  if (voxel_features.rows() != grid.size())
    throw Error(ErrorCode::dimension_mismatch, "one feature row per voxel required");
  const auto grids = build_grid_pyramid(grid, n_levels);
  FeatureHierarchy h;
  h.levels.push_back({grid.keys, voxel_features});
  for (int r = 1; r < n_levels; ++r) {
    const auto& g = grids[static_cast<std::size_t>(r)];
    const auto& child = h.levels.back();
    Matrix f(g.size(), voxel_features.cols(), 0.0);
    std::vector<double> count(g.size(), 0.0);
    for (std::size_t c = 0; c < child.coordinates.size(); ++c) {
      const auto p = g.parent_of_child[c];
      count[p] += 1.0;
      for (std::size_t d = 0; d < f.cols(); ++d) f(p, d) += child.features(c, d);
    }
    for (std::size_t v = 0; v < g.size(); ++v)
      for (std::size_t d = 0; d < f.cols(); ++d) f(v, d) /= count[v];
    h.pooling_maps.push_back(g.parent_of_child);
    h.levels.push_back({g.keys, std::move(f)});
  }
  return h;
}

struct SuperpointFeatures {
  std::vector<std::int64_t> segment_ids;  // ascending
  Matrix features;                        // one mean row per segment
};

/// Arithmetic mean of point features over each superpoint segment.
inline SuperpointFeatures pool_superpoint_features(const StageCloud& stage,
                                                   const Matrix& point_features) {
  if (!stage.segment_ids)
    throw Error(ErrorCode::missing_data, "stage has no segment ids");
  if (point_features.rows() != stage.point_count())
    throw Error(ErrorCode::dimension_mismatch, "one feature row per point required");

  const auto& seg = *stage.segment_ids;
  std::map<std::int64_t, std::size_t> slot;
  for (auto s : seg) slot.emplace(s, 0);
  SuperpointFeatures out;
  for (auto& [id, idx] : slot) {
    idx = out.segment_ids.size();
    out.segment_ids.push_back(id);
  }
  out.features = Matrix(out.segment_ids.size(), point_features.cols(), 0.0);
  std::vector<double> count(out.segment_ids.size(), 0.0);
  for (std::size_t p = 0; p < seg.size(); ++p) {
    const auto r = slot[seg[p]];
    count[r] += 1.0;
    for (std::size_t d = 0; d < point_features.cols(); ++d) out.features(r, d) += point_features(p, d);
  }
  for (std::size_t r = 0; r < count.size(); ++r)
    for (std::size_t d = 0; d < out.features.cols(); ++d) out.features(r, d) /= count[r];
  return out;
}

/// Each query point takes the label of its Euclidean-nearest source point
/// (lowest source index on ties).
inline std::vector<InstanceId> nearest_neighbor_labels(const StageCloud& source,
                                                       std::span<const InstanceId> source_labels,
                                                       const StageCloud& query) {
  if (source.point_count() == 0)
    throw Error(ErrorCode::invalid_argument, "nearest-neighbor source cloud is empty");
  if (source_labels.size() != source.point_count())
    throw Error(ErrorCode::dimension_mismatch, "one label per source point required");
  const KdTree3 tree(source.positions);
  std::vector<InstanceId> out(query.point_count());
  for (std::size_t q = 0; q < out.size(); ++q)
    out[q] = source_labels[tree.nearest(query.positions[q])];
  return out;
}

}  // namespace t4d
