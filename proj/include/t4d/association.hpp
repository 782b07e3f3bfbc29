#pragma once

// Post-hoc lifting of independent per-stage predictions into sequence-level
// instances: feature-similarity matching within a predicted class, and
// nearest-neighbour label transfer from the first scan.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "t4d/assignment.hpp"
#include "t4d/core.hpp"
#include "t4d/geometry.hpp"

namespace t4d {

struct StageMask {
  ClassId class_id = 0;
  double confidence = 1.0;
  std::vector<PointIndex> points;  // sorted
  std::optional<std::vector<double>> feature;
};

/// Predictions of a single-scan method for one stage.
struct StagePredictionSet {
  StageIndex stage = 0;
  std::vector<StageMask> masks;
};

inline constexpr double kDefaultSimilarityFloor = 0.0;

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension_mismatch, "instance features differ in length");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace detail

/// Matches masks of stage a to masks of stage b within each predicted class
/// by minimizing negative cosine similarity of their features. Pairs below
/// `similarity_floor` are left unmatched. Matched pairs become two-stage
/// instances with the mean confidence; everything else stays single-stage.
/// Ids: stage-a masks get 0..|a|-1 in order, unmatched stage-b masks follow.
inline std::vector<InstanceMask> associate_semantic(const StagePredictionSet& a,
                                                    const StagePredictionSet& b,
                                                    double similarity_floor = kDefaultSimilarityFloor) {
  for (const auto* set : {&a, &b})
    for (const auto& m : set->masks)
      if (!m.feature) throw Error(ErrorCode::missing_data, "semantic association needs instance features");
  if (a.stage == b.stage) throw Error(ErrorCode::invalid_argument, "both prediction sets are for the same stage");

  std::vector<std::ptrdiff_t> match_of_a(a.masks.size(), -1);
  std::vector<bool> b_matched(b.masks.size(), false);
  std::set<ClassId> classes;
  for (const auto& m : a.masks) classes.insert(m.class_id);
  for (auto c : classes) {
    std::vector<std::size_t> ia, ib;
    for (std::size_t i = 0; i < a.masks.size(); ++i)
      if (a.masks[i].class_id == c) ia.push_back(i);
    for (std::size_t j = 0; j < b.masks.size(); ++j)
      if (b.masks[j].class_id == c) ib.push_back(j);
    if (ia.empty() || ib.empty()) continue;
    Matrix sim(ia.size(), ib.size()), cost(ia.size(), ib.size());
    for (std::size_t r = 0; r < ia.size(); ++r)
      for (std::size_t s = 0; s < ib.size(); ++s) {
        sim(r, s) = detail::cosine(*a.masks[ia[r]].feature, *b.masks[ib[s]].feature);
        cost(r, s) = -sim(r, s);
      }
    const auto m = solve_assignment(cost);
    for (std::size_t r = 0; r < ia.size(); ++r) {
      const auto s = m.row_to_col[r];
      if (s < 0 || sim(r, static_cast<std::size_t>(s)) < similarity_floor) continue;
      match_of_a[ia[r]] = static_cast<std::ptrdiff_t>(ib[static_cast<std::size_t>(s)]);
      b_matched[ib[static_cast<std::size_t>(s)]] = true;
    }
  }

  std::vector<InstanceMask> out;
  InstanceId next = 0;
  for (std::size_t i = 0; i < a.masks.size(); ++i) {
    const auto& ma = a.masks[i];
    InstanceMask inst{next++, ma.class_id, {}, ma.confidence};
    if (!ma.points.empty()) inst.per_stage_points[a.stage] = ma.points;
    if (match_of_a[i] >= 0) {
      const auto& mb = b.masks[static_cast<std::size_t>(match_of_a[i])];
      if (!mb.points.empty()) inst.per_stage_points[b.stage] = mb.points;
      inst.confidence = 0.5 * (ma.confidence + mb.confidence);
    }
    out.push_back(std::move(inst));
  }
  for (std::size_t j = 0; j < b.masks.size(); ++j) {
    if (b_matched[j]) continue;
    const auto& mb = b.masks[j];
    InstanceMask inst{next++, mb.class_id, {}, mb.confidence};
    if (!mb.points.empty()) inst.per_stage_points[b.stage] = mb.points;
    out.push_back(std::move(inst));
  }
  return out;
}

/// Per-point instance labels of a stage from its masks; a point claimed by
/// several masks goes to the most confident one. Unclaimed points get
/// kNoInstance. Labels are mask positions.
inline std::vector<InstanceId> point_labels(const StagePredictionSet& set, std::size_t point_count) {
  std::vector<InstanceId> labels(point_count, kNoInstance);
  std::vector<double> best(point_count, -1.0);
  for (std::size_t i = 0; i < set.masks.size(); ++i)
    for (auto p : set.masks[i].points) {
      if (p >= point_count) throw Error(ErrorCode::out_of_range, "mask point index out of range");
      if (set.masks[i].confidence > best[p]) {
        best[p] = set.masks[i].confidence;
        labels[p] = static_cast<InstanceId>(i);
      }
    }
  return labels;
}

/// Every point of stage b inherits the stage-a instance of its nearest stage-a
/// point ("no instance" propagates). Instance id i is the i-th stage-a mask.
inline std::vector<InstanceMask> associate_geometric(const StagePredictionSet& a,
                                                     const StageCloud& a_cloud,
                                                     const StageCloud& b_cloud, StageIndex b_stage) {
  if (a_cloud.point_count() == 0) throw Error(ErrorCode::invalid_argument, "first-stage cloud is empty");
  if (b_stage == a.stage) throw Error(ErrorCode::invalid_argument, "both clouds are the same stage");
  const auto a_labels = point_labels(a, a_cloud.point_count());
  const auto b_labels = nearest_neighbor_labels(a_cloud, a_labels, b_cloud);

  std::vector<InstanceMask> out;
  for (std::size_t i = 0; i < a.masks.size(); ++i) {
    InstanceMask inst{static_cast<InstanceId>(i), a.masks[i].class_id, {}, a.masks[i].confidence};
    std::vector<PointIndex> own;
    for (std::size_t p = 0; p < a_labels.size(); ++p)
      if (a_labels[p] == static_cast<InstanceId>(i)) own.push_back(static_cast<PointIndex>(p));
    if (!own.empty()) inst.per_stage_points[a.stage] = std::move(own);
    out.push_back(std::move(inst));
  }
  for (std::size_t q = 0; q < b_labels.size(); ++q)
    if (b_labels[q] != kNoInstance)
      out[static_cast<std::size_t>(b_labels[q])].per_stage_points[b_stage].push_back(static_cast<PointIndex>(q));
  std::erase_if(out, [](const InstanceMask& m) { return m.empty(); });
  return out;
}

}  // namespace t4d
