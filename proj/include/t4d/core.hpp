#pragma once

// Shared data model: sequences of stage clouds, instance masks spanning a
// whole sequence, ground-truth annotations and their validation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace t4d {

enum class ErrorCode {
  invalid_argument,
  invalid_coordinate,
  out_of_range,
  dimension_mismatch,
  missing_data,
  infeasible,
  unreachable_target,
  sequence_mismatch,
  io_failure,
  parse_failure,
  unsupported_format,
  missing_property,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

using Vec3 = std::array<double, 3>;
using Rgb = std::array<float, 3>;
using PointIndex = std::uint32_t;
using InstanceId = std::int64_t;
using ClassId = std::int32_t;
using StageIndex = std::int32_t;

/// Label used in per-point label arrays for points that belong to no instance.
inline constexpr InstanceId kNoInstance = -1;

struct StageCloud {
  std::vector<Vec3> positions;
  std::optional<std::vector<Rgb>> colors;
  std::optional<std::vector<std::int64_t>> segment_ids;

  std::size_t point_count() const noexcept { return positions.size(); }
};

/// A temporal sequence of scans of one scene. The stage index doubles as the
/// temporal coordinate t of every point in that stage.
struct SequencePointCloud {
  std::string sequence_id;
  std::vector<StageCloud> stages;

  int stage_count() const noexcept { return static_cast<int>(stages.size()); }

  std::size_t total_points() const noexcept {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.point_count();
    return n;
  }
};

enum class ChangeType { static_object, rigid, non_rigid, ambiguous, added_removed };

inline constexpr std::array<ChangeType, 5> kAllChangeTypes = {
    ChangeType::static_object, ChangeType::rigid, ChangeType::non_rigid,
    ChangeType::ambiguous, ChangeType::added_removed};

inline std::string_view to_string(ChangeType c) {
  switch (c) {
    case ChangeType::static_object: return "static";
    case ChangeType::rigid: return "rigid";
    case ChangeType::non_rigid: return "non_rigid";
    case ChangeType::ambiguous: return "ambiguous";
    case ChangeType::added_removed: return "added_removed";
  }
  return "static";
}

inline ChangeType change_type_from_string(std::string_view s) {
  for (auto c : kAllChangeTypes)
    if (to_string(c) == s) return c;
  throw Error(ErrorCode::parse_failure, "unknown change type: " + std::string(s));
}

/// One instance identity spanning the whole sequence. Point indices per stage
/// are sorted and unique; a stage key with an empty list counts as absent.
struct InstanceMask {
  InstanceId instance_id = 0;
  ClassId class_id = 0;
  std::map<StageIndex, std::vector<PointIndex>> per_stage_points;
  double confidence = 1.0;

  const std::vector<PointIndex>* points_at(StageIndex t) const {
    auto it = per_stage_points.find(t);
    if (it == per_stage_points.end() || it->second.empty()) return nullptr;
    return &it->second;
  }

  bool present_at(StageIndex t) const { return points_at(t) != nullptr; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [t, pts] : per_stage_points) n += pts.size();
    return n;
  }

  bool empty() const { return size() == 0; }
};

struct AmbiguousGroup {
  int group_id = 0;
  std::vector<InstanceId> member_instance_ids;

  std::size_t n_amb() const noexcept { return member_instance_ids.size(); }
};

struct GroundTruthAnnotation {
  std::vector<InstanceMask> instances;
  std::vector<AmbiguousGroup> ambiguous_groups;
  std::map<InstanceId, ChangeType> change_labels;

  const InstanceMask* find(InstanceId id) const {
    for (const auto& m : instances)
      if (m.instance_id == id) return &m;
    return nullptr;
  }
};

/// Predictions of one method for one sequence.
struct PredictionSet {
  std::string sequence_id;
  std::vector<InstanceMask> instances;
};

// ---------------------------------------------------------------------------
// Validation

enum class ViolationCode {
  empty_sequence,
  empty_stage,
  attribute_length_mismatch,
  non_finite_coordinate,
  stage_out_of_range,
  point_out_of_range,
  unsorted_points,
  duplicate_point,
  empty_mask,
  duplicate_instance_id,
  confidence_out_of_range,
  group_too_small,
  unknown_group_member,
  cross_class_group,
  member_in_multiple_groups,
  unknown_labeled_instance,
};

struct Violation {
  ViolationCode code;
  std::string message;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }

  bool has(ViolationCode code) const {
    return std::any_of(violations.begin(), violations.end(),
                       [code](const Violation& v) { return v.code == code; });
  }
};

namespace detail {

inline void validate_mask(const SequencePointCloud& seq, const InstanceMask& m,
                          std::string_view role, std::vector<Violation>& out) {
  const std::string who =
      std::string(role) + " instance " + std::to_string(m.instance_id);
  if (m.empty()) out.push_back({ViolationCode::empty_mask, who + ": empty mask"});
  for (const auto& [t, pts] : m.per_stage_points) {
    if (t < 0 || t >= seq.stage_count()) {
      out.push_back({ViolationCode::stage_out_of_range,
                     who + ": stage out of range (" + std::to_string(t) + ")"});
      continue;
    }
    const auto n = seq.stages[static_cast<std::size_t>(t)].point_count();
    bool reported_range = false, reported_order = false, reported_dup = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i] >= n && !reported_range) {
        out.push_back({ViolationCode::point_out_of_range,
                       who + ": point index " + std::to_string(pts[i]) +
                           " out of range at stage " + std::to_string(t)});
        reported_range = true;
      }
      if (i > 0 && pts[i] == pts[i - 1] && !reported_dup) {
        out.push_back({ViolationCode::duplicate_point,
                       who + ": duplicate point " + std::to_string(pts[i]) +
                           " at stage " + std::to_string(t)});
        reported_dup = true;
      }
      if (i > 0 && pts[i] < pts[i - 1] && !reported_order) {
        out.push_back({ViolationCode::unsorted_points,
                       who + ": point indices not sorted at stage " + std::to_string(t)});
        reported_order = true;
      }
    }
  }
  if (!(m.confidence >= 0.0 && m.confidence <= 1.0))
    out.push_back({ViolationCode::confidence_out_of_range,
                   who + ": confidence outside [0,1]"});
}

}  // namespace detail

/// Checks every model invariant. Never throws on malformed input; the
/// violations are the result.
inline ValidationResult validate_sequence(const SequencePointCloud& seq,
                                          const GroundTruthAnnotation& gt,
                                          const std::vector<InstanceMask>& preds) {
  ValidationResult r;
  auto& out = r.violations;

  if (seq.stages.empty())
    out.push_back({ViolationCode::empty_sequence, "sequence has no stages"});
  for (std::size_t t = 0; t < seq.stages.size(); ++t) {
    const auto& s = seq.stages[t];
    const std::string where = "stage " + std::to_string(t);
    if (s.point_count() == 0)
      out.push_back({ViolationCode::empty_stage, where + ": no points"});
    if ((s.colors && s.colors->size() != s.point_count()) ||
        (s.segment_ids && s.segment_ids->size() != s.point_count()))
      out.push_back({ViolationCode::attribute_length_mismatch,
                     where + ": attribute length differs from point count"});
    for (const auto& p : s.positions) {
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
        out.push_back({ViolationCode::non_finite_coordinate,
                       where + ": non-finite coordinate"});
        break;
      }
    }
  }

  std::set<InstanceId> gt_ids;
  for (const auto& m : gt.instances) {
    if (!gt_ids.insert(m.instance_id).second)
      out.push_back({ViolationCode::duplicate_instance_id,
                     "gt instance " + std::to_string(m.instance_id) + ": duplicate id"});
    detail::validate_mask(seq, m, "gt", out);
  }
  std::set<InstanceId> pred_ids;
  for (const auto& m : preds) {
    if (!pred_ids.insert(m.instance_id).second)
      out.push_back({ViolationCode::duplicate_instance_id,
                     "pred instance " + std::to_string(m.instance_id) + ": duplicate id"});
    detail::validate_mask(seq, m, "pred", out);
  }

  std::map<InstanceId, int> group_of;
  for (const auto& g : gt.ambiguous_groups) {
    const std::string who = "ambiguous group " + std::to_string(g.group_id);
    if (g.n_amb() < 2)
      out.push_back({ViolationCode::group_too_small, who + ": fewer than 2 members"});
    std::set<ClassId> classes;
    for (auto id : g.member_instance_ids) {
      const auto* m = gt.find(id);
      if (m == nullptr) {
        out.push_back({ViolationCode::unknown_group_member,
                       who + ": unknown member " + std::to_string(id)});
        continue;
      }
      classes.insert(m->class_id);
      auto [it, inserted] = group_of.emplace(id, g.group_id);
      if (!inserted)
        out.push_back({ViolationCode::member_in_multiple_groups,
                       who + ": member " + std::to_string(id) + " already in group " +
                           std::to_string(it->second)});
    }
    if (classes.size() > 1)
      out.push_back({ViolationCode::cross_class_group, who + ": cross-class ambiguous group"});
  }

  for (const auto& [id, label] : gt.change_labels) {
    if (!gt_ids.count(id))
      out.push_back({ViolationCode::unknown_labeled_instance,
                     "change label for unknown instance " + std::to_string(id)});
  }
  return r;
}

}  // namespace t4d
