#pragma once

// Synthetic multi-stage scenes with exact ground truth, and controlled
// degradation of that ground truth into predictions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "t4d/core.hpp"
#include "t4d/detail/random.hpp"
#include "t4d/metrics.hpp"

namespace t4d {

enum class Shape { box, sphere };

enum class ChangeKind { static_object, rigid, non_rigid, swap, add, remove };

/// What happens to one object between stage s and s+1.
struct ChangeStep {
  ChangeKind kind = ChangeKind::static_object;
  Vec3 translation{0.0, 0.0, 0.0};  // rigid
  double yaw = 0.0;                 // rigid, radians about +z
  double amplitude = 0.03;          // non_rigid, meters
  double wavelength = 0.5;          // non_rigid, meters
};

struct ObjectSpec {
  Shape shape = Shape::box;
  /// Box edge lengths; for spheres size[0] is the diameter.
  Vec3 size{0.5, 0.5, 0.5};
  ClassId class_id = 0;
  int points = 200;
  /// Stage-0 center; placed at random when absent.
  std::optional<Vec3> position;
  /// One entry per transition; missing entries mean static.
  std::vector<ChangeStep> changes;
};

struct SceneRecipe {
  std::uint64_t seed = 0;
  std::string sequence_id = "synthetic";
  int n_stages = 2;
  /// Floor extent (x, y) in meters; objects are placed inside it.
  std::array<double, 2> room{8.0, 8.0};
  int background_points = 400;
  std::vector<ObjectSpec> objects;
  /// Object indices of each group of interchangeable objects.
  std::vector<std::vector<std::size_t>> ambiguous_groups;
  int placement_retries = 500;
};

struct SyntheticScene {
  SequencePointCloud sequence;
  GroundTruthAnnotation annotation;
};

namespace detail {

inline double object_radius(const ObjectSpec& o) {
  if (o.shape == Shape::sphere) return 0.5 * o.size[0];
  return 0.5 * std::sqrt(o.size[0] * o.size[0] + o.size[1] * o.size[1] + o.size[2] * o.size[2]);
}

inline double object_half_height(const ObjectSpec& o) {
  return o.shape == Shape::sphere ? 0.5 * o.size[0] : 0.5 * o.size[2];
}

inline std::vector<Vec3> sample_object(const ObjectSpec& o, Rng& rng) {
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(o.points));
  while (pts.size() < static_cast<std::size_t>(o.points)) {
    if (o.shape == Shape::box) {
      pts.push_back({rng.uniform(-0.5, 0.5) * o.size[0], rng.uniform(-0.5, 0.5) * o.size[1],
                     rng.uniform(-0.5, 0.5) * o.size[2]});
    } else {
      const Vec3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] > 1.0) continue;
      const double r = 0.5 * o.size[0];
      pts.push_back({p[0] * r, p[1] * r, p[2] * r});
    }
  }
  return pts;
}

inline Vec3 rotate_z(const Vec3& p, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
}

inline ChangeStep step_at(const ObjectSpec& o, int s) {
  return static_cast<std::size_t>(s) < o.changes.size() ? o.changes[static_cast<std::size_t>(s)] : ChangeStep{};
}

inline void validate_recipe(const SceneRecipe& r) {
  if (r.n_stages < 1) throw Error(ErrorCode::invalid_argument, "recipe needs at least one stage");
  if (r.background_points < 0) throw Error(ErrorCode::invalid_argument, "negative background point count");
  std::vector<int> group_of(r.objects.size(), -1);
  for (std::size_t g = 0; g < r.ambiguous_groups.size(); ++g) {
    const auto& members = r.ambiguous_groups[g];
    if (members.size() < 2) throw Error(ErrorCode::invalid_argument, "ambiguous group needs >= 2 members");
    for (auto m : members) {
      if (m >= r.objects.size()) throw Error(ErrorCode::invalid_argument, "ambiguous group member out of range");
      if (group_of[m] >= 0) throw Error(ErrorCode::invalid_argument, "object in more than one ambiguous group");
      group_of[m] = static_cast<int>(g);
      const auto& a = r.objects[members.front()];
      const auto& b = r.objects[m];
      if (a.shape != b.shape || a.size != b.size || a.class_id != b.class_id || a.points != b.points)
        throw Error(ErrorCode::invalid_argument, "ambiguous group members must be identical objects");
    }
  }
  for (std::size_t i = 0; i < r.objects.size(); ++i) {
    const auto& o = r.objects[i];
    if (o.points < 1) throw Error(ErrorCode::invalid_argument, "object needs at least one point");
    if (o.changes.size() > static_cast<std::size_t>(std::max(r.n_stages - 1, 0)))
      throw Error(ErrorCode::invalid_argument, "more change steps than transitions");
    for (const auto& c : o.changes)
      if (c.kind == ChangeKind::swap && group_of[i] < 0)
        throw Error(ErrorCode::invalid_argument, "swap change on an object outside any ambiguous group");
  }
}

}  // namespace detail

/// Builds the stage clouds and annotation of a recipe. Instance ids are
/// object index + 1; all objects of one recipe share one local point sample
/// per ambiguous group so swapped members are exact copies.
inline SyntheticScene generate(const SceneRecipe& recipe) {
  detail::validate_recipe(recipe);
  detail::Rng rng(recipe.seed);
  const auto n_obj = recipe.objects.size();
  const int T = recipe.n_stages;

  // Placement on the floor without bounding-sphere overlap.
  std::vector<Vec3> center(n_obj);
  for (std::size_t i = 0; i < n_obj; ++i) {
    const auto& o = recipe.objects[i];
    const double r = detail::object_radius(o);
    int tries = 0;
    for (;;) {
      Vec3 c;
      if (o.position) {
        c = *o.position;
      } else {
        if (recipe.room[0] <= 2 * r || recipe.room[1] <= 2 * r)
          throw Error(ErrorCode::infeasible, "object does not fit in the room");
        c = {rng.uniform(r, recipe.room[0] - r), rng.uniform(r, recipe.room[1] - r),
             detail::object_half_height(o) + 0.05};
      }
      bool clear = true;
      for (std::size_t j = 0; j < i && clear; ++j) {
        const double d = std::hypot(c[0] - center[j][0], c[1] - center[j][1], c[2] - center[j][2]);
        clear = d > r + detail::object_radius(recipe.objects[j]);
      }
      if (clear) {
        center[i] = c;
        break;
      }
      if (o.position || ++tries > recipe.placement_retries)
        throw Error(ErrorCode::infeasible, "cannot place object " + std::to_string(i) +
                                               " without overlap within the retry budget");
    }
  }

  std::vector<int> group_of(n_obj, -1);
  for (std::size_t g = 0; g < recipe.ambiguous_groups.size(); ++g)
    for (auto m : recipe.ambiguous_groups[g]) group_of[m] = static_cast<int>(g);

  std::vector<std::vector<Vec3>> local(n_obj);
  std::vector<Rgb> color(n_obj);
  std::map<int, std::size_t> group_sample;
  for (std::size_t i = 0; i < n_obj; ++i) {
    detail::Rng orng{recipe.seed, 1000 + static_cast<std::uint64_t>(i)};
    color[i] = {static_cast<float>(orng.uniform()), static_cast<float>(orng.uniform()),
                static_cast<float>(orng.uniform())};
    if (group_of[i] >= 0) {
      auto [it, fresh] = group_sample.emplace(group_of[i], i);
      if (!fresh) {
        local[i] = local[it->second];
        color[i] = color[it->second];
        continue;
      }
    }
    local[i] = detail::sample_object(recipe.objects[i], orng);
  }

  // Per-stage pose, shape and presence.
  std::vector<std::vector<Vec3>> centers(n_obj, std::vector<Vec3>(static_cast<std::size_t>(T)));
  std::vector<std::vector<double>> yaws(n_obj, std::vector<double>(static_cast<std::size_t>(T), 0.0));
  std::vector<std::vector<std::vector<Vec3>>> shapes(n_obj);
  std::vector<std::vector<bool>> present(n_obj, std::vector<bool>(static_cast<std::size_t>(T), true));
  for (std::size_t i = 0; i < n_obj; ++i) {
    centers[i][0] = center[i];
    shapes[i].push_back(local[i]);
    const auto& o = recipe.objects[i];
    const bool added_later = std::any_of(o.changes.begin(), o.changes.end(),
                                         [](const ChangeStep& c) { return c.kind == ChangeKind::add; });
    present[i][0] = !added_later;
  }
  for (int s = 0; s + 1 < T; ++s) {
    const auto su = static_cast<std::size_t>(s);
    for (std::size_t i = 0; i < n_obj; ++i) {
      const auto step = detail::step_at(recipe.objects[i], s);
      centers[i][su + 1] = centers[i][su];
      yaws[i][su + 1] = yaws[i][su];
      shapes[i].push_back(shapes[i].back());
      present[i][su + 1] = present[i][su];
      switch (step.kind) {
        case ChangeKind::rigid:
          for (int a = 0; a < 3; ++a) centers[i][su + 1][a] += step.translation[a];
          yaws[i][su + 1] += step.yaw;
          break;
        case ChangeKind::non_rigid:
          for (auto& p : shapes[i].back())
            for (int a = 0; a < 3; ++a)
              p[a] += step.amplitude * std::sin(2.0 * std::numbers::pi * p[a] / step.wavelength);
          break;
        case ChangeKind::add: present[i][su + 1] = true; break;
        case ChangeKind::remove: present[i][su + 1] = false; break;
        case ChangeKind::swap:
        case ChangeKind::static_object: break;
      }
    }
    // Swapping members of a group rotate their poses among themselves.
    for (const auto& members : recipe.ambiguous_groups) {
      std::vector<std::size_t> swapping;
      for (auto m : members)
        if (detail::step_at(recipe.objects[m], s).kind == ChangeKind::swap) swapping.push_back(m);
      if (swapping.size() < 2) continue;
      std::vector<Vec3> c;
      std::vector<double> y;
      for (auto m : swapping) {
        c.push_back(centers[m][su]);
        y.push_back(yaws[m][su]);
      }
      for (std::size_t j = 0; j < swapping.size(); ++j) {
        centers[swapping[j]][su + 1] = c[(j + 1) % swapping.size()];
        yaws[swapping[j]][su + 1] = y[(j + 1) % swapping.size()];
      }
    }
  }

  SyntheticScene scene;
  scene.sequence.sequence_id = recipe.sequence_id;
  detail::Rng bg_rng{recipe.seed, 7};
  std::vector<Vec3> background;
  for (int b = 0; b < recipe.background_points; ++b)
    background.push_back({bg_rng.uniform(0.0, recipe.room[0]), bg_rng.uniform(0.0, recipe.room[1]), 0.0});

  for (std::size_t i = 0; i < n_obj; ++i)
    scene.annotation.instances.push_back(
        {static_cast<InstanceId>(i + 1), recipe.objects[i].class_id, {}, 1.0});

  for (int t = 0; t < T; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    StageCloud st;
    st.colors.emplace();
    st.segment_ids.emplace();
    for (std::size_t i = 0; i < n_obj; ++i) {
      if (!present[i][tu]) continue;
      auto& pts = scene.annotation.instances[i].per_stage_points[t];
      for (std::size_t k = 0; k < shapes[i][tu].size(); ++k) {
        const auto& lp = shapes[i][tu][k];
        const auto rp = detail::rotate_z(lp, yaws[i][tu]);
        pts.push_back(static_cast<PointIndex>(st.positions.size()));
        st.positions.push_back({rp[0] + centers[i][tu][0], rp[1] + centers[i][tu][1], rp[2] + centers[i][tu][2]});
        st.colors->push_back(color[i]);
        const auto& l0 = local[i][k];
        const int octant = (l0[0] >= 0 ? 1 : 0) | (l0[1] >= 0 ? 2 : 0) | (l0[2] >= 0 ? 4 : 0);
        st.segment_ids->push_back(static_cast<std::int64_t>((i + 1) * 8 + static_cast<std::size_t>(octant)));
      }
    }
    for (const auto& p : background) {
      st.positions.push_back(p);
      st.colors->push_back({0.5f, 0.5f, 0.5f});
      st.segment_ids->push_back(1000000 + static_cast<std::int64_t>(std::floor(p[0])) * 1000 +
                                static_cast<std::int64_t>(std::floor(p[1])));
    }
    scene.sequence.stages.push_back(std::move(st));
  }

  for (std::size_t g = 0; g < recipe.ambiguous_groups.size(); ++g) {
    AmbiguousGroup grp{static_cast<int>(g), {}};
    for (auto m : recipe.ambiguous_groups[g]) grp.member_instance_ids.push_back(static_cast<InstanceId>(m + 1));
    scene.annotation.ambiguous_groups.push_back(std::move(grp));
  }
  for (std::size_t i = 0; i < n_obj; ++i) {
    const auto& o = recipe.objects[i];
    auto has = [&](ChangeKind k) {
      return std::any_of(o.changes.begin(), o.changes.end(), [k](const ChangeStep& c) { return c.kind == k; });
    };
    ChangeType label = ChangeType::static_object;
    if (has(ChangeKind::add) || has(ChangeKind::remove))
      label = ChangeType::added_removed;
    else if (group_of[i] >= 0)
      label = ChangeType::ambiguous;
    else if (has(ChangeKind::non_rigid))
      label = ChangeType::non_rigid;
    else if (has(ChangeKind::rigid))
      label = ChangeType::rigid;
    scene.annotation.change_labels[static_cast<InstanceId>(i + 1)] = label;
  }
  std::erase_if(scene.annotation.instances, [](const InstanceMask& m) { return m.empty(); });
  return scene;
}

struct RandomRecipeOptions {
  int min_points = 80;
  int max_points = 300;
  int n_classes = 4;
  double p_rigid = 0.25;
  double p_non_rigid = 0.1;
  double p_add_remove = 0.05;
  int n_ambiguous_pairs = 0;
  int background_points = 300;
  std::array<double, 2> room{10.0, 10.0};
};

/// Random objects and change plans, for property tests and benchmarks.
inline SceneRecipe make_random_recipe(std::uint64_t seed, int n_objects, int n_stages,
                                      const RandomRecipeOptions& opt = {}) {
  detail::Rng rng{seed, 99};
  SceneRecipe r;
  r.seed = seed;
  r.sequence_id = "synthetic_" + std::to_string(seed);
  r.n_stages = n_stages;
  r.room = opt.room;
  r.background_points = opt.background_points;
  for (int i = 0; i < n_objects; ++i) {
    ObjectSpec o;
    o.shape = rng.uniform() < 0.5 ? Shape::box : Shape::sphere;
    o.size = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
    o.class_id = static_cast<ClassId>(rng.index(static_cast<std::uint64_t>(opt.n_classes)));
    o.points = opt.min_points + static_cast<int>(rng.index(static_cast<std::uint64_t>(opt.max_points - opt.min_points + 1)));
    for (int s = 0; s + 1 < n_stages; ++s) {
      ChangeStep c;
      const double u = rng.uniform();
      if (u < opt.p_add_remove && s == 0) {
        c.kind = rng.uniform() < 0.5 ? ChangeKind::add : ChangeKind::remove;
      } else if (u < opt.p_add_remove + opt.p_non_rigid) {
        c.kind = ChangeKind::non_rigid;
      } else if (u < opt.p_add_remove + opt.p_non_rigid + opt.p_rigid) {
        c.kind = ChangeKind::rigid;
        c.translation = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.0};
        c.yaw = rng.uniform(-0.5, 0.5);
      }
      o.changes.push_back(c);
    }
    r.objects.push_back(std::move(o));
  }
  for (int p = 0; p < opt.n_ambiguous_pairs; ++p) {
    ObjectSpec o;
    o.shape = Shape::box;
    o.size = {0.45, 0.45, 0.9};
    o.class_id = static_cast<ClassId>(rng.index(static_cast<std::uint64_t>(opt.n_classes)));
    o.points = opt.min_points;
    for (int s = 0; s + 1 < n_stages; ++s) o.changes.push_back({ChangeKind::swap});
    const auto first = r.objects.size();
    r.objects.push_back(o);
    r.objects.push_back(o);
    r.ambiguous_groups.push_back({first, first + 1});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Perturbation

enum class IdentityPolicy { consistent, swapped, merged, fragmented };

inline constexpr double kDefaultIouTolerance = 0.02;

struct PerturbationSpec {
  std::uint64_t seed = 0;
  /// Per-stage IoU each predicted component should reach against its ground truth.
  double target_iou = 1.0;
  std::map<std::pair<InstanceId, StageIndex>, double> target_overrides;
  IdentityPolicy policy = IdentityPolicy::consistent;
  /// Instances the policy applies to: pairs for swapped and merged, single
  /// ids for fragmented. Everything else is predicted consistently.
  std::vector<std::vector<InstanceId>> policy_groups;
  double base_confidence = 0.9;
  double confidence_jitter = 0.0;
  double miss_rate = 0.0;
  double class_flip_rate = 0.0;
  int n_classes = 1;
  int false_positives = 0;
  int false_positive_size = 20;
  double tolerance = kDefaultIouTolerance;
};

namespace detail {

// Reaches `target` IoU against `gt` by keeping a random subset of it or by
// adding unclaimed non-ground-truth points.
inline std::vector<PointIndex> perturb_component(const std::vector<PointIndex>& gt, double target,
                                                 std::vector<PointIndex>& free_points, Rng& rng,
                                                 double tolerance) {
  if (!(target > 0.0 && target <= 1.0))
    throw Error(ErrorCode::invalid_argument, "target IoU must lie in (0, 1]");
  const double n = static_cast<double>(gt.size());
  const auto keep = static_cast<std::size_t>(std::llround(target * n));
  const double erode_iou = static_cast<double>(keep) / n;
  const auto extra = static_cast<std::size_t>(std::llround(n / target - n));
  const double grow_iou = n / (n + static_cast<double>(extra));
  const bool erode_ok = keep >= 1 && std::abs(erode_iou - target) <= tolerance;
  const bool grow_ok = extra <= free_points.size() && std::abs(grow_iou - target) <= tolerance;
  if (!erode_ok && !grow_ok)
    throw Error(ErrorCode::unreachable_target, "target IoU " + std::to_string(target) +
                                                   " unreachable for a mask of " + std::to_string(gt.size()) +
                                                   " points");
  const bool prefer_erode = rng.uniform() < 0.5;
  if (erode_ok && (prefer_erode || !grow_ok)) {
    std::vector<PointIndex> v = gt;
    for (std::size_t i = 0; i < keep; ++i) std::swap(v[i], v[i + rng.index(v.size() - i)]);
    v.resize(keep);
    std::sort(v.begin(), v.end());
    return v;
  }
  std::vector<PointIndex> v = gt;
  for (std::size_t i = 0; i < extra; ++i) {
    const auto j = rng.index(free_points.size());
    v.push_back(free_points[j]);
    free_points[j] = free_points.back();
    free_points.pop_back();
  }
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

/// Degrades ground truth into a prediction set. Predictions never share a
/// point within a stage.
inline PredictionSet perturb(const SequencePointCloud& seq, const GroundTruthAnnotation& gt,
                             const PerturbationSpec& spec) {
  detail::Rng rng{spec.seed, 31};
  const int T = seq.stage_count();

  // Points outside every ground-truth mask, per stage.
  std::vector<std::vector<PointIndex>> free_points(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    std::vector<bool> used(seq.stages[static_cast<std::size_t>(t)].point_count(), false);
    for (const auto& m : gt.instances)
      if (const auto* pts = m.points_at(t))
        for (auto p : *pts) used[p] = true;
    for (std::size_t p = 0; p < used.size(); ++p)
      if (!used[p]) free_points[static_cast<std::size_t>(t)].push_back(static_cast<PointIndex>(p));
  }

  std::map<InstanceId, std::map<StageIndex, std::vector<PointIndex>>> comp;
  for (const auto& m : gt.instances)
    for (const auto& [t, pts] : m.per_stage_points) {
      if (pts.empty()) continue;
      auto it = spec.target_overrides.find({m.instance_id, t});
      const double target = it != spec.target_overrides.end() ? it->second : spec.target_iou;
      comp[m.instance_id][t] =
          detail::perturb_component(pts, target, free_points[static_cast<std::size_t>(t)], rng, spec.tolerance);
    }

  struct Draft {
    ClassId class_id;
    std::map<StageIndex, std::vector<PointIndex>> points;
  };
  std::vector<Draft> drafts;
  std::set<InstanceId> handled;
  auto class_of = [&](InstanceId id) {
    const auto* m = gt.find(id);
    if (m == nullptr) throw Error(ErrorCode::invalid_argument, "policy references unknown instance " + std::to_string(id));
    return m->class_id;
  };

  for (const auto& grp : spec.policy_groups) {
    if (spec.policy == IdentityPolicy::consistent) break;
    for (auto id : grp) {
      class_of(id);
      if (!handled.insert(id).second)
        throw Error(ErrorCode::invalid_argument, "instance listed twice in policy groups");
    }
    if (spec.policy == IdentityPolicy::fragmented) {
      for (auto id : grp)
        for (const auto& [t, pts] : comp[id]) drafts.push_back({class_of(id), {{t, pts}}});
      continue;
    }
    if (grp.size() != 2) throw Error(ErrorCode::invalid_argument, "swapped and merged policies take pairs");
    const auto a = grp[0], b = grp[1];
    if (spec.policy == IdentityPolicy::merged) {
      Draft d{class_of(a), comp[a]};
      for (const auto& [t, pts] : comp[b]) {
        auto& v = d.points[t];
        v.insert(v.end(), pts.begin(), pts.end());
        std::sort(v.begin(), v.end());
      }
      drafts.push_back(std::move(d));
      continue;
    }
    // swapped: identities exchange after the first stage
    Draft da{class_of(a), {}}, db{class_of(b), {}};
    for (int t = 0; t < T; ++t) {
      const auto& src_a = t == 0 ? comp[a] : comp[b];
      const auto& src_b = t == 0 ? comp[b] : comp[a];
      if (auto it = src_a.find(t); it != src_a.end()) da.points[t] = it->second;
      if (auto it = src_b.find(t); it != src_b.end()) db.points[t] = it->second;
    }
    drafts.push_back(std::move(da));
    drafts.push_back(std::move(db));
  }
  for (const auto& m : gt.instances)
    if (!handled.count(m.instance_id)) drafts.push_back({m.class_id, comp[m.instance_id]});

  PredictionSet out;
  out.sequence_id = seq.sequence_id;
  InstanceId next = 0;
  auto emit = [&](ClassId c, std::map<StageIndex, std::vector<PointIndex>> pts) {
    std::erase_if(pts, [](const auto& kv) { return kv.second.empty(); });
    if (pts.empty()) return;
    const double conf = std::clamp(
        spec.base_confidence + (spec.confidence_jitter > 0 ? rng.uniform(-spec.confidence_jitter, spec.confidence_jitter) : 0.0),
        0.0, 1.0);
    out.instances.push_back({next++, c, std::move(pts), conf});
  };
  for (auto& d : drafts) {
    if (spec.miss_rate > 0 && rng.uniform() < spec.miss_rate) continue;
    ClassId c = d.class_id;
    if (spec.class_flip_rate > 0 && spec.n_classes > 1 && rng.uniform() < spec.class_flip_rate)
      c = static_cast<ClassId>((c + 1 + static_cast<ClassId>(rng.index(static_cast<std::uint64_t>(spec.n_classes - 1)))) %
                               spec.n_classes);
    emit(c, std::move(d.points));
  }
  for (int f = 0; f < spec.false_positives && T > 0; ++f) {
    const auto t = static_cast<StageIndex>(rng.index(static_cast<std::uint64_t>(T)));
    auto& pool = free_points[static_cast<std::size_t>(t)];
    std::vector<PointIndex> pts;
    for (int k = 0; k < spec.false_positive_size && !pool.empty(); ++k) {
      const auto j = rng.index(pool.size());
      pts.push_back(pool[j]);
      pool[j] = pool.back();
      pool.pop_back();
    }
    std::sort(pts.begin(), pts.end());
    const auto c = static_cast<ClassId>(rng.index(static_cast<std::uint64_t>(std::max(spec.n_classes, 1))));
    emit(c, {{t, std::move(pts)}});
  }
  return out;
}

}  // namespace t4d
