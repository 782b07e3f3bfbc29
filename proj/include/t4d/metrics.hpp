#pragma once

// Temporal instance-segmentation metrics: t-IoU, pseudo-disambiguation of
// ambiguous ground-truth groups, confidence-ordered detection assignment and
// temporal AP / precision / recall, including recall per change type.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "t4d/core.hpp"
#include "t4d/detail/random.hpp"

namespace t4d {

struct IoUProfile {
  /// Stages where the prediction or the ground truth is present.
  std::map<StageIndex, double> per_stage_iou;
  /// IoU of the prediction and ground truth taken as unions over all stages.
  double overall_iou = 0.0;
  /// Minimum of per_stage_iou, 0 when no stage contributes.
  double t_iou = 0.0;
};

namespace detail {

inline std::size_t intersection_size(const std::vector<PointIndex>& a,
                                     const std::vector<PointIndex>& b) {
  std::size_t n = 0;
  auto i = a.begin(), j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

struct StageOverlap {
  StageIndex stage;
  std::size_t pred_size;
  std::size_t gt_size;
  std::size_t intersection;
};

inline IoUProfile profile_from_overlaps(std::span<const StageOverlap> stages) {
  IoUProfile p;
  std::size_t inter = 0, uni = 0;
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& s : stages) {
    if (s.pred_size == 0 && s.gt_size == 0) continue;
    const std::size_t u = s.pred_size + s.gt_size - s.intersection;
    const double iou = static_cast<double>(s.intersection) / static_cast<double>(u);
    p.per_stage_iou[s.stage] = iou;
    lowest = std::min(lowest, iou);
    inter += s.intersection;
    uni += u;
  }
  p.overall_iou = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
  p.t_iou = p.per_stage_iou.empty() ? 0.0 : lowest;
  return p;
}

inline std::vector<StageIndex> union_of_stages(const InstanceMask& a, const InstanceMask& b) {
  std::set<StageIndex> s;
  for (const auto& [t, pts] : a.per_stage_points)
    if (!pts.empty()) s.insert(t);
  for (const auto& [t, pts] : b.per_stage_points)
    if (!pts.empty()) s.insert(t);
  return {s.begin(), s.end()};
}

inline double stage_iou(const InstanceMask& pred, const InstanceMask& gt, StageIndex t) {
  const auto* p = pred.points_at(t);
  const auto* g = gt.points_at(t);
  if (p == nullptr || g == nullptr) return 0.0;
  const auto inter = intersection_size(*p, *g);
  return static_cast<double>(inter) / static_cast<double>(p->size() + g->size() - inter);
}

inline bool overlaps(const InstanceMask& a, const InstanceMask& b) {
  for (const auto& [t, pts] : a.per_stage_points) {
    const auto* q = b.points_at(t);
    if (q != nullptr && !pts.empty() && intersection_size(pts, *q) > 0) return true;
  }
  return false;
}

}  // namespace detail

/// Per-stage and temporal IoU of a prediction against a ground-truth
/// instance. Stages where only one side is present contribute IoU 0.
inline IoUProfile t_iou(const InstanceMask& pred, const InstanceMask& gt) {
  std::vector<detail::StageOverlap> stages;
  for (auto t : detail::union_of_stages(pred, gt)) {
    const auto* p = pred.points_at(t);
    const auto* g = gt.points_at(t);
    stages.push_back({t, p ? p->size() : 0, g ? g->size() : 0,
                      (p && g) ? detail::intersection_size(*p, *g) : 0});
  }
  return detail::profile_from_overlaps(stages);
}

/// For each ground truth of class c (by index into gts), the predictions of
/// class c that share at least one point with it at some stage.
inline std::map<std::size_t, std::vector<std::size_t>> overlap_candidates(
    std::span<const InstanceMask> preds, std::span<const InstanceMask> gts, ClassId c) {
  std::map<std::size_t, std::vector<std::size_t>> out;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].class_id != c) continue;
    auto& set = out[g];
    for (std::size_t p = 0; p < preds.size(); ++p)
      if (preds[p].class_id == c && detail::overlaps(preds[p], gts[g])) set.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ambiguous groups

inline constexpr int kUnassigned = -1;

struct DisambiguationResult {
  /// assignment[i][t]: position (in the group's member list) of the member
  /// whose stage-t component belongs to trajectory i, or kUnassigned.
  std::vector<std::vector<int>> assignment;
  /// Cells of `assignment` set by the random fill rather than a prediction.
  std::vector<std::vector<bool>> randomly_filled;
  /// Pseudo ground-truth instances, one per trajectory. The id of trajectory
  /// i is the i-th member id; a trajectory may be empty when the group has
  /// fewer components than trajectories at every stage it could take.
  std::vector<InstanceMask> trajectories;
  /// Candidate predictions (indices) overlapping each trajectory.
  std::vector<std::vector<std::size_t>> matched_predictions;
  /// The candidate selected in round i, if it claimed any component.
  std::vector<std::optional<std::size_t>> guiding_prediction;
};

/// Prediction-guided partition of an ambiguous group into per-stage
/// trajectories.
///
/// W[p][k][t] = IoU(pred_p(t), member_k(t)) * confidence(pred_p). Each of
/// n_amb rounds selects the prediction with the largest sum over stages of
/// max_k W, then at every stage gives trajectory i the member k* = argmax_k W
/// when that weight is positive, zeroing W for (k*, t) over all predictions
/// and for (p*, t) over all members. Cells still unassigned afterwards receive
/// the leftover members of their stage at random. Ties go to the lowest
/// prediction index, then the lowest member position.
inline DisambiguationResult disambiguate(const AmbiguousGroup& group,
                                         std::span<const InstanceMask> gts,
                                         std::span<const InstanceMask> candidates,
                                         std::uint64_t rng_seed, int n_stages) {
  const std::size_t n = group.n_amb();
  const std::size_t T = static_cast<std::size_t>(std::max(n_stages, 0));
  std::vector<const InstanceMask*> members;
  for (auto id : group.member_instance_ids) {
    const InstanceMask* m = nullptr;
    for (const auto& g : gts)
      if (g.instance_id == id) m = &g;
    if (m == nullptr)
      throw Error(ErrorCode::invalid_argument,
                  "ambiguous group member " + std::to_string(id) + " not found");
    members.push_back(m);
  }

  const std::size_t P = candidates.size();
  // W[(p * n + k) * T + t]
  std::vector<double> W(P * n * T, 0.0);
  auto w = [&](std::size_t p, std::size_t k, std::size_t t) -> double& {
    return W[(p * n + k) * T + t];
  };
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t t = 0; t < T; ++t)
        w(p, k, t) = detail::stage_iou(candidates[p], *members[k], static_cast<StageIndex>(t)) *
                     candidates[p].confidence;

  DisambiguationResult r;
  r.assignment.assign(n, std::vector<int>(T, kUnassigned));
  r.randomly_filled.assign(n, std::vector<bool>(T, false));
  r.guiding_prediction.assign(n, std::nullopt);

  for (std::size_t i = 0; i < n && P > 0; ++i) {
    std::size_t best_p = 0;
    double best_score = -1.0;
    for (std::size_t p = 0; p < P; ++p) {
      double score = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        double m = 0.0;
        for (std::size_t k = 0; k < n; ++k) m = std::max(m, w(p, k, t));
        score += m;
      }
      if (score > best_score) {
        best_score = score;
        best_p = p;
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t best_k = 0;
      for (std::size_t k = 1; k < n; ++k)
        if (w(best_p, k, t) > w(best_p, best_k, t)) best_k = k;
      if (w(best_p, best_k, t) > 0.0) {
        r.assignment[i][t] = static_cast<int>(best_k);
        r.guiding_prediction[i] = best_p;
        for (std::size_t p = 0; p < P; ++p) w(p, best_k, t) = 0.0;
        for (std::size_t k = 0; k < n; ++k) w(best_p, k, t) = 0.0;
      }
    }
  }

  detail::Rng rng{rng_seed, static_cast<std::uint64_t>(group.group_id)};
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<bool> taken(n, false);
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < n; ++i) {
      if (r.assignment[i][t] == kUnassigned)
        open.push_back(i);
      else
        taken[static_cast<std::size_t>(r.assignment[i][t])] = true;
    }
    std::vector<std::size_t> available;
    for (std::size_t k = 0; k < n; ++k)
      if (!taken[k] && members[k]->present_at(static_cast<StageIndex>(t))) available.push_back(k);
    rng.shuffle(open);
    for (std::size_t j = 0; j < available.size(); ++j) {
      r.assignment[open[j]][t] = static_cast<int>(available[j]);
      r.randomly_filled[open[j]][t] = true;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    InstanceMask traj;
    traj.instance_id = group.member_instance_ids[i];
    traj.class_id = members.front()->class_id;
    traj.confidence = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      const int k = r.assignment[i][t];
      if (k == kUnassigned) continue;
      if (const auto* pts = members[static_cast<std::size_t>(k)]->points_at(static_cast<StageIndex>(t)))
        traj.per_stage_points[static_cast<StageIndex>(t)] = *pts;
    }
    std::vector<std::size_t> matched;
    for (std::size_t p = 0; p < P; ++p)
      if (detail::overlaps(candidates[p], traj)) matched.push_back(p);
    r.matched_predictions.push_back(std::move(matched));
    r.trajectories.push_back(std::move(traj));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Detection assignment and AP

struct Candidate {
  std::size_t gt;
  double t_iou;
};

struct DetectionAssignment {
  /// Prediction indices in processing order (descending confidence).
  std::vector<std::size_t> order;
  /// Per prediction: matched ground-truth index, or -1 for a false positive.
  std::vector<std::ptrdiff_t> matched_gt;
  /// Per ground truth: matching prediction index, or -1 for a false negative.
  std::vector<std::ptrdiff_t> matched_pred;
  std::size_t tp = 0, fp = 0, fn = 0;

  std::vector<bool> tp_in_order() const {
    std::vector<bool> out;
    out.reserve(order.size());
    for (auto p : order) out.push_back(matched_gt[p] >= 0);
    return out;
  }
};

inline std::vector<std::size_t> confidence_order(std::span<const double> confidences) {
  std::vector<std::size_t> order(confidences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidences[a] > confidences[b];
  });
  return order;
}

/// Greedy matching in descending confidence. A prediction claims the unclaimed
/// candidate with the highest t-IoU above tau (lowest gt index on ties).
inline DetectionAssignment assign_from_candidates(
    const std::vector<std::vector<Candidate>>& candidates, std::span<const double> confidences,
    std::size_t n_gt, double tau) {
  DetectionAssignment a;
  a.order = confidence_order(confidences);
  a.matched_gt.assign(confidences.size(), -1);
  a.matched_pred.assign(n_gt, -1);
  for (auto p : a.order) {
    const Candidate* best = nullptr;
    for (const auto& c : candidates[p]) {
      if (!(c.t_iou > tau) || a.matched_pred[c.gt] >= 0) continue;
      if (best == nullptr || c.t_iou > best->t_iou || (c.t_iou == best->t_iou && c.gt < best->gt))
        best = &c;
    }
    if (best != nullptr) {
      a.matched_gt[p] = static_cast<std::ptrdiff_t>(best->gt);
      a.matched_pred[best->gt] = static_cast<std::ptrdiff_t>(p);
      ++a.tp;
    } else {
      ++a.fp;
    }
  }
  a.fn = n_gt - a.tp;
  return a;
}

/// Assignment for one class whose ambiguous groups were already resolved.
inline DetectionAssignment assign_detections(std::span<const InstanceMask> preds,
                                             std::span<const InstanceMask> gts, double tau) {
  std::vector<std::vector<Candidate>> cand(preds.size());
  std::vector<double> conf(preds.size());
  for (std::size_t p = 0; p < preds.size(); ++p) {
    conf[p] = preds[p].confidence;
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (detail::overlaps(preds[p], gts[g])) cand[p].push_back({g, t_iou(preds[p], gts[g]).t_iou});
  }
  return assign_from_candidates(cand, conf, gts.size(), tau);
}

struct PrPoint {
  double recall;
  double precision;
};

inline std::vector<PrPoint> pr_curve(const std::vector<bool>& tp_in_order, std::size_t n_gt) {
  std::vector<PrPoint> out;
  out.reserve(tp_in_order.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < tp_in_order.size(); ++i) {
    tp += tp_in_order[i] ? 1 : 0;
    out.push_back({n_gt ? static_cast<double>(tp) / static_cast<double>(n_gt) : 0.0,
                   static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  return out;
}

/// Area under the monotone upper envelope of the precision-recall curve.
/// Empty when there is neither ground truth nor prediction (the class is
/// excluded from means); 0 when there are predictions but no ground truth.
inline std::optional<double> average_precision(const std::vector<bool>& tp_in_order,
                                               std::size_t n_gt) {
  if (n_gt == 0) return tp_in_order.empty() ? std::nullopt : std::optional<double>(0.0);
  const auto curve = pr_curve(tp_in_order, n_gt);
  std::vector<double> envelope(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    envelope[i] = running;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return ap;
}

// ---------------------------------------------------------------------------
// Full evaluation

/// 0.50, 0.55, ..., 0.95.
inline std::vector<double> sweep_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50.0 + 5.0 * i) / 100.0);
  return t;
}

inline std::vector<double> default_thresholds() {
  auto t = sweep_thresholds();
  t.insert(t.begin(), 0.25);
  return t;
}

struct EvaluationOptions {
  std::vector<double> thresholds = default_thresholds();
  std::uint64_t seed = 0;
  int threads = 1;
};

struct ThresholdResult {
  double threshold = 0.0;
  std::optional<double> ap;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::vector<PrPoint> pr_curve;
};

struct ClassReport {
  ClassId class_id = 0;
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::vector<ThresholdResult> per_threshold;  // parallel to report thresholds
  std::optional<double> ap_sweep, ap50, ap25;
};

struct EvaluationReport {
  std::string sequence_id;
  std::vector<double> thresholds;
  std::vector<ClassReport> classes;  // ascending class id
  std::optional<double> t_map, t_map50, t_map25;
  std::optional<double> t_mprec, t_mrec;
  /// Recall per change type over the headline thresholds, pooled over classes.
  std::map<ChangeType, double> per_change_recall;

  const ClassReport* find_class(ClassId c) const {
    for (const auto& r : classes)
      if (r.class_id == c) return &r;
    return nullptr;
  }
};

namespace detail {

inline bool same_threshold(double a, double b) { return std::abs(a - b) < 1e-9; }

inline std::optional<std::size_t> threshold_slot(const std::vector<double>& ts, double v) {
  for (std::size_t i = 0; i < ts.size(); ++i)
    if (same_threshold(ts[i], v)) return i;
  return std::nullopt;
}

// Thresholds the headline numbers average over: the full sweep when every
// sweep value was requested, otherwise all requested thresholds.
inline std::vector<std::size_t> headline_slots(const std::vector<double>& ts) {
  std::vector<std::size_t> slots;
  for (double s : sweep_thresholds()) {
    auto i = threshold_slot(ts, s);
    if (!i) {
      slots.resize(ts.size());
      std::iota(slots.begin(), slots.end(), std::size_t{0});
      return slots;
    }
    slots.push_back(*i);
  }
  return slots;
}

struct ClassWork {
  ClassId class_id;
  std::vector<InstanceMask> gts;
  std::vector<std::optional<ChangeType>> gt_labels;
  std::vector<const InstanceMask*> preds;
};

struct ClassOutcome {
  ClassReport report;
  // [threshold][change type]
  std::vector<std::array<std::size_t, 5>> change_tp, change_fn;
};

// Per-point owner lookup reused across classes by one worker.
struct OwnerScratch {
  std::vector<std::vector<std::int32_t>> owner;  // [stage][point] -> gt index or -1

  explicit OwnerScratch(const SequencePointCloud& seq) {
    for (const auto& s : seq.stages) owner.emplace_back(s.point_count(), -1);
  }
};

inline void check_mask_bounds(const SequencePointCloud& seq, const InstanceMask& m) {
  for (const auto& [t, pts] : m.per_stage_points) {
    if (t < 0 || t >= seq.stage_count())
      throw Error(ErrorCode::out_of_range, "stage out of range in instance " + std::to_string(m.instance_id));
    if (!pts.empty() && pts.back() >= seq.stages[static_cast<std::size_t>(t)].point_count())
      throw Error(ErrorCode::out_of_range, "point out of range in instance " + std::to_string(m.instance_id));
  }
}

inline ClassOutcome evaluate_class(const ClassWork& work, const std::vector<double>& thresholds,
                                   OwnerScratch& scratch) {
  const auto& gts = work.gts;
  const auto& preds = work.preds;

  for (std::size_t g = 0; g < gts.size(); ++g)
    for (const auto& [t, pts] : gts[g].per_stage_points)
      for (auto p : pts) scratch.owner[static_cast<std::size_t>(t)][p] = static_cast<std::int32_t>(g);

  std::vector<std::vector<Candidate>> cand(preds.size());
  std::vector<double> conf(preds.size());
  std::vector<StageOverlap> stages;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    conf[p] = preds[p]->confidence;
    std::map<std::pair<std::int32_t, StageIndex>, std::size_t> inter;
    for (const auto& [t, pts] : preds[p]->per_stage_points) {
      const auto& own = scratch.owner[static_cast<std::size_t>(t)];
      for (auto q : pts)
        if (own[q] >= 0) ++inter[{own[q], t}];
    }
    std::int32_t current = -1;
    for (auto it = inter.begin(); it != inter.end(); ++it) {
      if (it->first.first == current) continue;
      current = it->first.first;
      const auto& gt = gts[static_cast<std::size_t>(current)];
      stages.clear();
      for (auto t : union_of_stages(*preds[p], gt)) {
        const auto* pp = preds[p]->points_at(t);
        const auto* gg = gt.points_at(t);
        auto f = inter.find({current, t});
        stages.push_back({t, pp ? pp->size() : 0, gg ? gg->size() : 0,
                          f == inter.end() ? 0 : f->second});
      }
      cand[p].push_back({static_cast<std::size_t>(current), profile_from_overlaps(stages).t_iou});
    }
  }

  for (const auto& g : gts)
    for (const auto& [t, pts] : g.per_stage_points)
      for (auto q : pts) scratch.owner[static_cast<std::size_t>(t)][q] = -1;

  ClassOutcome out;
  auto& rep = out.report;
  rep.class_id = work.class_id;
  rep.n_gt = gts.size();
  rep.n_pred = preds.size();
  out.change_tp.assign(thresholds.size(), {});
  out.change_fn.assign(thresholds.size(), {});
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    const auto a = assign_from_candidates(cand, conf, gts.size(), thresholds[ti]);
    const auto labels = a.tp_in_order();
    ThresholdResult r;
    r.threshold = thresholds[ti];
    r.ap = average_precision(labels, gts.size());
    r.tp = a.tp;
    r.fp = a.fp;
    r.fn = a.fn;
    if (a.tp + a.fp > 0) r.precision = static_cast<double>(a.tp) / static_cast<double>(a.tp + a.fp);
    if (!gts.empty()) r.recall = static_cast<double>(a.tp) / static_cast<double>(gts.size());
    r.pr_curve = pr_curve(labels, gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!work.gt_labels[g]) continue;
      const auto c = static_cast<std::size_t>(*work.gt_labels[g]);
      if (a.matched_pred[g] >= 0)
        ++out.change_tp[ti][c];
      else
        ++out.change_fn[ti][c];
    }
    rep.per_threshold.push_back(std::move(r));
  }
  return out;
}

inline std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace detail

/// Removes contested points: within a stage, a point claimed by several
/// predictions stays with the most confident one (lowest index on ties).
/// Predictions left without points are dropped.
inline std::vector<InstanceMask> resolve_overlaps(std::span<const InstanceMask> preds) {
  std::vector<double> conf;
  for (const auto& p : preds) conf.push_back(p.confidence);
  const auto order = confidence_order(conf);
  std::map<StageIndex, std::vector<bool>> claimed;
  std::vector<InstanceMask> kept(preds.begin(), preds.end());
  for (auto i : order) {
    for (auto& [t, pts] : kept[i].per_stage_points) {
      auto& c = claimed[t];
      if (!pts.empty() && c.size() <= pts.back()) c.resize(pts.back() + 1, false);
      std::vector<PointIndex> mine;
      mine.reserve(pts.size());
      for (auto q : pts) {
        if (c[q]) continue;
        c[q] = true;
        mine.push_back(q);
      }
      pts = std::move(mine);
    }
    std::erase_if(kept[i].per_stage_points, [](const auto& kv) { return kv.second.empty(); });
  }
  std::vector<InstanceMask> out;
  for (auto& m : kept)
    if (!m.empty()) out.push_back(std::move(m));
  return out;
}

/// Temporal AP/precision/recall of predictions against ground truth.
inline EvaluationReport evaluate(const SequencePointCloud& seq, const GroundTruthAnnotation& gt,
                                 const PredictionSet& predictions,
                                 const EvaluationOptions& opts = {}) {
  if (predictions.sequence_id != seq.sequence_id)
    throw Error(ErrorCode::sequence_mismatch, "prediction sequence id '" + predictions.sequence_id +
                                                  "' does not match '" + seq.sequence_id + "'");
  if (opts.thresholds.empty()) throw Error(ErrorCode::invalid_argument, "no IoU thresholds given");
  for (double t : opts.thresholds)
    if (!(t >= 0.0 && t < 1.0)) throw Error(ErrorCode::invalid_argument, "IoU threshold outside [0,1)");

  for (const auto& m : gt.instances) detail::check_mask_bounds(seq, m);
  for (const auto& m : predictions.instances) detail::check_mask_bounds(seq, m);
  const auto preds = resolve_overlaps(predictions.instances);

  std::set<ClassId> class_ids;
  for (const auto& m : gt.instances) class_ids.insert(m.class_id);
  for (const auto& m : predictions.instances) class_ids.insert(m.class_id);

  std::set<InstanceId> grouped;
  for (const auto& g : gt.ambiguous_groups)
    grouped.insert(g.member_instance_ids.begin(), g.member_instance_ids.end());

  auto label_of = [&](InstanceId id) -> std::optional<ChangeType> {
    auto it = gt.change_labels.find(id);
    if (it == gt.change_labels.end()) return std::nullopt;
    return it->second;
  };

  std::vector<detail::ClassWork> work;
  for (auto c : class_ids) {
    detail::ClassWork w{c, {}, {}, {}};
    for (const auto& p : preds)
      if (p.class_id == c) w.preds.push_back(&p);
    for (const auto& m : gt.instances) {
      if (m.class_id != c || grouped.count(m.instance_id)) continue;
      w.gts.push_back(m);
      w.gt_labels.push_back(label_of(m.instance_id));
    }
    work.push_back(std::move(w));
  }

  for (const auto& g : gt.ambiguous_groups) {
    if (g.member_instance_ids.empty()) continue;
    const auto* first = gt.find(g.member_instance_ids.front());
    if (first == nullptr)
      throw Error(ErrorCode::invalid_argument, "ambiguous group references unknown instance");
    auto& w = *std::find_if(work.begin(), work.end(),
                            [&](const detail::ClassWork& x) { return x.class_id == first->class_id; });
    std::vector<InstanceMask> members;
    for (auto id : g.member_instance_ids) {
      const auto* m = gt.find(id);
      if (m == nullptr)
        throw Error(ErrorCode::invalid_argument, "ambiguous group references unknown instance");
      members.push_back(*m);
    }
    std::vector<InstanceMask> cands;
    for (const auto* p : w.preds)
      if (std::any_of(members.begin(), members.end(),
                      [&](const InstanceMask& m) { return detail::overlaps(*p, m); }))
        cands.push_back(*p);
    auto res = disambiguate(g, members, cands, opts.seed, seq.stage_count());
    for (std::size_t i = 0; i < res.trajectories.size(); ++i) {
      if (res.trajectories[i].empty()) continue;
      w.gts.push_back(std::move(res.trajectories[i]));
      w.gt_labels.push_back(label_of(g.member_instance_ids[i]));
    }
  }

  std::vector<detail::ClassOutcome> outcomes(work.size());
  const auto n_threads = static_cast<std::size_t>(std::clamp<int>(opts.threads, 1, 64));
  if (n_threads == 1 || work.size() < 2) {
    detail::OwnerScratch scratch(seq);
    for (std::size_t i = 0; i < work.size(); ++i)
      outcomes[i] = detail::evaluate_class(work[i], opts.thresholds, scratch);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    for (std::size_t w = 0; w < std::min(n_threads, work.size()); ++w) {
      pool.emplace_back([&, w] {
        try {
          detail::OwnerScratch scratch(seq);
          for (std::size_t i = next++; i < work.size(); i = next++)
            outcomes[i] = detail::evaluate_class(work[i], opts.thresholds, scratch);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  EvaluationReport rep;
  rep.sequence_id = seq.sequence_id;
  rep.thresholds = opts.thresholds;
  const auto headline = detail::headline_slots(opts.thresholds);
  const auto slot50 = detail::threshold_slot(opts.thresholds, 0.5);
  const auto slot25 = detail::threshold_slot(opts.thresholds, 0.25);
  const auto sweep = sweep_thresholds();
  const bool has_sweep = std::all_of(sweep.begin(), sweep.end(), [&](double s) {
    return detail::threshold_slot(opts.thresholds, s).has_value();
  });

  std::vector<double> aps, ap50s, ap25s, precs, recs;
  std::vector<std::array<std::size_t, 5>> change_tp(opts.thresholds.size()), change_fn(opts.thresholds.size());
  for (auto& o : outcomes) {
    auto& c = o.report;
    if (has_sweep) {
      std::vector<double> v;
      for (auto s : headline)
        if (c.per_threshold[s].ap) v.push_back(*c.per_threshold[s].ap);
      if (v.size() == headline.size()) c.ap_sweep = detail::mean_of(v);
    }
    if (slot50) c.ap50 = c.per_threshold[*slot50].ap;
    if (slot25) c.ap25 = c.per_threshold[*slot25].ap;
    if (c.ap_sweep) aps.push_back(*c.ap_sweep);
    if (c.ap50) ap50s.push_back(*c.ap50);
    if (c.ap25) ap25s.push_back(*c.ap25);

    std::vector<double> pv, rv;
    for (auto s : headline) {
      if (c.per_threshold[s].precision) pv.push_back(*c.per_threshold[s].precision);
      if (c.per_threshold[s].recall) rv.push_back(*c.per_threshold[s].recall);
    }
    if (auto m = detail::mean_of(pv)) precs.push_back(*m);
    if (auto m = detail::mean_of(rv)) recs.push_back(*m);

    for (std::size_t ti = 0; ti < opts.thresholds.size(); ++ti)
      for (std::size_t k = 0; k < 5; ++k) {
        change_tp[ti][k] += o.change_tp[ti][k];
        change_fn[ti][k] += o.change_fn[ti][k];
      }
    rep.classes.push_back(std::move(c));
  }
  rep.t_map = detail::mean_of(aps);
  rep.t_map50 = detail::mean_of(ap50s);
  rep.t_map25 = detail::mean_of(ap25s);
  rep.t_mprec = detail::mean_of(precs);
  rep.t_mrec = detail::mean_of(recs);

  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> r;
    for (auto s : headline) {
      const auto total = change_tp[s][k] + change_fn[s][k];
      if (total > 0) r.push_back(static_cast<double>(change_tp[s][k]) / static_cast<double>(total));
    }
    if (auto m = detail::mean_of(r)) rep.per_change_recall[static_cast<ChangeType>(k)] = *m;
  }
  return rep;
}

}  // namespace t4d
