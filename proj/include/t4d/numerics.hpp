#pragma once

// Forward-value computations of the training-side math: the supervised
// contrastive loss with log-odds similarities, the bipartite matching cost,
// spatio-temporal mask pooling, mask binarization and 4D Fourier features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <vector>

#include "t4d/assignment.hpp"
#include "t4d/core.hpp"
#include "t4d/detail/random.hpp"
#include "t4d/geometry.hpp"
#include "t4d/matrix.hpp"

namespace t4d {

inline constexpr double kCosineClamp = 1e-6;

/// Binary same-instance relation over S pooled superpoints. The diagonal is
/// never a positive.
class RelationMatrix {
 public:
  RelationMatrix() = default;

  explicit RelationMatrix(std::vector<std::vector<bool>> entries) : entries_(std::move(entries)) {
    const auto s = entries_.size();
    for (std::size_t i = 0; i < s; ++i) {
      if (entries_[i].size() != s) throw Error(ErrorCode::dimension_mismatch, "relation matrix must be square");
      entries_[i][i] = false;
    }
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (entries_[i][j] != entries_[j][i])
          throw Error(ErrorCode::invalid_argument, "relation matrix must be symmetric");
  }

  static RelationMatrix from_labels(std::span<const InstanceId> labels) {
    std::vector<std::vector<bool>> e(labels.size(), std::vector<bool>(labels.size(), false));
    for (std::size_t i = 0; i < labels.size(); ++i)
      for (std::size_t j = 0; j < labels.size(); ++j) e[i][j] = i != j && labels[i] == labels[j];
    return RelationMatrix(std::move(e));
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool positive(std::size_t i, std::size_t j) const { return entries_[i][j]; }

  bool has_positive(std::size_t i) const {
    return std::find(entries_[i].begin(), entries_[i].end(), true) != entries_[i].end();
  }

 private:
  std::vector<std::vector<bool>> entries_;
};

/// L_ij = 2 atanh(cos(f_i, f_j)) with the cosine clamped to [-1+eps, 1-eps].
inline Matrix log_odds_similarity(const Matrix& features, double eps = kCosineClamp) {
  const auto s = features.rows();
  std::vector<double> norm(s);
  for (std::size_t i = 0; i < s; ++i) {
    norm[i] = std::sqrt(dot(features.row(i), features.row(i)));
    if (!(norm[i] > 0.0)) throw Error(ErrorCode::invalid_argument, "zero-norm feature vector");
  }
  Matrix L(s, s);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      const double c = std::clamp(dot(features.row(i), features.row(j)) / (norm[i] * norm[j]),
                                  -1.0 + eps, 1.0 - eps);
      L(i, j) = 2.0 * std::atanh(c);
    }
  return L;
}

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

/// Multi-positive InfoNCE with the positive sum inside the log:
///   -1/|S+| sum_{i in S+} log( sum_{j in P(i)} exp L_ij / sum_{k != i} exp L_ik ).
/// Anchors without positives are skipped; 0 when no anchor has a positive.
inline double contrastive_loss(const Matrix& features, const RelationMatrix& relation,
                               double eps = kCosineClamp) {
  if (relation.size() != features.rows())
    throw Error(ErrorCode::dimension_mismatch, "relation size differs from feature count");
  const auto L = log_odds_similarity(features, eps);
  const auto s = features.rows();
  double total = 0.0;
  std::size_t anchors = 0;
  std::vector<double> pos, all;
  for (std::size_t i = 0; i < s; ++i) {
    if (!relation.has_positive(i)) continue;
    pos.clear();
    all.clear();
    for (std::size_t k = 0; k < s; ++k) {
      if (k == i) continue;
      all.push_back(L(i, k));
      if (relation.positive(i, k)) pos.push_back(L(i, k));
    }
    total -= detail::log_sum_exp(pos) - detail::log_sum_exp(all);
    ++anchors;
  }
  return anchors ? total / static_cast<double>(anchors) : 0.0;
}

// ---------------------------------------------------------------------------
// Matching cost

struct AssignmentCostConfig {
  double lambda_dice = 2.0;
  double lambda_bce = 5.0;
  double lambda_cls = 2.0;
  double lambda_no_object = 0.2;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Matrix sigmoid(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r)
    for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) = sigmoid(logits(r, c));
  return out;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double lse = detail::log_sum_exp(logits.row(r));
    for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) = std::exp(logits(r, c) - lse);
  }
  return out;
}

namespace detail {

inline constexpr double kProbFloor = 1e-12;

inline double neg_log(double p) { return -std::log(std::max(p, kProbFloor)); }

}  // namespace detail

/// 1 - 2 sum(p g) / (sum p + sum g); 0 when both masks are empty.
inline double dice_loss(std::span<const double> prob, std::span<const double> target) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    num += prob[i] * target[i];
    den += prob[i] + target[i];
  }
  return den > 0.0 ? 1.0 - 2.0 * num / den : 0.0;
}

/// Mean binary cross-entropy of probabilities against a 0/1 target.
inline double bce_loss(std::span<const double> prob, std::span<const double> target) {
  if (prob.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i)
    s += target[i] > 0.5 ? detail::neg_log(prob[i]) : detail::neg_log(1.0 - prob[i]);
  return s / static_cast<double>(prob.size());
}

struct MatchingCost {
  Matrix cost;  // predictions x ground truths
  Matching matching;
  /// Summed cost of matched pairs.
  double matched_cost = 0.0;
  /// lambda_no_object * sum over unmatched predictions of -log p(no-object).
  double no_object_loss = 0.0;
};

/// Pairwise cost lambda_dice*Dice + lambda_bce*BCE + lambda_cls*CE between
/// predicted masks (probabilities, K x N) with class probabilities
/// (K x (C+1), last column = no-object) and ground-truth 0/1 masks (G x N).
inline MatchingCost assignment_cost(const Matrix& pred_mask_probs, const Matrix& pred_class_probs,
                                    const Matrix& gt_masks, std::span<const int> gt_classes,
                                    const AssignmentCostConfig& cfg = {}) {
  const auto K = pred_mask_probs.rows();
  const auto G = gt_masks.rows();
  if (pred_class_probs.rows() != K)
    throw Error(ErrorCode::dimension_mismatch, "one class distribution per prediction required");
  if (G > 0 && gt_masks.cols() != pred_mask_probs.cols())
    throw Error(ErrorCode::dimension_mismatch, "predicted and ground-truth masks cover different points");
  if (gt_classes.size() != G)
    throw Error(ErrorCode::dimension_mismatch, "one class per ground-truth mask required");
  if (pred_class_probs.cols() < 2)
    throw Error(ErrorCode::dimension_mismatch, "class distribution needs at least one class plus no-object");
  const auto no_object = pred_class_probs.cols() - 1;
  for (int c : gt_classes)
    if (c < 0 || static_cast<std::size_t>(c) >= no_object)
      throw Error(ErrorCode::dimension_mismatch, "ground-truth class outside the class distribution");

  MatchingCost out;
  out.cost = Matrix(K, G);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t g = 0; g < G; ++g) {
      const auto p = pred_mask_probs.row(k);
      const auto t = gt_masks.row(g);
      out.cost(k, g) = cfg.lambda_dice * dice_loss(p, t) + cfg.lambda_bce * bce_loss(p, t) +
                       cfg.lambda_cls * detail::neg_log(pred_class_probs(k, static_cast<std::size_t>(gt_classes[g])));
    }
  out.matching = solve_assignment(out.cost);
  out.matched_cost = out.matching.total;
  for (std::size_t k = 0; k < K; ++k)
    if (out.matching.row_to_col[k] < 0)
      out.no_object_loss += cfg.lambda_no_object * detail::neg_log(pred_class_probs(k, no_object));
  return out;
}

// ---------------------------------------------------------------------------
// Spatio-temporal mask pooling

struct MaskLevel {
  std::vector<VoxelKey> keys;
  std::vector<std::uint8_t> mask;
};

/// Boolean voxel masks at every hierarchy level, stages kept apart.
struct MaskHierarchyStack {
  std::vector<MaskLevel> levels;
};

/// Pools a finest-level voxel mask up a grid pyramid (a coarse voxel is set
/// when any of its children is).
inline MaskHierarchyStack build_mask_stack(const std::vector<VoxelGrid4D>& pyramid,
                                           std::vector<std::uint8_t> finest_mask) {
  if (pyramid.empty() || finest_mask.size() != pyramid.front().size())
    throw Error(ErrorCode::dimension_mismatch, "mask does not match finest grid");
  MaskHierarchyStack s;
  s.levels.push_back({pyramid.front().keys, std::move(finest_mask)});
  for (std::size_t r = 1; r < pyramid.size(); ++r) {
    const auto& g = pyramid[r];
    if (g.parent_of_child.size() != s.levels.back().keys.size())
      throw Error(ErrorCode::dimension_mismatch, "pyramid levels are not consecutive");
    std::vector<std::uint8_t> m(g.size(), 0);
    const auto& child = s.levels.back().mask;
    for (std::size_t c = 0; c < child.size(); ++c)
      if (child[c]) m[g.parent_of_child[c]] = 1;
    s.levels.push_back({g.keys, std::move(m)});
  }
  return s;
}

/// OR of the mask over all stages' voxels that share (i, j, k) at the level,
/// written back to each of those voxels.
inline std::vector<std::uint8_t> st_pool_masks(const MaskHierarchyStack& stack, std::size_t level) {
  if (level >= stack.levels.size()) throw Error(ErrorCode::out_of_range, "mask level out of range");
  const auto& L = stack.levels[level];
  if (L.keys.size() != L.mask.size())
    throw Error(ErrorCode::dimension_mismatch, "mask level misaligned with its voxel keys");
  std::map<std::array<std::int32_t, 3>, std::uint8_t> pooled;
  for (std::size_t v = 0; v < L.keys.size(); ++v) {
    auto& p = pooled[{L.keys[v][0], L.keys[v][1], L.keys[v][2]}];
    p = static_cast<std::uint8_t>(p | (L.mask[v] ? 1 : 0));
  }
  std::vector<std::uint8_t> out(L.keys.size());
  for (std::size_t v = 0; v < L.keys.size(); ++v)
    out[v] = pooled[{L.keys[v][0], L.keys[v][1], L.keys[v][2]}];
  return out;
}

/// B[m][k] = sigmoid(<F[m], X[k]>) > 0.5, i.e. the dot product is positive.
inline std::vector<std::vector<bool>> binarize_masks(const Matrix& superpoint_features,
                                                     const Matrix& query_embeddings) {
  if (superpoint_features.cols() != query_embeddings.cols())
    throw Error(ErrorCode::dimension_mismatch, "feature and query dimensions differ");
  std::vector<std::vector<bool>> out(superpoint_features.rows(),
                                     std::vector<bool>(query_embeddings.rows(), false));
  for (std::size_t m = 0; m < superpoint_features.rows(); ++m)
    for (std::size_t k = 0; k < query_embeddings.rows(); ++k)
      out[m][k] = dot(superpoint_features.row(m), query_embeddings.row(k)) > 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Fourier features

inline constexpr double kDefaultFourierScale = 1.0;

/// (dim/2) x 4 projection with N(0, sigma^2) entries, fixed by seed.
inline Matrix make_fourier_projection(int dim, std::uint64_t seed, double sigma = kDefaultFourierScale) {
  if (dim < 2 || dim % 2 != 0) throw Error(ErrorCode::invalid_argument, "Fourier dimension must be even and >= 2");
  detail::Rng rng(seed);
  Matrix g(static_cast<std::size_t>(dim / 2), 4);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < 4; ++c) g(r, c) = sigma * rng.normal();
  return g;
}

/// Min-max normalizes voxel coordinates of one level to [0,1] per axis
/// (an axis without extent maps to 0).
inline Matrix normalize_coordinates(std::span<const VoxelKey> keys) {
  Matrix out(keys.size(), 4);
  if (keys.empty()) return out;
  std::array<double, 4> lo, hi;
  for (int a = 0; a < 4; ++a) lo[a] = hi[a] = keys[0][a];
  for (const auto& k : keys)
    for (int a = 0; a < 4; ++a) {
      lo[a] = std::min<double>(lo[a], k[a]);
      hi[a] = std::max<double>(hi[a], k[a]);
    }
  for (std::size_t v = 0; v < keys.size(); ++v)
    for (int a = 0; a < 4; ++a)
      out(v, static_cast<std::size_t>(a)) = hi[a] > lo[a] ? (keys[v][a] - lo[a]) / (hi[a] - lo[a]) : 0.0;
  return out;
}

/// [sin(2 pi G c), cos(2 pi G c)] for each normalized (x, y, z, t) row c.
inline Matrix fourier_features_4d(const Matrix& coords, const Matrix& projection) {
  if (coords.cols() != 4 || projection.cols() != 4)
    throw Error(ErrorCode::dimension_mismatch, "Fourier features need 4D coordinates");
  const auto half = projection.rows();
  Matrix out(coords.rows(), 2 * half);
  for (std::size_t i = 0; i < coords.rows(); ++i)
    for (std::size_t r = 0; r < half; ++r) {
      const double a = 2.0 * std::numbers::pi * dot(projection.row(r), coords.row(i));
      out(i, r) = std::sin(a);
      out(i, half + r) = std::cos(a);
    }
  return out;
}

}  // namespace t4d
