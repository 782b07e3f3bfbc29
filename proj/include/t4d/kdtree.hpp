#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "t4d/core.hpp"

namespace t4d {

/// Exact nearest-neighbour search over 3D points. Among points at equal
/// distance the lowest input index is returned.
class KdTree3 {
 public:
  explicit KdTree3(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / kLeafSize + 1);
      build(0, static_cast<std::uint32_t>(points_.size()));
    }
  }

  std::size_t size() const noexcept { return points_.size(); }

  std::size_t nearest(const Vec3& q) const {
    if (points_.empty()) throw Error(ErrorCode::invalid_argument, "nearest on empty tree");
    Best best;
    search(0, q, best);
    return best.index;
  }

  static double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
  }

 private:
  static constexpr std::uint32_t kLeafSize = 12;
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  struct Node {
    std::uint32_t begin, end;
    std::uint32_t left = kNone, right = kNone;
    int axis = -1;
    double split = 0.0;
  };

  struct Best {
    double d2 = std::numeric_limits<double>::infinity();
    std::size_t index = std::numeric_limits<std::size_t>::max();
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    Vec3 lo = points_[order_[begin]], hi = lo;
    for (auto i = begin; i < end; ++i) {
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], points_[order_[i]][a]);
        hi[a] = std::max(hi[a], points_[order_[i]][a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    if (hi[axis] == lo[axis]) return id;  // all points coincide

    const auto mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t x, std::uint32_t y) {
                       return points_[x][axis] < points_[y][axis];
                     });
    const double split = points_[order_[mid]][axis];
    const auto left = build(begin, mid);
    const auto right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(std::uint32_t id, const Vec3& q, Best& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (auto i = n.begin; i < n.end; ++i) {
        const auto p = order_[i];
        const double d2 = squared_distance(points_[p], q);
        if (d2 < best.d2 || (d2 == best.d2 && p < best.index)) {
          best.d2 = d2;
          best.index = p;
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = diff < 0 ? n.left : n.right;
    const auto far = diff < 0 ? n.right : n.left;
    search(near, q, best);
    // Equal-distance candidates in the far half may carry a lower index.
    if (diff * diff <= best.d2) search(far, q, best);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace t4d
