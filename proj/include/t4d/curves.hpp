#pragma once

// Space-filling-curve serialization of voxel sets, per stage (3D) or over the
// merged sequence with t as a fourth axis (4D).
//
// Bit layouts:
//  * Z-order: bit b of axis a lands at rank bit b*d + a, so x is the least
//    significant axis and (in 4D) t the most significant within each bit plane.
//  * Hilbert: Skilling's transpose construction with axis order (x, y, z[, t]);
//    x is the most significant axis of each transposed bit plane.
//  * Trans variants rotate the axes before encoding: encoded axis a takes
//    coordinate (a + 1) mod d, i.e. (y, z, x) in 3D and (y, z, t, x) in 4D.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "t4d/core.hpp"
#include "t4d/detail/random.hpp"
#include "t4d/geometry.hpp"

namespace t4d {

enum class Curve { z_order, hilbert, z_order_trans, hilbert_trans };
enum class CurveDims { spatial_3d, spatiotemporal_4d };

inline constexpr std::array<Curve, 4> kAllCurves = {Curve::z_order, Curve::hilbert,
                                                    Curve::z_order_trans, Curve::hilbert_trans};
inline constexpr int kDefaultBitsPerAxis = 16;

inline std::string_view to_string(Curve c) {
  switch (c) {
    case Curve::z_order: return "zorder";
    case Curve::hilbert: return "hilbert";
    case Curve::z_order_trans: return "zorder-trans";
    case Curve::hilbert_trans: return "hilbert-trans";
  }
  return "zorder";
}

inline Curve curve_from_string(std::string_view s) {
  for (auto c : kAllCurves)
    if (to_string(c) == s) return c;
  throw Error(ErrorCode::parse_failure, "unknown curve: " + std::string(s));
}

inline int dimension_of(CurveDims d) { return d == CurveDims::spatial_3d ? 3 : 4; }

inline bool is_trans(Curve c) { return c == Curve::z_order_trans || c == Curve::hilbert_trans; }
inline bool is_hilbert(Curve c) { return c == Curve::hilbert || c == Curve::hilbert_trans; }

struct SerializationPattern {
  Curve curve = Curve::z_order;
  CurveDims dims = CurveDims::spatial_3d;

  /// Encoded axis a reads input coordinate axis_permutation()[a].
  std::array<int, 4> axis_permutation() const {
    const int d = dimension_of(dims);
    std::array<int, 4> p{0, 1, 2, 3};
    if (is_trans(curve))
      for (int a = 0; a < d; ++a) p[static_cast<std::size_t>(a)] = (a + 1) % d;
    return p;
  }

  friend bool operator==(const SerializationPattern&, const SerializationPattern&) = default;
};

namespace detail {

inline void check_curve_args(std::size_t d, int bits) {
  if (d != 3 && d != 4) throw Error(ErrorCode::invalid_argument, "curve dimension must be 3 or 4");
  if (bits < 1 || static_cast<std::size_t>(bits) * d > 64)
    throw Error(ErrorCode::invalid_argument, "bits_per_axis out of range for dimension");
}

inline std::uint64_t morton_encode(std::span<const std::uint32_t> c, int bits) {
  const auto d = c.size();
  std::uint64_t r = 0;
  for (int b = 0; b < bits; ++b)
    for (std::size_t a = 0; a < d; ++a)
      r |= static_cast<std::uint64_t>((c[a] >> b) & 1u) << (static_cast<std::size_t>(b) * d + a);
  return r;
}

inline void morton_decode(std::uint64_t r, std::span<std::uint32_t> c, int bits) {
  const auto d = c.size();
  std::fill(c.begin(), c.end(), 0u);
  for (int b = 0; b < bits; ++b)
    for (std::size_t a = 0; a < d; ++a)
      c[a] |= static_cast<std::uint32_t>((r >> (static_cast<std::size_t>(b) * d + a)) & 1u) << b;
}

// Skilling, "Programming the Hilbert curve" (2004): axes -> transposed index.
inline void axes_to_transpose(std::span<std::uint32_t> x, int bits) {
  const auto n = x.size();
  const std::uint32_t m = 1u << (bits - 1);
  for (std::uint32_t q = m; q > 1; q >>= 1) {
    const std::uint32_t p = q - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        const std::uint32_t t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
  for (std::size_t i = 1; i < n; ++i) x[i] ^= x[i - 1];
  std::uint32_t t = 0;
  for (std::uint32_t q = m; q > 1; q >>= 1)
    if (x[n - 1] & q) t ^= q - 1;
  for (std::size_t i = 0; i < n; ++i) x[i] ^= t;
}

inline void transpose_to_axes(std::span<std::uint32_t> x, int bits) {
  const auto n = x.size();
  const std::uint64_t top = std::uint64_t{2} << (bits - 1);
  std::uint32_t t = x[n - 1] >> 1;
  for (std::size_t i = n - 1; i > 0; --i) x[i] ^= x[i - 1];
  x[0] ^= t;
  for (std::uint64_t q64 = 2; q64 != top; q64 <<= 1) {
    const auto q = static_cast<std::uint32_t>(q64);
    const std::uint32_t p = q - 1;
    for (std::size_t i = n; i-- > 0;) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
}

inline std::uint64_t hilbert_encode(std::span<const std::uint32_t> c, int bits) {
  std::array<std::uint32_t, 4> x{};
  std::copy(c.begin(), c.end(), x.begin());
  const std::span<std::uint32_t> xs(x.data(), c.size());
  axes_to_transpose(xs, bits);
  std::uint64_t r = 0;
  for (int b = bits - 1; b >= 0; --b)
    for (auto v : xs) r = (r << 1) | ((v >> b) & 1u);
  return r;
}

inline void hilbert_decode(std::uint64_t r, std::span<std::uint32_t> c, int bits) {
  const auto n = c.size();
  std::fill(c.begin(), c.end(), 0u);
  int shift = bits * static_cast<int>(n);
  for (int b = bits - 1; b >= 0; --b)
    for (std::size_t i = 0; i < n; ++i) {
      --shift;
      c[i] |= static_cast<std::uint32_t>((r >> shift) & 1u) << b;
    }
  transpose_to_axes(c, bits);
}

}  // namespace detail

/// Rank of a grid cell along the curve. Every coordinate must lie in
/// [0, 2^bits_per_axis).
inline std::uint64_t encode_key(std::span<const std::uint32_t> coord, Curve curve,
                                int bits_per_axis = kDefaultBitsPerAxis) {
  const auto d = coord.size();
  detail::check_curve_args(d, bits_per_axis);
  for (auto v : coord)
    if (bits_per_axis < 32 && v >= (1u << bits_per_axis))
      throw Error(ErrorCode::out_of_range, "coordinate out of range for bits_per_axis");

  std::array<std::uint32_t, 4> c{};
  for (std::size_t a = 0; a < std::min(d, c.size()); ++a)
    c[a] = is_trans(curve) ? coord[(a + 1) % d] : coord[a];
  const std::span<const std::uint32_t> cs(c.data(), d);
  return is_hilbert(curve) ? detail::hilbert_encode(cs, bits_per_axis)
                           : detail::morton_encode(cs, bits_per_axis);
}

inline std::uint64_t encode_key(std::initializer_list<std::uint32_t> coord, Curve curve,
                                int bits_per_axis = kDefaultBitsPerAxis) {
  return encode_key(std::span<const std::uint32_t>(coord.begin(), coord.size()), curve,
                    bits_per_axis);
}

inline std::vector<std::uint32_t> decode_key(std::uint64_t rank, int d, Curve curve,
                                             int bits_per_axis = kDefaultBitsPerAxis) {
  detail::check_curve_args(static_cast<std::size_t>(d), bits_per_axis);
  if (static_cast<std::size_t>(bits_per_axis) * static_cast<std::size_t>(d) < 64 &&
      rank >= (std::uint64_t{1} << (bits_per_axis * d)))
    throw Error(ErrorCode::out_of_range, "rank out of range for grid");
  std::array<std::uint32_t, 4> c{};
  const std::span<std::uint32_t> cs(c.data(), static_cast<std::size_t>(d));
  if (is_hilbert(curve))
    detail::hilbert_decode(rank, cs, bits_per_axis);
  else
    detail::morton_decode(rank, cs, bits_per_axis);
  std::vector<std::uint32_t> out(static_cast<std::size_t>(d));
  for (int a = 0; a < d; ++a) {
    const auto src = is_trans(curve) ? (a + 1) % d : a;
    out[static_cast<std::size_t>(src)] = c[static_cast<std::size_t>(a)];
  }
  return out;
}

/// Total order over the grid's voxels (indices into grid.keys).
///
/// spatial_3d: every stage is ordered on its own and stages are concatenated
/// in stage order. spatiotemporal_4d: all stages are ordered jointly with t as
/// an encoded axis; duplicate spatial voxels from different stages are kept.
/// Spatial coordinates are shifted by the grid-wide minimum first.
inline std::vector<std::uint32_t> serialize_sequence(const VoxelGrid4D& grid,
                                                     const SerializationPattern& pattern,
                                                     int bits_per_axis = kDefaultBitsPerAxis) {
  const int d = dimension_of(pattern.dims);
  detail::check_curve_args(static_cast<std::size_t>(d), bits_per_axis);
  std::vector<std::uint32_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0u);
  if (grid.keys.empty()) return order;

  std::array<std::int64_t, 3> lo{grid.keys[0][0], grid.keys[0][1], grid.keys[0][2]};
  for (const auto& k : grid.keys)
    for (int a = 0; a < 3; ++a) lo[a] = std::min<std::int64_t>(lo[a], k[a]);

  std::vector<std::uint64_t> code(grid.size());
  std::array<std::uint32_t, 4> c{};
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const auto& k = grid.keys[v];
    for (int a = 0; a < 3; ++a) c[a] = static_cast<std::uint32_t>(k[a] - lo[a]);
    c[3] = static_cast<std::uint32_t>(k[3]);
    code[v] = encode_key(std::span<const std::uint32_t>(c.data(), static_cast<std::size_t>(d)),
                         pattern.curve, bits_per_axis);
  }
  if (pattern.dims == CurveDims::spatial_3d) {
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (grid.keys[a][3] != grid.keys[b][3]) return grid.keys[a][3] < grid.keys[b][3];
      return code[a] < code[b];
    });
  } else {
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return code[a] < code[b]; });
  }
  return order;
}

enum class ScheduleMix { spatial_only, temporal_only, mixed };

/// Serialization patterns used at each decoder layer.
struct PatternSchedule {
  std::uint64_t rng_seed = 0;
  ScheduleMix mix = ScheduleMix::mixed;
  std::vector<std::vector<SerializationPattern>> layers;
};

inline std::vector<SerializationPattern> pattern_pool(ScheduleMix mix) {
  std::vector<SerializationPattern> pool;
  if (mix != ScheduleMix::temporal_only)
    for (auto c : kAllCurves) pool.push_back({c, CurveDims::spatial_3d});
  if (mix != ScheduleMix::spatial_only)
    for (auto c : kAllCurves) pool.push_back({c, CurveDims::spatiotemporal_4d});
  return pool;
}

/// Each layer draws patterns_per_layer distinct patterns uniformly from the
/// pool of the requested mix. Layer l depends only on (seed, l).
inline PatternSchedule make_schedule(std::uint64_t seed, int n_layers, ScheduleMix mix,
                                     int patterns_per_layer = 4) {
  if (n_layers < 1) throw Error(ErrorCode::invalid_argument, "n_layers must be >= 1");
  auto pool = pattern_pool(mix);
  if (patterns_per_layer < 1 || static_cast<std::size_t>(patterns_per_layer) > pool.size())
    throw Error(ErrorCode::invalid_argument, "patterns_per_layer out of range");
  PatternSchedule s{seed, mix, {}};
  for (int layer = 0; layer < n_layers; ++layer) {
    detail::Rng rng{seed, static_cast<std::uint64_t>(layer)};
    auto p = pool;
    rng.shuffle(p);
    p.resize(static_cast<std::size_t>(patterns_per_layer));
    s.layers.push_back(std::move(p));
  }
  return s;
}

}  // namespace t4d
