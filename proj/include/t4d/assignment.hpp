#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "t4d/core.hpp"
#include "t4d/matrix.hpp"

namespace t4d {

struct Matching {
  /// row_to_col[r] is the column assigned to row r, or -1.
  std::vector<std::ptrdiff_t> row_to_col;
  double total = 0.0;
};

namespace detail {

// Shortest augmenting path with potentials; requires rows <= cols.
inline std::vector<std::ptrdiff_t> solve_rows_le_cols(const Matrix& a) {
  const std::size_t n = a.rows(), m = a.cols();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::ptrdiff_t> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<std::ptrdiff_t>(j - 1);
  return row_to_col;
}

}  // namespace detail

/// Minimum-cost rectangular assignment (Hungarian method). Exactly
/// min(rows, cols) pairs are matched. Costs must be finite.
inline Matching solve_assignment(const Matrix& cost) {
  Matching out;
  out.row_to_col.assign(cost.rows(), -1);
  if (cost.rows() == 0 || cost.cols() == 0) return out;
  for (double c : cost.data())
    if (!std::isfinite(c)) throw Error(ErrorCode::invalid_argument, "assignment cost must be finite");

  if (cost.rows() <= cost.cols()) {
    out.row_to_col = detail::solve_rows_le_cols(cost);
  } else {
    Matrix t(cost.cols(), cost.rows());
    for (std::size_t r = 0; r < cost.rows(); ++r)
      for (std::size_t c = 0; c < cost.cols(); ++c) t(c, r) = cost(r, c);
    const auto col_to_row = detail::solve_rows_le_cols(t);
    for (std::size_t c = 0; c < col_to_row.size(); ++c)
      if (col_to_row[c] >= 0) out.row_to_col[static_cast<std::size_t>(col_to_row[c])] =
          static_cast<std::ptrdiff_t>(c);
  }
  for (std::size_t r = 0; r < out.row_to_col.size(); ++r)
    if (out.row_to_col[r] >= 0) out.total += cost(r, static_cast<std::size_t>(out.row_to_col[r]));
  return out;
}

}  // namespace t4d
