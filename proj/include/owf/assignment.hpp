#pragma once

// Minimum-cost rectangular assignment (Hungarian method with potentials,
// O(n^2 m)).

#include <limits>
#include <optional>
#include <vector>

#include "owf/types.hpp"

namespace owf {

using CostMatrix = std::vector<std::vector<double>>;

/// Optimal assignment for an n x m cost matrix. Every row is assigned when
/// n <= m, every column otherwise. Returns the column per row (absent for
/// unassigned rows).
inline std::vector<std::optional<std::size_t>> solve_assignment(const CostMatrix& cost) {
  const std::size_t n = cost.size();
  const std::size_t m = n == 0 ? 0 : cost.front().size();
  std::vector<std::optional<std::size_t>> out(n);
  if (n == 0 || m == 0) return out;

  if (n > m) {
    CostMatrix t(m, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) t[j][i] = cost[i][j];
    const auto cols = solve_assignment(t);
    for (std::size_t j = 0; j < m; ++j)
      if (cols[j]) out[*cols[j]] = j;
    return out;
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row matched to column j (0 = none).
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) out[p[j] - 1] = j - 1;
  return out;
}

inline constexpr double kClassMismatchPenalty = 1e6;

inline double assignment_cost(const Annotation& g, const Detection& p) {
  const double d = std::hypot(g.box.x - p.box.x, g.box.y - p.box.y);
  return g.class_id == p.class_id ? d : d + kClassMismatchPenalty;
}

/// Ground truth to prediction matching by 2D center distance; cross-class
/// pairs carry a large penalty and are reported unmatched.
inline std::vector<std::optional<std::size_t>> assign(const std::vector<Annotation>& gt,
                                                      const std::vector<Detection>& preds) {
  CostMatrix cost(gt.size(), std::vector<double>(preds.size()));
  for (std::size_t g = 0; g < gt.size(); ++g)
    for (std::size_t p = 0; p < preds.size(); ++p) cost[g][p] = assignment_cost(gt[g], preds[p]);
  auto out = solve_assignment(cost);
  for (std::size_t g = 0; g < gt.size(); ++g)
    if (out[g] && cost[g][*out[g]] >= kClassMismatchPenalty) out[g].reset();
  return out;
}

}  // namespace owf
