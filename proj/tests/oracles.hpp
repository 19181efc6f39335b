#pragma once

// Test-only reference implementations. Each oracle recomputes a quantity the
// production code produces, through an independent route, so the two sides
// can be compared without sharing code paths.

#include "coedge/core.hpp"

#include <deque>
#include <functional>
#include <set>

namespace oracles {

using coedge::Index;
using coedge::Plane;

// Central finite difference of a scalar function at x.
inline double central_diff(const std::function<double()>& eval, double& x,
                           double step) {
  const double saved = x;
  x = saved + step;
  const double fp = eval();
  x = saved - step;
  const double fm = eval();
  x = saved;
  return (fp - fm) / (2.0 * step);
}

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Finite-difference check for piecewise-smooth objectives (ReLU, max-pool).
// Central differences only estimate the derivative where the +-step window is
// smooth, so kink coordinates are screened out first: a switch strictly
// inside the window makes the step and half-step estimates disagree at O(1),
// and a switch at/near the evaluation point splits the one-sided slopes.
// A wrong analytic gradient still fails on the smooth majority.
struct FdCheckResult {
  int checked = 0;
  int skipped = 0;
  double worst_rel = 0.0;
};

inline void fd_check_coordinate(const std::function<double()>& eval, double& x,
                                double analytic, double step,
                                FdCheckResult& out, double rel_floor = 1e-6) {
  const double saved = x;
  const double f0 = eval();
  x = saved + step;
  const double fp = eval();
  x = saved - step;
  const double fm = eval();
  x = saved;

  const double fd_full = (fp - fm) / (2.0 * step);
  const double fd_half = central_diff(eval, x, step / 2.0);
  const double one_sided_gap = std::abs((fp - f0) / step - (f0 - fm) / step);
  const double scale =
      std::max({std::abs(fd_full), std::abs(fd_half), std::abs(analytic), 1e-3});
  if (std::abs(fd_full - fd_half) > 1e-3 * scale ||
      one_sided_gap > 0.02 * scale) {
    ++out.skipped;
    return;
  }
  ++out.checked;
  out.worst_rel = std::max(out.worst_rel, rel_error(analytic, fd_full, rel_floor));
}

// Boundary re-extraction from a shape-id map: flood-fills each labelled
// region and marks pixels with a 4-neighbour outside their own component's
// pixel set. Image-border sides do not count as boundary.
inline Plane<float> boundary_from_ids(const Plane<int>& ids) {
  const Index h = ids.rows(), w = ids.cols();
  Plane<float> boundary = Plane<float>::Zero(h, w);
  Plane<int> visited = Plane<int>::Zero(h, w);
  const int dy[4] = {-1, 1, 0, 0};
  const int dx[4] = {0, 0, -1, 1};

  for (Index sy = 0; sy < h; ++sy)
    for (Index sx = 0; sx < w; ++sx) {
      if (ids(sy, sx) == 0 || visited(sy, sx)) continue;
      const int label = ids(sy, sx);
      std::set<std::pair<Index, Index>> component;
      std::deque<std::pair<Index, Index>> queue{{sy, sx}};
      visited(sy, sx) = 1;
      while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        component.insert({y, x});
        for (int d = 0; d < 4; ++d) {
          const Index ny = y + dy[d], nx = x + dx[d];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (visited(ny, nx) || ids(ny, nx) != label) continue;
          visited(ny, nx) = 1;
          queue.push_back({ny, nx});
        }
      }
      for (const auto& [y, x] : component) {
        for (int d = 0; d < 4; ++d) {
          const Index ny = y + dy[d], nx = x + dx[d];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (!component.count({ny, nx})) {
            boundary(y, x) = 1.0f;
            break;
          }
        }
      }
    }
  return boundary;
}

// Maximum bipartite matching via augmenting paths: the optimal-assignment
// bound for the greedy pixel correspondence.
inline int max_bipartite_matching(
    const std::vector<std::vector<int>>& candidates, int right_count) {
  std::vector<int> match_right(right_count, -1);
  std::vector<char> seen;
  std::function<bool(int)> augment = [&](int left) -> bool {
    for (int r : candidates[left]) {
      if (seen[r]) continue;
      seen[r] = 1;
      if (match_right[r] == -1 || augment(match_right[r])) {
        match_right[r] = left;
        return true;
      }
    }
    return false;
  };
  int matched = 0;
  for (std::size_t l = 0; l < candidates.size(); ++l) {
    seen.assign(right_count, 0);
    if (augment(int(l))) ++matched;
  }
  return matched;
}

// Projected gradient descent on the product of per-pixel simplices: the
// reference minimizer for the ensemble-weight solve. Returns per-pixel
// weights [pixel][member].
struct SimplexPgdResult {
  std::vector<std::vector<double>> weights;
  double objective = 0.0;
};

inline std::vector<double> project_to_simplex(std::vector<double> v) {
  // Euclidean projection (sort-based).
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, tau = 0.0;
  int rho = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    css += u[i];
    const double t = (css - 1.0) / double(i + 1);
    if (u[i] - t > 0.0) {
      rho = int(i + 1);
      tau = t;
    }
  }
  (void)rho;
  for (auto& x : v) x = std::max(0.0, x - tau);
  return v;
}

// g[pixel][image][member] member predictions, y[pixel][image] targets.
inline SimplexPgdResult simplex_pgd_oracle(
    const std::vector<std::vector<std::vector<double>>>& g,
    const std::vector<std::vector<double>>& y, double tol = 1e-8,
    int max_iters = 200000) {
  const std::size_t pixels = g.size();
  const std::size_t members = g[0][0].size();
  const double clamp = 1e-6;

  SimplexPgdResult result;
  result.weights.assign(pixels, std::vector<double>(members, 1.0 / members));

  auto pixel_value = [&](std::size_t p, const std::vector<double>& w) {
    double f = 0.0;
    for (std::size_t n = 0; n < g[p].size(); ++n) {
      double m = 0.0;
      for (std::size_t s = 0; s < members; ++s) m += w[s] * g[p][n][s];
      m = std::min(1.0 - clamp, std::max(clamp, m));
      f -= y[p][n] * std::log(m) + (1.0 - y[p][n]) * std::log1p(-m);
    }
    return f;
  };

  double total = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    std::vector<double> w = result.weights[p];
    double f = pixel_value(p, w);
    double step = 0.5;
    for (int it = 0; it < max_iters; ++it) {
      std::vector<double> grad(members, 0.0);
      for (std::size_t n = 0; n < g[p].size(); ++n) {
        double m = 0.0;
        for (std::size_t s = 0; s < members; ++s) m += w[s] * g[p][n][s];
        m = std::min(1.0 - clamp, std::max(clamp, m));
        const double r = -y[p][n] / m + (1.0 - y[p][n]) / (1.0 - m);
        for (std::size_t s = 0; s < members; ++s) grad[s] += r * g[p][n][s];
      }
      bool moved = false;
      for (int bt = 0; bt < 60; ++bt) {
        std::vector<double> cand(members);
        for (std::size_t s = 0; s < members; ++s) cand[s] = w[s] - step * grad[s];
        cand = project_to_simplex(std::move(cand));
        const double fc = pixel_value(p, cand);
        if (fc <= f) {
          moved = std::abs(f - fc) > tol * (1.0 + std::abs(f));
          f = fc;
          w = std::move(cand);
          step *= 1.8;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    result.weights[p] = w;
    total += f;
  }
  result.objective = total;
  return result;
}

}  // namespace oracles
