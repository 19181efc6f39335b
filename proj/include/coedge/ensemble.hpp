#pragma once

// Cross-information assembly: momentum-network parameter averaging, the
// per-epoch sampled-parameter ensemble with pixel-wise simplex weights chosen
// by generalization on a validation split, confidence-aware fusion across the
// two architectures, and the final parameter collapse used at inference.

#include "coedge/losses.hpp"
#include "coedge/params.hpp"

namespace coedge::ensemble {

// ---------------------------------------------------------------------------
// Momentum parameters.

template <class S>
struct MomentumState {
  ParameterVector<S> theta_m;
  double mu = 0.5;
  int epoch = 0;
};

template <class S>
MomentumState<S> momentum_update(const ParameterVector<S>& theta_bp,
                                 const MomentumState<S>& state) {
  state.theta_m.require_same_structure(theta_bp);
  MomentumState<S> next;
  next.mu = state.mu;
  next.epoch = state.epoch + 1;
  next.theta_m = combine(S(state.mu), theta_bp, S(1.0 - state.mu), state.theta_m);
  return next;
}

// ---------------------------------------------------------------------------
// Sampled-parameter sets and their pixel-wise weights.

enum class SampleProvenance { dropout, pruning };

template <class S>
struct SampleSet {
  std::vector<ParameterVector<S>> samples;
  SampleProvenance provenance = SampleProvenance::dropout;

  Index size() const { return Index(samples.size()); }
};

template <class S>
struct EnsembleWeights {
  std::vector<Plane<S>> w;  // simplex per pixel
  std::vector<S> omega;     // ||W_s||_1 / sum ||W_s'||_1

  Index size() const { return Index(w.size()); }

  void validate() const {
    if (w.empty()) throw ShapeError("ensemble weights are empty");
    Plane<S> total = Plane<S>::Zero(w[0].rows(), w[0].cols());
    for (const auto& m : w) {
      if (m.rows() != w[0].rows() || m.cols() != w[0].cols())
        throw ShapeError("ensemble weight maps disagree in shape");
      if ((m < S(0)).any()) throw NumericError("negative ensemble weight");
      total += m;
    }
    if (((total - S(1)).abs() > S(1e-5)).any())
      throw NumericError("ensemble weights leave the simplex");
  }
};

template <class S>
EnsembleWeights<S> uniform_weights(Index s, Index h, Index w) {
  EnsembleWeights<S> out;
  out.w.assign(s, Plane<S>::Constant(h, w, S(1) / S(s)));
  out.omega.assign(s, S(1) / S(s));
  return out;
}

// Recomputes the collapse scalars from the weight maps.
template <class S>
void refresh_omega(EnsembleWeights<S>& weights) {
  double total = 0.0;
  std::vector<double> l1(weights.w.size());
  for (std::size_t s = 0; s < weights.w.size(); ++s) {
    l1[s] = weights.w[s].template cast<double>().abs().sum();
    total += l1[s];
  }
  weights.omega.resize(weights.w.size());
  for (std::size_t s = 0; s < weights.w.size(); ++s)
    weights.omega[s] = total > 0.0 ? S(l1[s] / total)
                                   : S(1.0 / double(weights.w.size()));
}

// M = sum_s W_s o P_s. For a single sample the weights collapse to ones.
template <class S>
Plane<S> ensemble_combine(const std::vector<Plane<S>>& member_preds,
                          const EnsembleWeights<S>& weights) {
  if (member_preds.empty()) throw ShapeError("ensemble needs >= 1 member");
  if (member_preds.size() == 1) return member_preds[0];
  if (weights.w.size() != member_preds.size())
    throw ShapeError("weight/member count mismatch");
  Plane<S> m = Plane<S>::Zero(member_preds[0].rows(), member_preds[0].cols());
  for (std::size_t s = 0; s < member_preds.size(); ++s) {
    if (member_preds[s].rows() != m.rows() || member_preds[s].cols() != m.cols())
      throw ShapeError("member prediction shape mismatch");
    if (weights.w[s].rows() != m.rows() || weights.w[s].cols() != m.cols())
      throw ShapeError("weight map does not match prediction shape");
    m += weights.w[s] * member_preds[s];
  }
  return m;
}

template <class S, class ForwardFn>
Plane<S> ensemble_predict(ForwardFn&& net_forward,
                          const SampleSet<S>& samples,
                          const EnsembleWeights<S>& weights) {
  std::vector<Plane<S>> preds;
  preds.reserve(samples.samples.size());
  for (const auto& theta : samples.samples) preds.push_back(net_forward(theta));
  return ensemble_combine(preds, weights);
}

// ---------------------------------------------------------------------------
// Confidence-aware fusion of the two architectures' predictions. Confidence
// is the distance from 0.5; two totally unconfident inputs fuse to 0.5.

template <class S>
Plane<S> confidence_fuse(const Plane<S>& m_r, const Plane<S>& m_nr) {
  if (m_r.rows() != m_nr.rows() || m_r.cols() != m_nr.cols())
    throw ShapeError("confidence_fuse shape mismatch");
  Plane<S> out(m_r.rows(), m_r.cols());
  for (Index i = 0; i < out.size(); ++i) {
    const double a = m_r(i), b = m_nr(i);
    const double ca = std::abs(a - 0.5), cb = std::abs(b - 0.5);
    out(i) = (ca + cb) > 0.0 ? S((a * ca + b * cb) / (ca + cb)) : S(0.5);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference-time parameter collapse.

template <class S>
ParameterVector<S> collapse_params(const SampleSet<S>& samples,
                                   const EnsembleWeights<S>& weights) {
  if (samples.samples.empty()) throw ShapeError("collapse needs >= 1 sample");
  if (Index(weights.omega.size()) != samples.size())
    throw ShapeError("omega/sample count mismatch");
  ParameterVector<S> out = zeros_like(samples.samples[0]);
  for (std::size_t s = 0; s < samples.samples.size(); ++s)
    accumulate_scaled(out, samples.samples[s], S(weights.omega[s]));
  return out;
}

// ---------------------------------------------------------------------------
// Validation-weighted solve for the per-sampling weight maps.
//
// Stage one iterates the damped Lagrangian fixed point from a uniform start
// (clamping negatives, renormalizing per pixel, uniform where no validation
// pixel is ever an edge). Stage two refines each pixel's simplex point with
// exponentiated-gradient descent, which drives the weights to the actual
// constrained optimum of the validation cross entropy; the best iterate by
// objective is returned, so the result never loses to uniform weights.

struct SolveOptions {
  double damping = 0.5;
  int fixed_point_iters = 50;
  double fixed_point_tol = 1e-6;
  int refine_iters = 400;
  double refine_tol = 1e-12;
  int threads = 0;
};

template <class S>
struct WeightSolveReport {
  EnsembleWeights<S> weights;
  bool converged = true;
  int pixels_unconverged = 0;
  double bce_uniform = 0.0;
  double bce_achieved = 0.0;
};

namespace detail {

// Per-pixel objective f(w) = sum_n -(y ln M + (1-y) ln(1-M)), M = g_n . w.
struct PixelProblem {
  const double* g;  // S x N_v, member-major per image: g[n*S + s]
  const double* y;  // N_v
  int s_count;
  int n_count;

  double value(const double* w) const {
    double f = 0.0;
    for (int n = 0; n < n_count; ++n) {
      double m = 0.0;
      for (int s = 0; s < s_count; ++s) m += w[s] * g[n * s_count + s];
      m = std::min(1.0 - train::kProbClamp, std::max(train::kProbClamp, m));
      f -= y[n] * std::log(m) + (1.0 - y[n]) * std::log1p(-m);
    }
    return f;
  }

  // grad_s = sum_n g_{n,s} (-y/M + (1-y)/(1-M))
  void gradient(const double* w, double* grad) const {
    for (int s = 0; s < s_count; ++s) grad[s] = 0.0;
    for (int n = 0; n < n_count; ++n) {
      double m = 0.0;
      for (int s = 0; s < s_count; ++s) m += w[s] * g[n * s_count + s];
      m = std::min(1.0 - train::kProbClamp, std::max(train::kProbClamp, m));
      const double r = -y[n] / m + (1.0 - y[n]) / (1.0 - m);
      for (int s = 0; s < s_count; ++s) grad[s] += r * g[n * s_count + s];
    }
  }
};

}  // namespace detail

// member_preds[s][n] and targets[n] must share one spatial shape (the
// aggregation size); predictions are clamped into (0,1) on entry.
template <class S>
WeightSolveReport<S> solve_weights(
    const std::vector<std::vector<Plane<S>>>& member_preds,
    const std::vector<Plane<S>>& targets, const SolveOptions& opts = {}) {
  const int s_count = int(member_preds.size());
  const int n_count = int(targets.size());
  if (s_count < 1 || n_count < 1)
    throw ShapeError("solve_weights needs >= 1 member and >= 1 image");
  const Index h = targets[0].rows(), w = targets[0].cols();
  const Index pixels = h * w;
  for (const auto& member : member_preds) {
    if (int(member.size()) != n_count)
      throw ShapeError("member prediction count mismatch");
    for (const auto& p : member)
      if (p.rows() != h || p.cols() != w)
        throw ShapeError("prediction/target shape mismatch");
  }

  // Pixel-major scratch: per pixel, images x members contiguous.
  std::vector<double> g(std::size_t(pixels) * n_count * s_count);
  std::vector<double> y(std::size_t(pixels) * n_count);
  for (Index p = 0; p < pixels; ++p) {
    for (int n = 0; n < n_count; ++n) {
      y[std::size_t(p) * n_count + n] = targets[n](p);
      for (int s = 0; s < s_count; ++s)
        g[(std::size_t(p) * n_count + n) * s_count + s] = std::min(
            1.0 - train::kProbClamp,
            std::max(train::kProbClamp, double(member_preds[s][n](p))));
    }
  }

  WeightSolveReport<S> report;
  report.weights.w.assign(s_count, Plane<S>(h, w));
  std::vector<double> bce_uniform_px(pixels), bce_best_px(pixels);
  std::vector<int> unconverged(pixels, 0);

  parallel_for(
      pixels,
      [&](Index p) {
        detail::PixelProblem prob{g.data() + std::size_t(p) * n_count * s_count,
                                  y.data() + std::size_t(p) * n_count, s_count,
                                  n_count};
        std::vector<double> wcur(s_count, 1.0 / s_count);
        std::vector<double> wbest = wcur;
        double fbest = prob.value(wcur.data());
        bce_uniform_px[p] = fbest;

        double sum_y = 0.0;
        for (int n = 0; n < n_count; ++n) sum_y += prob.y[n];

        std::vector<double> raw(s_count), grad(s_count), wtry(s_count);

        // Stage one: damped fixed point of the closed-form stationarity map.
        if (s_count > 1 && sum_y > 0.0) {
          const double c = double(n_count) / (2.0 * sum_y);
          for (int it = 0; it < opts.fixed_point_iters; ++it) {
            prob.gradient(wcur.data(), grad.data());
            double total = 0.0;
            for (int s = 0; s < s_count; ++s) {
              raw[s] = std::max(0.0, c * -grad[s]);
              total += raw[s];
            }
            double delta = 0.0;
            for (int s = 0; s < s_count; ++s) {
              const double projected =
                  total > 0.0 ? raw[s] / total : 1.0 / s_count;
              const double next = (1.0 - opts.damping) * wcur[s] +
                                  opts.damping * projected;
              delta = std::max(delta, std::abs(next - wcur[s]));
              wcur[s] = next;
            }
            const double f = prob.value(wcur.data());
            if (f < fbest) {
              fbest = f;
              wbest = wcur;
            }
            if (delta < opts.fixed_point_tol) break;
          }
        }

        // Stage two: exponentiated-gradient descent to the optimum.
        if (s_count > 1) {
          for (int s = 0; s < s_count; ++s)
            wcur[s] = 0.999 * wbest[s] + 0.001 / s_count;
          double f = prob.value(wcur.data());
          double eta = 1.0;
          bool converged = false;
          for (int it = 0; it < opts.refine_iters; ++it) {
            prob.gradient(wcur.data(), grad.data());
            bool improved = false;
            for (int bt = 0; bt < 45; ++bt) {
              double z = 0.0;
              double gmax = -std::numeric_limits<double>::infinity();
              for (int s = 0; s < s_count; ++s)
                gmax = std::max(gmax, -eta * grad[s]);
              for (int s = 0; s < s_count; ++s) {
                wtry[s] = wcur[s] * std::exp(-eta * grad[s] - gmax);
                z += wtry[s];
              }
              for (int s = 0; s < s_count; ++s) wtry[s] /= z;
              const double ftry = prob.value(wtry.data());
              if (ftry <= f) {
                improved = ftry < f - opts.refine_tol * (1.0 + std::abs(f));
                f = ftry;
                wcur = wtry;
                eta *= 1.6;
                break;
              }
              eta *= 0.5;
            }
            if (f < fbest) {
              fbest = f;
              wbest = wcur;
            }
            if (!improved) {
              converged = true;
              break;
            }
          }
          if (!converged) unconverged[p] = 1;
        }

        bce_best_px[p] = fbest;
        for (int s = 0; s < s_count; ++s)
          report.weights.w[s](p) = S(wbest[s]);
      },
      opts.threads);

  double bce_uniform = 0.0, bce_best = 0.0;
  int bad = 0;
  for (Index p = 0; p < pixels; ++p) {
    bce_uniform += bce_uniform_px[p];
    bce_best += bce_best_px[p];
    bad += unconverged[p];
  }
  report.bce_uniform = bce_uniform / n_count;
  report.bce_achieved = bce_best / n_count;
  report.pixels_unconverged = bad;
  report.converged = bad == 0;
  refresh_omega(report.weights);
  return report;
}

// Mean validation BCE of a weighted ensemble, the solver's objective.
template <class S>
double validation_bce(const std::vector<std::vector<Plane<S>>>& member_preds,
                      const std::vector<Plane<S>>& targets,
                      const EnsembleWeights<S>& weights) {
  double total = 0.0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    std::vector<Plane<S>> preds;
    preds.reserve(member_preds.size());
    for (const auto& member : member_preds) preds.push_back(member[n]);
    Plane<S> m = ensemble_combine(preds, weights);
    total += train::weighted_bce(m, targets[n], 1.0, 1.0);
  }
  return total / double(targets.size());
}

// ---------------------------------------------------------------------------
// Plug-in mutual-information oracle over enumerable toy distributions. A
// weight grid point is a single simplex vector applied at every pixel.

struct ToyOutcome {
  int x_id = 0;
  Matrix<double> member_preds;  // S x P
  Vector<double> y;             // P, binary
  double prob = 0.0;
};

struct ToyDistribution {
  std::vector<ToyOutcome> outcomes;

  int members() const {
    return outcomes.empty() ? 0 : int(outcomes[0].member_preds.rows());
  }
};

// All nonnegative multiples of `resolution` summing to one.
inline std::vector<std::vector<double>> simplex_grid(int s_count,
                                                     double resolution) {
  const int units = int(std::lround(1.0 / resolution));
  std::vector<std::vector<double>> grid;
  std::vector<int> counts(s_count, 0);
  const std::function<void(int, int)> recurse = [&](int slot, int left) {
    if (slot == s_count - 1) {
      counts[slot] = left;
      std::vector<double> w(s_count);
      for (int s = 0; s < s_count; ++s) w[s] = double(counts[s]) / units;
      grid.push_back(std::move(w));
      return;
    }
    for (int k = 0; k <= left; ++k) {
      counts[slot] = k;
      recurse(slot + 1, left - k);
    }
  };
  recurse(0, units);
  return grid;
}

// Canonical scan order shared by both objectives so ties break identically:
// closest-to-uniform first, index as the final tie break.
inline std::vector<std::size_t> grid_scan_order(
    const std::vector<std::vector<double>>& grid) {
  std::vector<std::size_t> order(grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     double da = 0.0, db = 0.0;
                     const double u = 1.0 / double(grid[a].size());
                     for (double v : grid[a]) da += (v - u) * (v - u);
                     for (double v : grid[b]) db += (v - u) * (v - u);
                     return da < db;
                   });
  return order;
}

inline double toy_cross_entropy(const ToyDistribution& dist,
                                const std::vector<double>& weights) {
  double ce = 0.0;
  for (const auto& o : dist.outcomes) {
    double ll = 0.0;
    for (Index p = 0; p < o.y.size(); ++p) {
      double m = 0.0;
      for (Index s = 0; s < o.member_preds.rows(); ++s)
        m += weights[std::size_t(s)] * o.member_preds(s, p);
      m = std::min(1.0 - train::kProbClamp, std::max(train::kProbClamp, m));
      ll += o.y[p] * std::log(m) + (1.0 - o.y[p]) * std::log1p(-m);
    }
    ce -= o.prob * ll;
  }
  return ce;
}

// H(Y|X) of the enumerated joint; independent of the weights.
inline double toy_conditional_entropy(const ToyDistribution& dist) {
  std::map<int, double> px;
  for (const auto& o : dist.outcomes) px[o.x_id] += o.prob;
  double h = 0.0;
  for (const auto& o : dist.outcomes) {
    const double cond = o.prob / px.at(o.x_id);
    if (cond > 0.0) h -= o.prob * std::log(cond);
  }
  return h;
}

// Returns the grid point maximizing the plug-in estimate of I(Y; W | X).
inline std::vector<double> mi_plugin_estimate(
    const std::vector<std::vector<double>>& weights_grid,
    const ToyDistribution& dist) {
  if (weights_grid.empty()) throw ConfigError("empty weight grid");
  const double h_y_given_x = toy_conditional_entropy(dist);
  const auto order = grid_scan_order(weights_grid);
  double best_mi = -std::numeric_limits<double>::infinity();
  std::size_t best = order[0];
  for (std::size_t idx : order) {
    const double mi = h_y_given_x - toy_cross_entropy(dist, weights_grid[idx]);
    if (mi > best_mi) {
      best_mi = mi;
      best = idx;
    }
  }
  return weights_grid[best];
}

}  // namespace coedge::ensemble
