#pragma once

// Class-balanced cross entropy over soft targets, the soft-target schedule
// and the summed side/fused objective, together with the gradient glue the
// trainer feeds back into EdgeNet::backward.

#include "coedge/data.hpp"
#include "coedge/nets.hpp"

namespace coedge::train {

struct LossConfig {
  double lambda = 1.1;   // 1.1 BSDS/Multicue, 1.3 NYUD
  double eta_final = 0.8;
  int epochs = 30;

  void validate() const {
    if (lambda <= 0.0) throw ConfigError("lambda must be positive");
    if (!(eta_final >= 0.0 && eta_final <= 1.0))
      throw ConfigError("eta_final must lie in [0,1]");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
  }
};

// Linear ramp of the soft-target weight; epoch 0 trains on hard targets.
inline double eta_schedule(int j, const LossConfig& config) {
  if (j < 0 || j > config.epochs)
    throw ConfigError("epoch index outside [0, J]");
  return config.eta_final * double(j) / double(config.epochs);
}

template <class S>
Plane<S> soft_target(const Plane<S>& m, const Plane<S>& y_hard, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0,1]");
  if (m.rows() != y_hard.rows() || m.cols() != y_hard.cols())
    throw ShapeError("soft_target shape mismatch");
  return (S(eta) * m + S(1.0 - eta) * y_hard).eval();
}

inline data::EdgeTarget soft_target(const PlaneF& m, const data::EdgeTarget& y,
                                    double eta) {
  data::EdgeTarget t;
  t.hardness = data::Hardness::soft;
  t.values = soft_target<float>(m, y.values, eta);
  return t;
}

// Balancing coefficients: alpha weighs the edge term (scaled by lambda), beta
// the non-edge term; both share one denominator. Sums run in double.
template <class DerY, class DerYt>
std::pair<double, double> alpha_beta(const Eigen::ArrayBase<DerY>& y,
                                     const Eigen::ArrayBase<DerYt>& y_soft,
                                     double lambda) {
  if (y.rows() != y_soft.rows() || y.cols() != y_soft.cols())
    throw ShapeError("alpha_beta shape mismatch");
  const double pos =
      (y.derived().template cast<double>() *
       y_soft.derived().template cast<double>()).sum();
  const double neg = ((1.0 - y.derived().template cast<double>()) *
                      (1.0 - y_soft.derived().template cast<double>())).sum();
  const double denom = pos + neg;
  if (denom == 0.0) return {0.0, 0.0};
  return {lambda * pos / denom, neg / denom};
}

inline constexpr double kProbClamp = 1e-6;

// alpha * ||Yt o -log p||_1 + beta * ||(1-Yt) o -log(1-p)||_1 with p clamped
// away from {0,1}. Zero exactly when the (binary) target is matched.
template <class DerP, class DerY>
double weighted_bce(const Eigen::ArrayBase<DerP>& pred,
                    const Eigen::ArrayBase<DerY>& y_soft, double alpha,
                    double beta) {
  if (pred.rows() != y_soft.rows() || pred.cols() != y_soft.cols())
    throw ShapeError("weighted_bce shape mismatch");
  if (!pred.derived().isFinite().all() || !y_soft.derived().isFinite().all())
    throw NumericError("weighted_bce received non-finite values");
  const auto p = pred.derived()
                     .template cast<double>()
                     .max(kProbClamp)
                     .min(1.0 - kProbClamp);
  const auto yt = y_soft.derived().template cast<double>();
  const double pos = (yt * p.log()).sum();
  const double neg = ((1.0 - yt) * (1.0 - p).log()).sum();
  return -(alpha * pos + beta * neg);
}

// dL/dp for weighted_bce; zero where the clamp is active.
template <class S>
Plane<S> weighted_bce_grad(const Plane<S>& pred, const Plane<S>& y_soft,
                           double alpha, double beta) {
  Plane<S> g(pred.rows(), pred.cols());
  for (Index i = 0; i < pred.size(); ++i) {
    const double p = pred(i);
    if (p < kProbClamp || p > 1.0 - kProbClamp) {
      g(i) = S(0);
      continue;
    }
    const double yt = y_soft(i);
    g(i) = S(-alpha * yt / p + beta * (1.0 - yt) / (1.0 - p));
  }
  return g;
}

namespace detail {

template <class S>
using RowArray = Eigen::Array<S, 1, Eigen::Dynamic>;

template <class S>
Eigen::Map<const RowArray<S>> image_row(const FeatureMap<S>& f, Index b) {
  return Eigen::Map<const RowArray<S>>(f.data.data() + b * f.pixels(),
                                       f.pixels());
}

template <class S>
Eigen::Map<RowArray<S>> image_row(FeatureMap<S>& f, Index b) {
  return Eigen::Map<RowArray<S>>(f.data.data() + b * f.pixels(), f.pixels());
}

template <class S>
Eigen::Map<const RowArray<S>> plane_row(const Plane<S>& p) {
  return Eigen::Map<const RowArray<S>>(p.data(), p.size());
}

}  // namespace detail

// Sum of the 2T side terms (through sigmoid) plus the fused term, all against
// the same per-image soft target and alpha/beta pair.
template <class S>
double total_losses(const nets::ForwardResult<S>& fwd, const Plane<S>& y_hard,
                    const Plane<S>& y_soft, double lambda, Index image = 0) {
  const auto [alpha, beta] = alpha_beta(y_hard, y_soft, lambda);
  const auto yt = detail::plane_row(y_soft);
  double loss = weighted_bce(detail::image_row(fwd.fused, image), yt, alpha, beta);
  auto side_term = [&](const FeatureMap<S>& side) {
    const auto logits = detail::image_row(side, image);
    const detail::RowArray<S> p = logits.unaryExpr([](S v) {
      return v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                       : S(std::exp(v) / (S(1) + std::exp(v)));
    });
    loss += weighted_bce(p, yt, alpha, beta);
  };
  for (const auto& s : fwd.f2c_side) side_term(s);
  for (const auto& s : fwd.c2f_side) side_term(s);
  return loss;
}

template <class S>
using RowArray = detail::RowArray<S>;

// Per-batch objective plus gradients shaped for EdgeNet::backward. Each
// image's 2T+1 terms share that image's alpha/beta; `scale` multiplies the
// gradient (the accumulation-window average).
template <class S>
struct BatchLoss {
  double total = 0.0;  // unscaled sum over the batch
  FeatureMap<S> dfused;
  std::vector<FeatureMap<S>> dsides_f2c, dsides_c2f;
};

template <class S>
BatchLoss<S> batch_loss_grads(const nets::ForwardResult<S>& fwd,
                              const std::vector<Plane<S>>& y_hard,
                              const std::vector<Plane<S>>& y_soft,
                              double lambda, double scale) {
  const Index batch = fwd.fused.batch;
  const Index n = fwd.fused.pixels();
  if (Index(y_hard.size()) != batch || Index(y_soft.size()) != batch)
    throw ShapeError("batch target count mismatch");

  BatchLoss<S> out;
  out.dfused = fwd.fused;
  out.dfused.data.setZero();
  out.dsides_f2c.resize(fwd.f2c_side.size());
  out.dsides_c2f.resize(fwd.c2f_side.size());
  for (std::size_t t = 0; t < fwd.f2c_side.size(); ++t) {
    out.dsides_f2c[t] = fwd.f2c_side[t];
    out.dsides_f2c[t].data.setZero();
    out.dsides_c2f[t] = fwd.c2f_side[t];
    out.dsides_c2f[t].data.setZero();
  }

  for (Index b = 0; b < batch; ++b) {
    const auto [alpha, beta] = alpha_beta(y_hard[b], y_soft[b], lambda);
    const auto yt = detail::plane_row(y_soft[b]);

    {  // fused term: gradient w.r.t. the post-activation probability
      const auto p = detail::image_row(fwd.fused, b);
      out.total += weighted_bce(p, yt, alpha, beta);
      auto g = detail::image_row(out.dfused, b);
      for (Index i = 0; i < n; ++i) {
        const double pv = p(i);
        if (pv < kProbClamp || pv > 1.0 - kProbClamp) {
          g(i) = S(0);
          continue;
        }
        g(i) = S(scale * (-alpha * yt(i) / pv + beta * (1.0 - yt(i)) / (1.0 - pv)));
      }
    }

    auto side_term = [&](const FeatureMap<S>& side, FeatureMap<S>& dside) {
      const auto logits = detail::image_row(side, b);
      auto g = detail::image_row(dside, b);
      double pos = 0.0, neg = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double z = logits(i);
        const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                  : std::exp(z) / (1.0 + std::exp(z));
        const double pc = std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
        const double yv = yt(i);
        pos += yv * std::log(pc);
        neg += (1.0 - yv) * std::log(1.0 - pc);
        // d/dz of the clamped BCE: the sigmoid chain cancels the 1/p factors.
        double dz = 0.0;
        if (p >= kProbClamp && p <= 1.0 - kProbClamp)
          dz = -alpha * yv * (1.0 - p) + beta * (1.0 - yv) * p;
        g(i) = S(scale * dz);
      }
      out.total += -(alpha * pos + beta * neg);
    };
    for (std::size_t t = 0; t < fwd.f2c_side.size(); ++t) {
      side_term(fwd.f2c_side[t], out.dsides_f2c[t]);
      side_term(fwd.c2f_side[t], out.dsides_c2f[t]);
    }
  }
  return out;
}

}  // namespace coedge::train
