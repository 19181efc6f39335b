#pragma once

// SGD with momentum, decoupled-from-bias weight decay, the warmup/decay
// learning-rate ramp and adaptive gradient clipping. All state lives in
// ParameterVectors so checkpoints capture the optimizer exactly.

#include "coedge/params.hpp"

namespace coedge::train {

struct OptimizerConfig {
  double momentum = 0.9;
  double weight_decay = 0.001;
  double peak_lr = 0.001;
  int warmup_epochs = 4;
  int batch_size = 16;  // realised through gradient accumulation
  double agc_lambda = 0.01;

  void validate(int total_epochs) const {
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("momentum must lie in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (peak_lr <= 0.0) throw ConfigError("peak_lr must be positive");
    if (warmup_epochs < 1) throw ConfigError("warmup_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (agc_lambda <= 0.0) throw ConfigError("agc_lambda must be positive");
    if (warmup_epochs >= total_epochs)
      throw ConfigError("warmup_epochs must be smaller than total epochs");
  }
};

// Linear 0 -> peak over the warmup, then linear peak -> 0 over the rest.
// Fractional epochs give the within-epoch ramp used by the training loop.
inline double lr_at(double epoch, const OptimizerConfig& config,
                    int total_epochs) {
  if (epoch < 0.0 || epoch > double(total_epochs))
    throw ConfigError("epoch index outside [0, J]");
  if (epoch <= double(config.warmup_epochs))
    return config.peak_lr * epoch / double(config.warmup_epochs);
  return config.peak_lr * (double(total_epochs) - epoch) /
         double(total_epochs - config.warmup_epochs);
}

// Unit-wise adaptive clipping: every output row of a weight matrix is scaled
// so its gradient norm stays below agc_lambda * max(row norm, 1e-3). Bias
// vectors pass through unclipped.
template <class S>
ParameterVector<S> agc_clip(const ParameterVector<S>& grad,
                            const ParameterVector<S>& params,
                            double agc_lambda) {
  grad.require_same_structure(params);
  constexpr double kEps = 1e-3;
  ParameterVector<S> out = grad;
  for (std::size_t e = 0; e < out.entries.size(); ++e) {
    auto& ge = out.entries[e];
    const auto& pe = params.entries[e];
    if (ge.shape.size() < 2) continue;
    const Index rows = ge.shape[0];
    const Index cols = ge.values.size() / rows;
    Eigen::Map<Matrix<S>> g(ge.values.data(), rows, cols);
    Eigen::Map<const Matrix<S>> w(pe.values.data(), rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const double gn = g.row(r).template cast<double>().norm();
      const double wn =
          std::max(w.row(r).template cast<double>().norm(), kEps);
      if (gn > agc_lambda * wn) g.row(r) *= S(agc_lambda * wn / gn);
    }
  }
  return out;
}

template <class S>
struct SgdState {
  ParameterVector<S> velocity;

  static SgdState make(const ParameterVector<S>& params) {
    return {zeros_like(params)};
  }

  // v <- m*v + g (+ wd*theta on weight entries); theta <- theta - lr*v
  void step(ParameterVector<S>& params, const ParameterVector<S>& grad,
            double lr, const OptimizerConfig& config) {
    params.require_same_structure(grad);
    params.require_same_structure(velocity);
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
      auto& theta = params.entries[e].values;
      auto& v = velocity.entries[e].values;
      const auto& g = grad.entries[e].values;
      const bool is_bias = params.entries[e].shape.size() < 2;
      v = S(config.momentum) * v + g;
      if (!is_bias && config.weight_decay > 0.0)
        v += S(config.weight_decay) * theta;
      theta -= S(lr) * v;
    }
  }
};

}  // namespace coedge::train
