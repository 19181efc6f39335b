#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coedge/losses.hpp"
#include "coedge/optimizer.hpp"
#include "oracles.hpp"

using namespace coedge;
using namespace coedge::train;

TEST_CASE("eta_schedule ramps linearly from zero") {
  LossConfig cfg;
  cfg.eta_final = 0.8;
  cfg.epochs = 30;
  CHECK(eta_schedule(0, cfg) == 0.0);
  CHECK(eta_schedule(30, cfg) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(eta_schedule(15, cfg) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_THROWS_AS(eta_schedule(31, cfg), ConfigError);
}

TEST_CASE("soft_target blends and stays in range") {
  Plane<double> m = Plane<double>::Constant(2, 2, 0.6);
  Plane<double> y = Plane<double>::Constant(2, 2, 1.0);
  CHECK((soft_target<double>(m, y, 0.0) - y).abs().maxCoeff() == 0.0);
  CHECK((soft_target<double>(m, y, 1.0) - m).abs().maxCoeff() == 0.0);
  CHECK(soft_target<double>(m, y, 0.5)(0, 0) ==
        doctest::Approx(0.8).epsilon(1e-12));

  Rng rng(4);
  Plane<double> mr(5, 5), yr(5, 5);
  for (Index i = 0; i < mr.size(); ++i) {
    mr(i) = rng.uniform();
    yr(i) = rng.bernoulli(0.3) ? 1.0 : 0.0;
  }
  for (double eta : {0.1, 0.5, 0.9}) {
    auto s = soft_target<double>(mr, yr, eta);
    CHECK(s.minCoeff() >= 0.0);
    CHECK(s.maxCoeff() <= 1.0);
  }
}

TEST_CASE("alpha_beta arithmetic and shared denominator") {
  Plane<double> y = Plane<double>::Zero(10, 10);
  for (Index i = 0; i < 20; ++i) y(i / 10, i % 10) = 1.0;
  auto [alpha, beta] = alpha_beta(y, y, 1.1);
  CHECK(alpha == doctest::Approx(0.22).epsilon(1e-12));
  CHECK(beta == doctest::Approx(0.80).epsilon(1e-12));

  auto [a1, b1] = alpha_beta(y, y, 1.0);
  CHECK(a1 + b1 == doctest::Approx(1.0).epsilon(1e-12));

  // independent reduction oracle on fractional soft targets
  Rng rng(7);
  Plane<double> ys(10, 10);
  for (Index i = 0; i < ys.size(); ++i) ys(i) = rng.uniform();
  auto [a2, b2] = alpha_beta(y, ys, 1.3);
  double pos = 0.0, neg = 0.0;
  for (Index r = 0; r < 10; ++r)
    for (Index c = 0; c < 10; ++c) {
      pos += y(r, c) * ys(r, c);
      neg += (1.0 - y(r, c)) * (1.0 - ys(r, c));
    }
  CHECK(a2 == doctest::Approx(1.3 * pos / (pos + neg)).epsilon(1e-12));
  CHECK(b2 == doctest::Approx(neg / (pos + neg)).epsilon(1e-12));

  // all-zero denominator is defined as zero weights
  Plane<double> ones = Plane<double>::Ones(3, 3);
  Plane<double> zeros = Plane<double>::Zero(3, 3);
  auto [a3, b3] = alpha_beta(ones, zeros, 1.0);
  CHECK(a3 == 0.0);
  CHECK(b3 == 0.0);
}

TEST_CASE("weighted_bce values") {
  // perfect prediction: only the clamp contributes
  Plane<double> ones = Plane<double>::Ones(4, 4);
  CHECK(weighted_bce(ones, ones, 0.5, 0.5) <= 2e-5);
  CHECK(weighted_bce(ones, ones, 0.5, 0.5) >= 0.0);

  // flat 0.5 prediction on a binary target: (alpha*P + beta*N) log 2
  Plane<double> y = Plane<double>::Zero(4, 4);
  y(0, 0) = y(1, 1) = y(2, 2) = 1.0;
  Plane<double> half = Plane<double>::Constant(4, 4, 0.5);
  const double expect = (0.7 * 3 + 0.3 * 13) * std::log(2.0);
  CHECK(weighted_bce(half, y, 0.7, 0.3) ==
        doctest::Approx(expect).epsilon(1e-12));

  Plane<double> nan_pred = half;
  nan_pred(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(weighted_bce(nan_pred, y, 1.0, 1.0), NumericError);
}

TEST_CASE("total_losses structural count and term oracle") {
  // T = 1, fused identical to sigma(side): total = 3x the single term
  Rng rng(3);
  nets::ForwardResult<double> fwd;
  FeatureMap<double> side(1, 1, 6, 6);
  for (Index i = 0; i < side.data.size(); ++i) side.data(0, i) = rng.normal();
  fwd.f2c_side = {side};
  fwd.c2f_side = {side};
  fwd.fused = side;
  fwd.fused.data = side.data.unaryExpr(
      [](double v) { return 1.0 / (1.0 + std::exp(-v)); });

  Plane<double> y(6, 6), ys(6, 6);
  for (Index i = 0; i < y.size(); ++i) {
    y(i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
    ys(i) = rng.uniform();
  }
  const double total = total_losses(fwd, y, ys, 1.1);
  auto [alpha, beta] = alpha_beta(y, ys, 1.1);
  Plane<double> p(6, 6);
  for (Index i = 0; i < p.size(); ++i) p(i) = fwd.fused.data(0, i);
  const double single = weighted_bce(p, ys, alpha, beta);
  CHECK(total == doctest::Approx(3.0 * single).epsilon(1e-12));

  // independent per-term re-summation on a two-step result
  nets::ForwardResult<double> fwd2;
  for (int t = 0; t < 2; ++t) {
    FeatureMap<double> a(1, 1, 6, 6), b(1, 1, 6, 6);
    for (Index i = 0; i < a.data.size(); ++i) {
      a.data(0, i) = rng.normal();
      b.data(0, i) = rng.normal();
    }
    fwd2.f2c_side.push_back(a);
    fwd2.c2f_side.push_back(b);
  }
  fwd2.fused = FeatureMap<double>(1, 1, 6, 6);
  for (Index i = 0; i < 36; ++i) fwd2.fused.data(0, i) = 0.1 + 0.8 * rng.uniform();

  double oracle = 0.0;
  {
    auto [a2, b2] = alpha_beta(y, ys, 1.1);
    auto bce_of = [&](const FeatureMap<double>& logits) {
      double acc = 0.0;
      for (Index i = 0; i < 36; ++i) {
        const double pv = 1.0 / (1.0 + std::exp(-logits.data(0, i)));
        acc -= a2 * ys(i) * std::log(pv) + b2 * (1.0 - ys(i)) * std::log(1.0 - pv);
      }
      return acc;
    };
    for (int t = 0; t < 2; ++t) oracle += bce_of(fwd2.f2c_side[t]) + bce_of(fwd2.c2f_side[t]);
    for (Index i = 0; i < 36; ++i) {
      const double pv = fwd2.fused.data(0, i);
      oracle -= a2 * ys(i) * std::log(pv) + b2 * (1.0 - ys(i)) * std::log(1.0 - pv);
    }
  }
  CHECK(total_losses(fwd2, y, ys, 1.1) ==
        doctest::Approx(oracle).epsilon(1e-10));

  // everything perfect: total ~ 0
  nets::ForwardResult<double> perfect;
  FeatureMap<double> big(1, 1, 6, 6), fusedp(1, 1, 6, 6);
  for (Index i = 0; i < 36; ++i) {
    big.data(0, i) = y(i) > 0.5 ? 40.0 : -40.0;
    fusedp.data(0, i) = y(i) > 0.5 ? 1.0 : 0.0;
  }
  perfect.f2c_side = {big};
  perfect.c2f_side = {big};
  perfect.fused = fusedp;
  CHECK(total_losses(perfect, y, y, 1.1) <= 1e-4);
}

TEST_CASE("lr_at warmup, peak, decay") {
  OptimizerConfig cfg;
  cfg.peak_lr = 0.001;
  cfg.warmup_epochs = 4;
  CHECK(lr_at(4, cfg, 30) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at(0, cfg, 30) == 0.0);
  CHECK(lr_at(30, cfg, 30) == 0.0);
  CHECK(lr_at(2, cfg, 30) == doctest::Approx(0.0005).epsilon(1e-12));
  CHECK(lr_at(17, cfg, 30) == doctest::Approx(0.001 * 13.0 / 26.0).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(-1, cfg, 30), ConfigError);
}

TEST_CASE("agc_clip branches and post-condition") {
  ParameterVector<double> params, grads;
  auto& w = params.add("w", {2, 3});
  w.values << 1.0, 0.0, 0.0, 0.0, 0.0, 0.0;  // row 0 norm 1 (col-major!)
  auto& g = grads.add("w", {2, 3});
  g.values << 1.0, 0.0, 0.0, 0.0, 0.0, 0.0;

  // no-clip branch: tiny gradient
  auto& b = params.add("b", {2});
  b.values << 0.5, 0.5;
  auto& gb = grads.add("b", {2});
  gb.values << 100.0, 100.0;

  auto small = grads;
  small.entries[0].values *= 1e-6;
  auto out_small = agc_clip(small, params, 0.01);
  CHECK((out_small.entries[0].values - small.entries[0].values).norm() == 0.0);

  // unit norms with lambda = 0.01: the row shrinks by exactly 0.01
  auto clipped = agc_clip(grads, params, 0.01);
  CHECK(clipped.entries[0].values(0) == doctest::Approx(0.01).epsilon(1e-12));
  // bias entries pass through
  CHECK((clipped.entries[1].values - gb.values).norm() == 0.0);

  // post-condition on random weight matrices
  Rng rng(9);
  ParameterVector<double> p2, g2;
  auto& w2 = p2.add("w", {4, 5});
  auto& gg2 = g2.add("w", {4, 5});
  for (Index i = 0; i < 20; ++i) {
    w2.values(i) = rng.normal() * 0.2;
    gg2.values(i) = rng.normal() * 3.0;
  }
  auto out = agc_clip(g2, p2, 0.01);
  Eigen::Map<Matrix<double>> gm(out.entries[0].values.data(), 4, 5);
  Eigen::Map<Matrix<double>> wm(p2.entries[0].values.data(), 4, 5);
  for (Index r = 0; r < 4; ++r) {
    const double bound = 0.01 * std::max(wm.row(r).norm(), 1e-3) + 1e-9;
    CHECK(gm.row(r).norm() <= bound);
  }
}

TEST_CASE("sgd step identities") {
  ParameterVector<double> params;
  auto& w = params.add("w", {2, 2});
  w.values << 0.3, -0.2, 0.5, 0.1;
  auto zero = zeros_like(params);

  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  auto before = params;
  SgdState<double> sgd = SgdState<double>::make(params);
  sgd.step(params, zero, 0.01, cfg);
  CHECK(bitwise_equal(params, before));  // zero grad, zero decay, from rest

  cfg.weight_decay = 0.001;
  sgd.step(params, zero, 0.01, cfg);
  CHECK(!bitwise_equal(params, before));  // decay alone moves weights
}
