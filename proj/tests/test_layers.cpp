#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coedge/layers.hpp"
#include "oracles.hpp"

using namespace coedge;
using namespace coedge::nets;

namespace {

FeatureMap<double> random_map(Index c, Index b, Index h, Index w, Rng& rng) {
  FeatureMap<double> f(c, b, h, w);
  for (Index i = 0; i < f.data.size(); ++i)
    f.data(i / f.data.cols(), i % f.data.cols()) = rng.normal();
  return f;
}

// Scalar objective used by the finite-difference probes.
double weighted_sum(const FeatureMap<double>& y, const Matrix<double>& coeff) {
  return (y.data.cwiseProduct(coeff)).sum();
}

}  // namespace

TEST_CASE("conv3x3 matches direct convolution") {
  Rng rng(1);
  auto x = random_map(2, 1, 5, 4, rng);
  ConvParam<double> p;
  p.init(2, 3, 3);
  p.init_he(rng);
  ConvCtx<double> ctx;
  FeatureMap<double> y;
  conv_forward(p, ctx, x, y);

  for (Index yo = 0; yo < 5; ++yo)
    for (Index xo = 0; xo < 4; ++xo)
      for (Index co = 0; co < 3; ++co) {
        double acc = p.bias(co);
        for (int k = 0; k < 9; ++k) {
          const Index yi = yo + k / 3 - 1, xi = xo + k % 3 - 1;
          if (yi < 0 || yi >= 5 || xi < 0 || xi >= 4) continue;
          for (Index ci = 0; ci < 2; ++ci)
            acc += p.weight(co, k * 2 + ci) * x.data(ci, xi * 5 + yi);
        }
        CHECK(y.data(co, xo * 5 + yo) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(2);
  for (Index ksize : {Index(1), Index(3)}) {
    auto x = random_map(3, 2, 6, 5, rng);
    ConvParam<double> p;
    p.init(3, 2, ksize);
    p.init_he(rng);
    Matrix<double> coeff = Matrix<double>::Random(2, x.cols());

    ConvCtx<double> ctx;
    FeatureMap<double> y;
    auto eval = [&]() {
      conv_forward(p, ctx, x, y);
      return weighted_sum(y, coeff);
    };
    eval();
    FeatureMap<double> dy = y;
    dy.data = coeff;
    FeatureMap<double> dx;
    p.zero_grad();
    conv_backward(p, ctx, dy, dx);

    for (Index i = 0; i < p.weight.size(); i += 7) {
      const double fd = oracles::central_diff(
          eval, p.weight(i / p.weight.cols(), i % p.weight.cols()), 1e-6);
      CHECK(oracles::rel_error(
                p.grad_weight(i / p.weight.cols(), i % p.weight.cols()), fd) <
            1e-6);
    }
    for (Index i = 0; i < p.bias.size(); ++i) {
      const double fd = oracles::central_diff(eval, p.bias(i), 1e-6);
      CHECK(oracles::rel_error(p.grad_bias(i), fd) < 1e-6);
    }
    for (Index i = 0; i < x.data.size(); i += 11) {
      const double fd = oracles::central_diff(
          eval, x.data(i % x.data.rows(), i / x.data.rows()), 1e-6);
      CHECK(oracles::rel_error(dx.data(i % x.data.rows(), i / x.data.rows()),
                               fd) < 1e-6);
    }
  }
}

TEST_CASE("maxpool handles odd extents and routes gradients to the argmax") {
  Rng rng(3);
  auto x = random_map(2, 2, 5, 7, rng);
  PoolCtx<double> ctx;
  FeatureMap<double> y;
  maxpool2_forward(ctx, x, y);
  CHECK(y.h == 3);
  CHECK(y.w == 4);

  Matrix<double> coeff = Matrix<double>::Random(2, y.cols());
  auto eval = [&]() {
    maxpool2_forward(ctx, x, y);
    return weighted_sum(y, coeff);
  };
  FeatureMap<double> dy = y;
  dy.data = coeff;
  FeatureMap<double> dx;
  maxpool2_backward(ctx, dy, dx);
  for (Index i = 0; i < x.data.size(); i += 5) {
    const Index r = i % x.data.rows(), c = i / x.data.rows();
    const double fd = oracles::central_diff(eval, x.data(r, c), 1e-6);
    CHECK(oracles::rel_error(dx.data(r, c), fd) < 1e-6);
  }
}

TEST_CASE("bilinear resize is exact on constants and differentiable") {
  FeatureMap<double> x(1, 1, 4, 6);
  x.data.setConstant(0.37);
  ResizeCtx<double> ctx;
  FeatureMap<double> y;
  resize_forward(ctx, x, 9, 5, y);
  CHECK(y.data.isApproxToConstant(0.37, 1e-12));

  Rng rng(4);
  auto x2 = random_map(2, 2, 4, 5, rng);
  ResizeCtx<double> ctx2;
  FeatureMap<double> y2;
  Matrix<double> coeff;
  auto eval = [&]() {
    resize_forward(ctx2, x2, 7, 9, y2);
    if (coeff.size() == 0) coeff = Matrix<double>::Random(2, y2.cols());
    return weighted_sum(y2, coeff);
  };
  eval();
  FeatureMap<double> dy = y2;
  dy.data = coeff;
  FeatureMap<double> dx;
  resize_backward(ctx2, dy, dx);
  const Index rows2 = x2.data.rows();
  for (Index i = 0; i < x2.data.size(); i += 3) {
    const Index r = i % rows2, c = i / rows2;
    const double fd = oracles::central_diff(eval, x2.data(r, c), 1e-4);
    CHECK(oracles::rel_error(dx.data(r, c), fd) < 1e-5);
  }
}

TEST_CASE("residual block keeps shapes and differentiates") {
  Rng rng(5);
  auto x = random_map(3, 1, 6, 6, rng);
  ResBlockParam<double> p;
  p.init(3);
  p.init_he(rng);
  ResBlockCtx<double> ctx;
  FeatureMap<double> y;
  Matrix<double> coeff = Matrix<double>::Random(3, x.cols());

  auto eval = [&]() {
    resblock_forward(p, ctx, x, y);
    return weighted_sum(y, coeff);
  };
  eval();
  FeatureMap<double> dy = y;
  dy.data = coeff;
  FeatureMap<double> dx;
  p.zero_grad();
  resblock_backward(p, ctx, dy, dx);

  for (Index i = 0; i < p.c1.weight.size(); i += 13) {
    const Index r = i % p.c1.weight.rows(), c = i / p.c1.weight.rows();
    const double fd = oracles::central_diff(eval, p.c1.weight(r, c), 1e-6);
    CHECK(oracles::rel_error(p.c1.grad_weight(r, c), fd) < 1e-5);
  }
  for (Index i = 0; i < x.data.size(); i += 7) {
    const Index r = i % x.data.rows(), c = i / x.data.rows();
    const double fd = oracles::central_diff(eval, x.data(r, c), 1e-6);
    CHECK(oracles::rel_error(dx.data(r, c), fd) < 1e-5);
  }
}

TEST_CASE("batched evaluation equals per-image evaluation") {
  Rng rng(6);
  auto x = random_map(3, 3, 6, 5, rng);
  ConvParam<double> p;
  p.init(3, 4, 3);
  p.init_he(rng);
  ConvCtx<double> ctx;
  FeatureMap<double> y;
  conv_forward(p, ctx, x, y);

  for (Index b = 0; b < 3; ++b) {
    FeatureMap<double> single(3, 1, 6, 5);
    single.data = x.image(b);
    FeatureMap<double> ys;
    ConvCtx<double> ctxs;
    conv_forward(p, ctxs, single, ys);
    // GEMM blocking differs with column count, so equality is to rounding.
    CHECK((ys.data - y.image(b)).cwiseAbs().maxCoeff() < 1e-14);
  }
}
