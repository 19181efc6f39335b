#pragma once

// Dense conv/pool/resize kernels with explicit backward passes. Parameters
// live in small param structs; every application site owns a ctx holding the
// caches the backward pass needs, so parameter-sharing across recurrent steps
// falls out naturally (multiple ctxs, one param struct whose gradient
// accumulates over applications).
//
// Feature maps are (channels x batch*h*w) matrices; 3x3 convolution is an
// im2col gather followed by one GEMM per layer application.

#include "coedge/core.hpp"

namespace coedge::nets {

// ---------------------------------------------------------------------------
// im2col / col2im style shifted copies.
//
// dst row-block k (size C) at pixel (y,x) holds X at (y+dy_k, x+dx_k), zero
// outside the image. Offsets k = 3*(dy+1) + (dx+1).

template <class S>
void gather_shifted(const FeatureMap<S>& x, int dy, int dx,
                    Eigen::Block<Matrix<S>> dst) {
  const Index h = x.h, w = x.w, c = x.channels;
  for (Index b = 0; b < x.batch; ++b) {
    const Index base = b * h * w;
    for (Index xo = 0; xo < w; ++xo) {
      const Index xi = xo + dx;
      const Index dst_col = base + xo * h;
      if (xi < 0 || xi >= w) {
        dst.middleCols(dst_col, h).setZero();
        continue;
      }
      const Index src_col = base + xi * h;
      const Index lo = std::max<Index>(0, -dy);
      const Index hi = std::min<Index>(h - 1, h - 1 - dy);
      if (lo > 0) dst.middleCols(dst_col, lo).setZero();
      if (hi < h - 1) dst.middleCols(dst_col + hi + 1, h - 1 - hi).setZero();
      if (hi >= lo)
        dst.middleCols(dst_col + lo, hi - lo + 1) =
            x.data.middleCols(src_col + lo + dy, hi - lo + 1);
    }
  }
}

// dX += shifted scatter of src (transpose of gather_shifted).
template <class S>
void scatter_shifted_add(FeatureMap<S>& dx, int dy, int dx_off,
                         const Eigen::Block<const Matrix<S>>& src) {
  const Index h = dx.h, w = dx.w;
  for (Index b = 0; b < dx.batch; ++b) {
    const Index base = b * h * w;
    for (Index xo = 0; xo < w; ++xo) {
      const Index xi = xo + dx_off;
      if (xi < 0 || xi >= w) continue;
      const Index lo = std::max<Index>(0, -dy);
      const Index hi = std::min<Index>(h - 1, h - 1 - dy);
      if (hi >= lo)
        dx.data.middleCols(base + xi * h + lo + dy, hi - lo + 1) +=
            src.middleCols(base + xo * h + lo, hi - lo + 1);
    }
  }
}

// ---------------------------------------------------------------------------
// Convolution (1x1 or 3x3, stride 1, same padding).

template <class S>
struct ConvParam {
  Index in_ch = 0, out_ch = 0, ksize = 1;
  Matrix<S> weight;  // (out_ch, ksize*ksize*in_ch)
  Vector<S> bias;
  Matrix<S> grad_weight;
  Vector<S> grad_bias;

  void init(Index in, Index out, Index k) {
    in_ch = in;
    out_ch = out;
    ksize = k;
    weight = Matrix<S>::Zero(out, k * k * in);
    bias = Vector<S>::Zero(out);
    grad_weight = Matrix<S>::Zero(out, k * k * in);
    grad_bias = Vector<S>::Zero(out);
  }

  void init_he(Rng& rng, double gain = 2.0) {
    const double stddev = std::sqrt(gain / double(weight.cols()));
    for (Index j = 0; j < weight.cols(); ++j)
      for (Index i = 0; i < weight.rows(); ++i)
        weight(i, j) = S(rng.normal() * stddev);
    bias.setZero();
  }

  void zero_grad() {
    grad_weight.setZero();
    grad_bias.setZero();
  }

  Index count() const { return weight.size() + bias.size(); }
};

template <class S>
struct ConvCtx {
  Matrix<S> patches;  // im2col cache (3x3) or input copy (1x1)
};

template <class S>
void conv_forward(const ConvParam<S>& p, ConvCtx<S>& ctx, const FeatureMap<S>& x,
                  FeatureMap<S>& y) {
  if (x.channels != p.in_ch) throw ShapeError("conv input channel mismatch");
  y.channels = p.out_ch;
  y.batch = x.batch;
  y.h = x.h;
  y.w = x.w;
  if (p.ksize == 1) {
    ctx.patches = x.data;
    y.data.noalias() = p.weight * x.data;
  } else {
    ctx.patches.resize(9 * p.in_ch, x.cols());
    for (int k = 0; k < 9; ++k)
      gather_shifted(x, k / 3 - 1, k % 3 - 1,
                     ctx.patches.middleRows(k * p.in_ch, p.in_ch));
    y.data.noalias() = p.weight * ctx.patches;
  }
  y.data.colwise() += p.bias;
}

// Accumulates parameter gradients; dx is overwritten.
template <class S>
void conv_backward(ConvParam<S>& p, const ConvCtx<S>& ctx, const FeatureMap<S>& dy,
                   FeatureMap<S>& dx) {
  p.grad_weight.noalias() += dy.data * ctx.patches.transpose();
  p.grad_bias.noalias() += dy.data.rowwise().sum();
  dx.channels = p.in_ch;
  dx.batch = dy.batch;
  dx.h = dy.h;
  dx.w = dy.w;
  if (p.ksize == 1) {
    dx.data.noalias() = p.weight.transpose() * dy.data;
  } else {
    Matrix<S> dpatches = p.weight.transpose() * dy.data;
    dx.data.setZero(p.in_ch, dy.cols());
    const Matrix<S>& cref = dpatches;
    for (int k = 0; k < 9; ++k)
      scatter_shifted_add(dx, k / 3 - 1, k % 3 - 1,
                          cref.middleRows(k * p.in_ch, p.in_ch));
  }
}

// ---------------------------------------------------------------------------
// ReLU.

template <class S>
struct ReluCtx {
  Matrix<S> mask;
};

template <class S>
void relu_forward(ReluCtx<S>& ctx, FeatureMap<S>& x) {
  ctx.mask = (x.data.array() > S(0)).template cast<S>().matrix();
  x.data = x.data.cwiseProduct(ctx.mask);
}

template <class S>
void relu_backward(const ReluCtx<S>& ctx, FeatureMap<S>& dx) {
  dx.data = dx.data.cwiseProduct(ctx.mask);
}

// ---------------------------------------------------------------------------
// 2x max pooling, ceil-mode output sizes.

inline Index pooled_extent(Index n) { return (n + 1) / 2; }

template <class S>
struct PoolCtx {
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> argsrc;
  Index in_h = 0, in_w = 0, in_batch = 0;
};

template <class S>
void maxpool2_forward(PoolCtx<S>& ctx, const FeatureMap<S>& x, FeatureMap<S>& y) {
  const Index ho = pooled_extent(x.h), wo = pooled_extent(x.w);
  y.channels = x.channels;
  y.batch = x.batch;
  y.h = ho;
  y.w = wo;
  y.data.resize(x.channels, x.batch * ho * wo);
  ctx.argsrc.resize(x.channels, x.batch * ho * wo);
  ctx.in_h = x.h;
  ctx.in_w = x.w;
  ctx.in_batch = x.batch;
  for (Index b = 0; b < x.batch; ++b) {
    const Index ibase = b * x.h * x.w, obase = b * ho * wo;
    for (Index xo = 0; xo < wo; ++xo)
      for (Index yo = 0; yo < ho; ++yo) {
        const Index oc = obase + xo * ho + yo;
        bool first = true;
        for (Index dxp = 0; dxp < 2; ++dxp) {
          const Index xi = 2 * xo + dxp;
          if (xi >= x.w) continue;
          for (Index dyp = 0; dyp < 2; ++dyp) {
            const Index yi = 2 * yo + dyp;
            if (yi >= x.h) continue;
            const Index ic = ibase + xi * x.h + yi;
            if (first) {
              y.data.col(oc) = x.data.col(ic);
              ctx.argsrc.col(oc).setConstant(std::int32_t(ic));
              first = false;
            } else {
              for (Index c = 0; c < x.channels; ++c)
                if (x.data(c, ic) > y.data(c, oc)) {
                  y.data(c, oc) = x.data(c, ic);
                  ctx.argsrc(c, oc) = std::int32_t(ic);
                }
            }
          }
        }
      }
  }
}

template <class S>
void maxpool2_backward(const PoolCtx<S>& ctx, const FeatureMap<S>& dy,
                       FeatureMap<S>& dx) {
  dx.channels = dy.channels;
  dx.batch = ctx.in_batch;
  dx.h = ctx.in_h;
  dx.w = ctx.in_w;
  dx.data.setZero(dy.channels, ctx.in_batch * ctx.in_h * ctx.in_w);
  for (Index col = 0; col < dy.cols(); ++col)
    for (Index c = 0; c < dy.channels; ++c)
      dx.data(c, ctx.argsrc(c, col)) += dy.data(c, col);
}

// ---------------------------------------------------------------------------
// Bilinear resize to an arbitrary target extent (half-pixel centers).

struct ResizePlanAxis {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

inline ResizePlanAxis resize_axis(Index in_n, Index out_n) {
  ResizePlanAxis plan;
  plan.lo.resize(out_n);
  plan.hi.resize(out_n);
  plan.frac.resize(out_n);
  const double scale = double(in_n) / double(out_n);
  for (Index o = 0; o < out_n; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    src = std::min(std::max(src, 0.0), double(in_n - 1));
    const Index l = Index(std::floor(src));
    plan.lo[o] = l;
    plan.hi[o] = std::min(l + 1, in_n - 1);
    plan.frac[o] = src - double(l);
  }
  return plan;
}

template <class S>
struct ResizeCtx {
  ResizePlanAxis ys, xs;
  Index in_h = 0, in_w = 0, in_batch = 0, out_h = 0, out_w = 0;

  void plan(Index ih, Index iw, Index oh, Index ow, Index batch) {
    if (ih != in_h || oh != out_h) ys = resize_axis(ih, oh);
    if (iw != in_w || ow != out_w) xs = resize_axis(iw, ow);
    in_h = ih;
    in_w = iw;
    out_h = oh;
    out_w = ow;
    in_batch = batch;
  }
};

template <class S>
void resize_forward(ResizeCtx<S>& ctx, const FeatureMap<S>& x, Index oh, Index ow,
                    FeatureMap<S>& y) {
  ctx.plan(x.h, x.w, oh, ow, x.batch);
  y.channels = x.channels;
  y.batch = x.batch;
  y.h = oh;
  y.w = ow;
  y.data.resize(x.channels, x.batch * oh * ow);
  for (Index b = 0; b < x.batch; ++b) {
    const Index ibase = b * x.h * x.w, obase = b * oh * ow;
    for (Index xo = 0; xo < ow; ++xo) {
      const Index x0 = ctx.xs.lo[xo], x1 = ctx.xs.hi[xo];
      const S fx = S(ctx.xs.frac[xo]);
      for (Index yo = 0; yo < oh; ++yo) {
        const Index y0 = ctx.ys.lo[yo], y1 = ctx.ys.hi[yo];
        const S fy = S(ctx.ys.frac[yo]);
        y.data.col(obase + xo * oh + yo) =
            (S(1) - fy) * ((S(1) - fx) * x.data.col(ibase + x0 * x.h + y0) +
                           fx * x.data.col(ibase + x1 * x.h + y0)) +
            fy * ((S(1) - fx) * x.data.col(ibase + x0 * x.h + y1) +
                  fx * x.data.col(ibase + x1 * x.h + y1));
      }
    }
  }
}

template <class S>
void resize_backward(const ResizeCtx<S>& ctx, const FeatureMap<S>& dy,
                     FeatureMap<S>& dx) {
  dx.channels = dy.channels;
  dx.batch = ctx.in_batch;
  dx.h = ctx.in_h;
  dx.w = ctx.in_w;
  dx.data.setZero(dy.channels, ctx.in_batch * ctx.in_h * ctx.in_w);
  for (Index b = 0; b < dy.batch; ++b) {
    const Index ibase = b * ctx.in_h * ctx.in_w, obase = b * dy.h * dy.w;
    for (Index xo = 0; xo < dy.w; ++xo) {
      const Index x0 = ctx.xs.lo[xo], x1 = ctx.xs.hi[xo];
      const S fx = S(ctx.xs.frac[xo]);
      for (Index yo = 0; yo < dy.h; ++yo) {
        const Index y0 = ctx.ys.lo[yo], y1 = ctx.ys.hi[yo];
        const S fy = S(ctx.ys.frac[yo]);
        const auto g = dy.data.col(obase + xo * dy.h + yo);
        dx.data.col(ibase + x0 * ctx.in_h + y0) += (S(1) - fy) * (S(1) - fx) * g;
        dx.data.col(ibase + x1 * ctx.in_h + y0) += (S(1) - fy) * fx * g;
        dx.data.col(ibase + x0 * ctx.in_h + y1) += fy * (S(1) - fx) * g;
        dx.data.col(ibase + x1 * ctx.in_h + y1) += fy * fx * g;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Residual block: y = relu(x + c2(relu(c1(x)))).

template <class S>
struct ResBlockParam {
  ConvParam<S> c1, c2;

  void init(Index ch) {
    c1.init(ch, ch, 3);
    c2.init(ch, ch, 3);
  }
  void init_he(Rng& rng) {
    c1.init_he(rng);
    c2.init_he(rng);
  }
  void zero_grad() {
    c1.zero_grad();
    c2.zero_grad();
  }
  Index count() const { return c1.count() + c2.count(); }
};

template <class S>
struct ResBlockCtx {
  ConvCtx<S> c1, c2;
  ReluCtx<S> r1, r2;
  FeatureMap<S> mid, dmid;
};

template <class S>
void resblock_forward(const ResBlockParam<S>& p, ResBlockCtx<S>& ctx,
                      const FeatureMap<S>& x, FeatureMap<S>& y) {
  conv_forward(p.c1, ctx.c1, x, ctx.mid);
  relu_forward(ctx.r1, ctx.mid);
  conv_forward(p.c2, ctx.c2, ctx.mid, y);
  y.data += x.data;
  relu_forward(ctx.r2, y);
}

template <class S>
void resblock_backward(ResBlockParam<S>& p, ResBlockCtx<S>& ctx,
                       FeatureMap<S>& dy, FeatureMap<S>& dx) {
  relu_backward(ctx.r2, dy);
  conv_backward(p.c2, ctx.c2, dy, ctx.dmid);
  relu_backward(ctx.r1, ctx.dmid);
  conv_backward(p.c1, ctx.c1, ctx.dmid, dx);
  dx.data += dy.data;  // identity skip
}

}  // namespace coedge::nets
