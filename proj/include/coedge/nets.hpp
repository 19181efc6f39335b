#pragma once

// The two collaborating architectures. Both share one skeleton: an encoding
// module (conv + two residual blocks), T trunk applications with 2x max
// pooling before every application except the first, two one-channel decoder
// branches per step, bidirectional aggregation of the decoder outputs across
// steps, bilinear upsampling of the aggregated maps to input resolution and a
// final 1x1 fusion convolution. The recurrent flavour shares trunk/decoder
// parameters across all steps and the non-recurrent one gives every scale its
// own, with widths growing as resolution shrinks.

#include "coedge/layers.hpp"
#include "coedge/params.hpp"

namespace coedge::nets {

enum class NetKind { recurrent, nonrecurrent };
enum class SizeClass { tiny, small, normal, large };
enum class OutputActivation { sigmoid, sharpened };

struct NetConfig {
  NetKind kind = NetKind::nonrecurrent;
  int steps = 4;  // recurrences (recurrent) or scales (nonrecurrent)
  std::vector<int> stage_widths;
  int side_channels = 8;
  int blocks_per_stage = 1;
  double dropout_rate = 0.1;
  SizeClass size_class = SizeClass::normal;

  Index min_extent() const { return Index(1) << (steps - 1); }

  void validate() const {
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (stage_widths.empty()) throw ConfigError("stage_widths must be nonempty");
    for (int w : stage_widths)
      if (w <= 0) throw ConfigError("stage widths must be positive");
    if (side_channels <= 0) throw ConfigError("side_channels must be positive");
    if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
    if (kind == NetKind::recurrent) {
      if (stage_widths.size() != 1)
        throw ConfigError("recurrent nets use one shared stage width");
    } else {
      if (Index(stage_widths.size()) != steps)
        throw ConfigError("nonrecurrent nets need one width per scale");
      for (std::size_t i = 1; i < stage_widths.size(); ++i)
        if (stage_widths[i] < stage_widths[i - 1])
          throw ConfigError("nonrecurrent stage widths must be non-decreasing");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("dropout_rate must lie in [0,1)");
  }
};

// Channel progressions tuned against the published per-class budgets for the
// non-recurrent (inference) network; the recurrent partner trades width for
// parameter sharing and stays deliberately compact.
inline NetConfig nonrecurrent_config(SizeClass size_class, int scales = 4) {
  NetConfig c;
  c.kind = NetKind::nonrecurrent;
  c.steps = scales;
  c.size_class = size_class;
  switch (size_class) {
    case SizeClass::tiny:
      c.stage_widths = {8, 20, 44, 102};
      break;
    case SizeClass::small:
      c.stage_widths = {10, 28, 58, 128};
      break;
    case SizeClass::normal:
      c.stage_widths = {12, 34, 70, 156};
      break;
    case SizeClass::large:
      c.stage_widths = {20, 60, 140, 276};
      c.blocks_per_stage = 2;
      c.side_channels = 16;
      break;
  }
  if (scales != 4) {
    // Non-default scale counts extend/trim the progression geometrically.
    std::vector<int> w(scales);
    for (int t = 0; t < scales; ++t) {
      const int last = int(c.stage_widths.size()) - 1;
      w[t] = c.stage_widths[std::min(t, last)];
      if (t > last) w[t] = w[t - 1] * 2;
    }
    c.stage_widths = w;
  }
  return c;
}

inline NetConfig recurrent_config(SizeClass size_class, int steps = 5) {
  NetConfig c;
  c.kind = NetKind::recurrent;
  c.steps = steps;
  c.size_class = size_class;
  switch (size_class) {
    case SizeClass::tiny:
      c.stage_widths = {20};
      break;
    case SizeClass::small:
      c.stage_widths = {24};
      break;
    case SizeClass::normal:
      c.stage_widths = {32};
      break;
    case SizeClass::large:
      c.stage_widths = {56};
      c.side_channels = 16;
      break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Spec-level result type: fused probability plus pre-activation side maps at
// input resolution, one per step and direction.

template <class S>
struct ForwardResult {
  FeatureMap<S> fused;                   // (1, B*H*W), strictly inside (0,1)
  std::vector<FeatureMap<S>> f2c_side;   // T maps, pre-activation
  std::vector<FeatureMap<S>> c2f_side;
};

// Test-time replacement for the final Sigmoid; equals logistic(2(x-0.5)).
template <class S>
S test_activation(S x) {
  const S z = S(2) * (x - S(0.5));
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

template <class S>
Plane<S> test_activation(const Plane<S>& x) {
  return x.unaryExpr([](S v) { return test_activation(v); });
}

// ---------------------------------------------------------------------------

template <class S>
struct EdgeNet {
  NetConfig config;

  ConvParam<S> enc_conv;
  std::array<ResBlockParam<S>, 2> enc_res;
  std::vector<ConvParam<S>> stage_in;                    // nonrecurrent only
  std::vector<std::vector<ResBlockParam<S>>> stage_blocks;  // [site][block]
  struct Branch {
    ConvParam<S> c1, c2;
  };
  std::vector<Branch> f2c_dec, c2f_dec;  // one site (shared) or T sites
  ConvParam<S> fuse_conv;

  explicit EdgeNet(const NetConfig& cfg) : config(cfg) {
    config.validate();
    const int sites = shared() ? 1 : config.steps;
    const int w0 = config.stage_widths.front();
    enc_conv.init(3, w0, 3);
    enc_res[0].init(w0);
    enc_res[1].init(w0);
    if (!shared()) {
      stage_in.resize(sites);
      for (int t = 0; t < sites; ++t)
        stage_in[t].init(t == 0 ? w0 : width(t - 1), width(t), 3);
    }
    stage_blocks.resize(sites);
    for (int t = 0; t < sites; ++t) {
      stage_blocks[t].resize(shared() ? 1 : config.blocks_per_stage);
      for (auto& b : stage_blocks[t]) b.init(width(t));
    }
    f2c_dec.resize(sites);
    c2f_dec.resize(sites);
    for (int t = 0; t < sites; ++t) {
      f2c_dec[t].c1.init(width(t), config.side_channels, 3);
      f2c_dec[t].c2.init(config.side_channels, 1, 1);
      c2f_dec[t].c1.init(width(t), config.side_channels, 3);
      c2f_dec[t].c2.init(config.side_channels, 1, 1);
    }
    fuse_conv.init(2 * config.steps, 1, 1);
    resize_ctxs();
  }

  bool shared() const { return config.kind == NetKind::recurrent; }
  int width(int t) const {
    return config.stage_widths[shared() ? 0 : std::size_t(t)];
  }
  int site(int t) const { return shared() ? 0 : t; }

  // Stable enumeration used by init/export/import/gradients.
  template <class Fn>
  void visit(Fn&& fn) {
    fn("enc.conv", enc_conv);
    fn("enc.res1.c1", enc_res[0].c1);
    fn("enc.res1.c2", enc_res[0].c2);
    fn("enc.res2.c1", enc_res[1].c1);
    fn("enc.res2.c2", enc_res[1].c2);
    const int sites = shared() ? 1 : config.steps;
    for (int t = 0; t < sites; ++t) {
      const std::string p =
          shared() ? std::string("rec.") : "stage" + std::to_string(t + 1) + ".";
      if (!shared()) fn(p + "in", stage_in[t]);
      for (std::size_t bi = 0; bi < stage_blocks[t].size(); ++bi) {
        const std::string bp = p + "b" + std::to_string(bi + 1) + ".";
        fn(bp + "c1", stage_blocks[t][bi].c1);
        fn(bp + "c2", stage_blocks[t][bi].c2);
      }
      fn(p + "f2c.c1", f2c_dec[t].c1);
      fn(p + "f2c.c2", f2c_dec[t].c2);
      fn(p + "c2f.c1", c2f_dec[t].c1);
      fn(p + "c2f.c2", c2f_dec[t].c2);
    }
    fn("fuse", fuse_conv);
  }

  void init(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x1417ull));
    visit([&](const std::string& name, ConvParam<S>& c) {
      // One-channel heads are not followed by a ReLU and get unit gain.
      const bool head = name == "fuse" || name.ends_with("f2c.c2") ||
                        name.ends_with("c2f.c2");
      c.init_he(rng, head ? 1.0 : 2.0);
    });
  }

  Index parameter_count() {
    Index n = 0;
    visit([&](const std::string&, ConvParam<S>& c) { n += c.count(); });
    return n;
  }

  ParameterVector<S> params() {
    ParameterVector<S> pv;
    visit([&](const std::string& name, ConvParam<S>& c) {
      auto& w = pv.add(name + ".w", {c.weight.rows(), c.weight.cols()});
      Eigen::Map<Matrix<S>>(w.values.data(), c.weight.rows(), c.weight.cols()) =
          c.weight;
      auto& b = pv.add(name + ".b", {c.bias.size()});
      b.values = c.bias;
    });
    return pv;
  }

  void set_params(const ParameterVector<S>& pv) {
    std::size_t i = 0;
    visit([&](const std::string& name, ConvParam<S>& c) {
      if (i + 2 > pv.entries.size())
        throw ShapeError("parameter vector is missing entries");
      const auto& w = pv.entries[i++];
      const auto& b = pv.entries[i++];
      if (w.name != name + ".w" || b.name != name + ".b" ||
          w.values.size() != c.weight.size() || b.values.size() != c.bias.size())
        throw ShapeError("parameter vector does not match network: " + name);
      c.weight = Eigen::Map<const Matrix<S>>(w.values.data(), c.weight.rows(),
                                             c.weight.cols());
      c.bias = b.values;
    });
    if (i != pv.entries.size())
      throw ShapeError("parameter vector has extra entries");
  }

  ParameterVector<S> grads() {
    ParameterVector<S> pv;
    visit([&](const std::string& name, ConvParam<S>& c) {
      auto& w = pv.add(name + ".w", {c.grad_weight.rows(), c.grad_weight.cols()});
      Eigen::Map<Matrix<S>>(w.values.data(), c.grad_weight.rows(),
                            c.grad_weight.cols()) = c.grad_weight;
      auto& b = pv.add(name + ".b", {c.grad_bias.size()});
      b.values = c.grad_bias;
    });
    return pv;
  }

  void zero_grad() {
    visit([&](const std::string&, ConvParam<S>& c) { c.zero_grad(); });
  }

  // --- forward state -------------------------------------------------------

  struct BranchCtx {
    ConvCtx<S> c1, c2;
    ReluCtx<S> r;
    FeatureMap<S> mid, dmid;
  };

  ConvCtx<S> enc_conv_ctx;
  ReluCtx<S> enc_relu_ctx;
  std::array<ResBlockCtx<S>, 2> enc_res_ctx;
  std::vector<ConvCtx<S>> stage_in_ctx;
  std::vector<ReluCtx<S>> stage_in_relu_ctx;
  std::vector<std::vector<ResBlockCtx<S>>> stage_blocks_ctx;
  std::vector<PoolCtx<S>> pool_ctx;
  std::vector<BranchCtx> f2c_ctx, c2f_ctx;
  std::vector<PoolCtx<S>> aggr_down_ctx;
  std::vector<ResizeCtx<S>> aggr_up_ctx;
  std::vector<ResizeCtx<S>> side_up_f2c_ctx, side_up_c2f_ctx;
  ConvCtx<S> fuse_ctx;

  FeatureMap<S> enc_out;
  std::vector<FeatureMap<S>> step_in, step_out;
  std::vector<FeatureMap<S>> z_f2c, z_c2f, f_f2c, f_c2f;
  std::vector<FeatureMap<S>> side_full_f2c, side_full_c2f;
  FeatureMap<S> fusion_in, fused_prob;
  OutputActivation last_act = OutputActivation::sigmoid;

  void resize_ctxs() {
    const int T = config.steps;
    stage_in_ctx.resize(shared() ? 0 : T);
    stage_in_relu_ctx.resize(shared() ? 0 : T);
    stage_blocks_ctx.assign(T, std::vector<ResBlockCtx<S>>(
                                   shared() ? 1 : config.blocks_per_stage));
    pool_ctx.resize(T > 1 ? T - 1 : 0);
    f2c_ctx.resize(T);
    c2f_ctx.resize(T);
    aggr_down_ctx.resize(T > 1 ? T - 1 : 0);
    aggr_up_ctx.resize(T > 1 ? T - 1 : 0);
    side_up_f2c_ctx.resize(T);
    side_up_c2f_ctx.resize(T);
    step_in.resize(T);
    step_out.resize(T);
    z_f2c.resize(T);
    z_c2f.resize(T);
    f_f2c.resize(T);
    f_c2f.resize(T);
    side_full_f2c.resize(T);
    side_full_c2f.resize(T);
  }

  void branch_forward(Branch& br, BranchCtx& ctx, const FeatureMap<S>& x,
                      FeatureMap<S>& z) {
    conv_forward(br.c1, ctx.c1, x, ctx.mid);
    relu_forward(ctx.r, ctx.mid);
    conv_forward(br.c2, ctx.c2, ctx.mid, z);
  }

  void branch_backward(Branch& br, BranchCtx& ctx, const FeatureMap<S>& dz,
                       FeatureMap<S>& dx_accum) {
    conv_backward(br.c2, ctx.c2, dz, ctx.dmid);
    relu_backward(ctx.r, ctx.dmid);
    FeatureMap<S> dx;
    conv_backward(br.c1, ctx.c1, ctx.dmid, dx);
    dx_accum.data += dx.data;
  }

  // Hash of every data-dependent branch decision of the last forward pass
  // (ReLU masks, pooling argmax choices, output clamps). Two parameter points
  // with equal signatures are connected by a smooth segment of the loss,
  // which is what finite-difference gradient checks need to know.
  std::uint64_t topology_signature() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ull;
    };
    auto mix_mask = [&](const Matrix<S>& mask) {
      for (Index i = 0; i < mask.size(); ++i)
        mix(mask(i % mask.rows(), i / mask.rows()) > S(0) ? 0x9E37ull : 0x85EBull);
    };
    auto mix_relu = [&](const ReluCtx<S>& ctx) { mix_mask(ctx.mask); };
    auto mix_pool = [&](const PoolCtx<S>& ctx) {
      for (Index i = 0; i < ctx.argsrc.size(); ++i)
        mix(std::uint64_t(ctx.argsrc(i % ctx.argsrc.rows(), i / ctx.argsrc.rows())));
    };
    mix_relu(enc_relu_ctx);
    for (const auto& ctx : enc_res_ctx) {
      mix_relu(ctx.r1);
      mix_relu(ctx.r2);
    }
    for (const auto& ctx : stage_in_relu_ctx) mix_relu(ctx);
    for (const auto& per_step : stage_blocks_ctx)
      for (const auto& ctx : per_step) {
        mix_relu(ctx.r1);
        mix_relu(ctx.r2);
      }
    for (const auto& ctx : pool_ctx) mix_pool(ctx);
    for (const auto& ctx : aggr_down_ctx) mix_pool(ctx);
    for (const auto& ctx : f2c_ctx) mix_relu(ctx.r);
    for (const auto& ctx : c2f_ctx) mix_relu(ctx.r);
    for (Index i = 0; i < fused_prob.data.cols(); ++i) {
      const S p = fused_prob.data(0, i);
      mix(p <= S(1e-6) ? 1ull : (p >= S(1) - S(1e-6) ? 2ull : 3ull));
    }
    // side logits saturate the loss-side probability clamp at |z| ~ 13.8155
    const S logit_clamp = S(13.815510557964274);
    auto mix_side = [&](const std::vector<FeatureMap<S>>& sides) {
      for (const auto& side : sides)
        for (Index i = 0; i < side.data.cols(); ++i) {
          const S z = side.data(0, i);
          mix(z < -logit_clamp ? 5ull : (z > logit_clamp ? 6ull : 7ull));
        }
    };
    mix_side(side_full_f2c);
    mix_side(side_full_c2f);
    return h;
  }

  ForwardResult<S> forward(const FeatureMap<S>& x,
                           OutputActivation act = OutputActivation::sigmoid) {
    if (x.channels != 3) throw ShapeError("network input must have 3 channels");
    if (x.h < config.min_extent() || x.w < config.min_extent())
      throw ShapeError("input smaller than 2^(T-1); pooling would vanish");
    last_act = act;
    const int T = config.steps;

    conv_forward(enc_conv, enc_conv_ctx, x, enc_out);
    relu_forward(enc_relu_ctx, enc_out);
    FeatureMap<S> tmp;
    resblock_forward(enc_res[0], enc_res_ctx[0], enc_out, tmp);
    resblock_forward(enc_res[1], enc_res_ctx[1], tmp, step_in[0]);

    for (int t = 0; t < T; ++t) {
      if (t > 0) maxpool2_forward(pool_ctx[t - 1], step_out[t - 1], step_in[t]);
      const int s = site(t);
      FeatureMap<S>* cur = &step_in[t];
      FeatureMap<S> staged;
      if (!shared()) {
        conv_forward(stage_in[s], stage_in_ctx[s], *cur, staged);
        relu_forward(stage_in_relu_ctx[s], staged);
        cur = &staged;
      }
      for (std::size_t bi = 0; bi < stage_blocks[s].size(); ++bi) {
        FeatureMap<S> out;
        resblock_forward(stage_blocks[s][bi], stage_blocks_ctx[t][bi], *cur, out);
        step_out[t] = std::move(out);
        cur = &step_out[t];
      }
      branch_forward(f2c_dec[s], f2c_ctx[t], step_out[t], z_f2c[t]);
      branch_forward(c2f_dec[s], c2f_ctx[t], step_out[t], z_c2f[t]);
    }

    // Bidirectional aggregation at native scales.
    f_f2c[0] = z_f2c[0];
    for (int t = 1; t < T; ++t) {
      maxpool2_forward(aggr_down_ctx[t - 1], f_f2c[t - 1], f_f2c[t]);
      if (f_f2c[t].h != z_f2c[t].h || f_f2c[t].w != z_f2c[t].w)
        throw ShapeError("f2c aggregation scale mismatch");
      f_f2c[t].data += z_f2c[t].data;
    }
    f_c2f[T - 1] = z_c2f[T - 1];
    for (int t = T - 2; t >= 0; --t) {
      resize_forward(aggr_up_ctx[t], f_c2f[t + 1], z_c2f[t].h, z_c2f[t].w,
                     f_c2f[t]);
      f_c2f[t].data += z_c2f[t].data;
    }

    for (int t = 0; t < T; ++t) {
      resize_forward(side_up_f2c_ctx[t], f_f2c[t], x.h, x.w, side_full_f2c[t]);
      resize_forward(side_up_c2f_ctx[t], f_c2f[t], x.h, x.w, side_full_c2f[t]);
    }

    fusion_in.channels = 2 * T;
    fusion_in.batch = x.batch;
    fusion_in.h = x.h;
    fusion_in.w = x.w;
    fusion_in.data.resize(2 * T, x.cols());
    for (int t = 0; t < T; ++t) {
      fusion_in.data.row(2 * t) = side_full_f2c[t].data.row(0);
      fusion_in.data.row(2 * t + 1) = side_full_c2f[t].data.row(0);
    }
    conv_forward(fuse_conv, fuse_ctx, fusion_in, fused_prob);
    if (act == OutputActivation::sigmoid) {
      fused_prob.data = fused_prob.data.unaryExpr([](S v) {
        const S p = v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                              : std::exp(v) / (S(1) + std::exp(v));
        return std::min(S(1) - S(1e-6), std::max(S(1e-6), p));
      });
    } else {
      fused_prob.data = fused_prob.data.unaryExpr([](S v) {
        return std::min(S(1) - S(1e-6),
                        std::max(S(1e-6), test_activation(v)));
      });
    }

    ForwardResult<S> result;
    result.fused = fused_prob;
    result.f2c_side = side_full_f2c;
    result.c2f_side = side_full_c2f;
    return result;
  }

  // Gradients flow from d(fused probability) and d(full-resolution
  // pre-activation side maps); parameter gradients accumulate.
  void backward(const FeatureMap<S>& dfused,
                const std::vector<FeatureMap<S>>& dsides_f2c,
                const std::vector<FeatureMap<S>>& dsides_c2f) {
    if (last_act != OutputActivation::sigmoid)
      throw NumericError("backward requires the training activation");
    const int T = config.steps;

    FeatureMap<S> dlogit = fused_prob;
    dlogit.data = dfused.data.cwiseProduct(
        fused_prob.data.cwiseProduct(Matrix<S>::Ones(1, fused_prob.cols()) -
                                     fused_prob.data));
    FeatureMap<S> dfusion_in;
    conv_backward(fuse_conv, fuse_ctx, dlogit, dfusion_in);

    std::vector<FeatureMap<S>> df_f2c(T), df_c2f(T);
    for (int t = 0; t < T; ++t) {
      FeatureMap<S> dside = side_full_f2c[t];
      dside.data = dsides_f2c[t].data;
      dside.data += dfusion_in.data.row(2 * t);
      resize_backward(side_up_f2c_ctx[t], dside, df_f2c[t]);
      dside.data = dsides_c2f[t].data;
      dside.data += dfusion_in.data.row(2 * t + 1);
      resize_backward(side_up_c2f_ctx[t], dside, df_c2f[t]);
    }

    // Reverse the aggregations into decoder-output gradients.
    std::vector<FeatureMap<S>> dz_f2c(T), dz_c2f(T);
    for (int t = T - 1; t >= 1; --t) {
      dz_f2c[t] = df_f2c[t];
      FeatureMap<S> dprev;
      maxpool2_backward(aggr_down_ctx[t - 1], df_f2c[t], dprev);
      df_f2c[t - 1].data += dprev.data;
    }
    dz_f2c[0] = df_f2c[0];
    for (int t = 0; t < T - 1; ++t) {
      dz_c2f[t] = df_c2f[t];
      FeatureMap<S> dnext;
      resize_backward(aggr_up_ctx[t], df_c2f[t], dnext);
      df_c2f[t + 1].data += dnext.data;
    }
    dz_c2f[T - 1] = df_c2f[T - 1];

    // Trunk, latest step first.
    std::vector<FeatureMap<S>> dstep_out(T);
    for (int t = 0; t < T; ++t) {
      dstep_out[t] = step_out[t];
      dstep_out[t].data.setZero();
    }
    for (int t = T - 1; t >= 0; --t) {
      const int s = site(t);
      branch_backward(f2c_dec[s], f2c_ctx[t], dz_f2c[t], dstep_out[t]);
      branch_backward(c2f_dec[s], c2f_ctx[t], dz_c2f[t], dstep_out[t]);

      FeatureMap<S> cur = dstep_out[t];
      for (int bi = int(stage_blocks[s].size()) - 1; bi >= 0; --bi) {
        FeatureMap<S> dx;
        resblock_backward(stage_blocks[s][bi], stage_blocks_ctx[t][bi], cur, dx);
        cur = std::move(dx);
      }
      if (!shared()) {
        relu_backward(stage_in_relu_ctx[s], cur);
        FeatureMap<S> dx;
        conv_backward(stage_in[s], stage_in_ctx[s], cur, dx);
        cur = std::move(dx);
      }
      if (t > 0) {
        FeatureMap<S> dpooled;
        maxpool2_backward(pool_ctx[t - 1], cur, dpooled);
        dstep_out[t - 1].data += dpooled.data;
      } else {
        FeatureMap<S> d2, d1;
        resblock_backward(enc_res[1], enc_res_ctx[1], cur, d2);
        resblock_backward(enc_res[0], enc_res_ctx[0], d2, d1);
        relu_backward(enc_relu_ctx, d1);
        FeatureMap<S> dinput;
        conv_backward(enc_conv, enc_conv_ctx, d1, dinput);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Spec-level operation wrappers.

template <class S>
ForwardResult<S> forward_recurrent(const FeatureMap<S>& x,
                                   const ParameterVector<S>& theta,
                                   const NetConfig& config,
                                   OutputActivation act = OutputActivation::sigmoid) {
  if (config.kind != NetKind::recurrent)
    throw ConfigError("forward_recurrent requires a recurrent config");
  EdgeNet<S> net(config);
  net.set_params(theta);
  return net.forward(x, act);
}

template <class S>
ForwardResult<S> forward_nonrecurrent(const FeatureMap<S>& x,
                                      const ParameterVector<S>& theta,
                                      const NetConfig& config,
                                      OutputActivation act = OutputActivation::sigmoid) {
  if (config.kind != NetKind::nonrecurrent)
    throw ConfigError("forward_nonrecurrent requires a nonrecurrent config");
  EdgeNet<S> net(config);
  net.set_params(theta);
  return net.forward(x, act);
}

// Cross-step aggregation as standalone operations. The down/up callables map
// a feature map onto the scale of the provided target map.
template <class S, class DownFn>
std::vector<FeatureMap<S>> aggregate_f2c(const std::vector<FeatureMap<S>>& z,
                                         DownFn&& down) {
  std::vector<FeatureMap<S>> f(z.size());
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (t == 0) {
      f[t] = z[t];
      continue;
    }
    f[t] = down(f[t - 1]);
    if (f[t].h != z[t].h || f[t].w != z[t].w)
      throw ShapeError("f2c aggregation scale mismatch");
    f[t].data += z[t].data;
  }
  return f;
}

template <class S, class UpFn>
std::vector<FeatureMap<S>> aggregate_c2f(const std::vector<FeatureMap<S>>& z,
                                         UpFn&& up) {
  const std::size_t T = z.size();
  std::vector<FeatureMap<S>> f(T);
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t t = T - 1 - i;
    if (t == T - 1) {
      f[t] = z[t];
      continue;
    }
    f[t] = up(f[t + 1], z[t].h, z[t].w);
    if (f[t].h != z[t].h || f[t].w != z[t].w)
      throw ShapeError("c2f aggregation scale mismatch");
    f[t].data += z[t].data;
  }
  return f;
}

template <class S>
std::vector<FeatureMap<S>> aggregate_f2c(const std::vector<FeatureMap<S>>& z) {
  return aggregate_f2c(z, [](const FeatureMap<S>& x) {
    PoolCtx<S> ctx;
    FeatureMap<S> y;
    maxpool2_forward(ctx, x, y);
    return y;
  });
}

template <class S>
std::vector<FeatureMap<S>> aggregate_c2f(const std::vector<FeatureMap<S>>& z) {
  return aggregate_c2f(z, [](const FeatureMap<S>& x, Index h, Index w) {
    ResizeCtx<S> ctx;
    FeatureMap<S> y;
    resize_forward(ctx, x, h, w, y);
    return y;
  });
}

// ---------------------------------------------------------------------------
// Stochastic parameter sampling.

// Monte-Carlo weight dropout: each value is zeroed independently with
// probability `rate`, survivors are scaled by 1/(1-rate).
template <class S>
ParameterVector<S> sample_dropout_params(const ParameterVector<S>& theta,
                                         double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout rate must lie in [0,1)");
  if (rate == 0.0) return theta;
  ParameterVector<S> out = theta;
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (auto& e : out.entries)
    for (Index i = 0; i < e.values.size(); ++i)
      e.values[i] = rng.uniform() < rate ? S(0) : e.values[i] * keep_scale;
  return out;
}

// Magnitude pruning: values inside the lowest-|v| pool are zeroed with
// probability prune_prob, without rescaling.
template <class S>
ParameterVector<S> prune_params(const ParameterVector<S>& theta,
                                double prune_prob, Rng& rng,
                                double pool_fraction = 0.1) {
  if (!(prune_prob >= 0.0 && prune_prob < 1.0))
    throw ConfigError("prune probability must lie in [0,1)");
  if (!(pool_fraction >= 0.0 && pool_fraction <= 1.0))
    throw ConfigError("prune pool fraction must lie in [0,1]");
  if (prune_prob == 0.0 || pool_fraction == 0.0) return theta;

  std::vector<S> mags;
  mags.reserve(theta.total_count());
  for (const auto& e : theta.entries)
    for (Index i = 0; i < e.values.size(); ++i)
      mags.push_back(std::abs(e.values[i]));
  const std::size_t k = std::size_t(pool_fraction * double(mags.size()));
  if (k == 0) return theta;
  std::nth_element(mags.begin(), mags.begin() + (k - 1), mags.end());
  const S threshold = mags[k - 1];

  ParameterVector<S> out = theta;
  for (auto& e : out.entries)
    for (Index i = 0; i < e.values.size(); ++i)
      if (std::abs(e.values[i]) <= threshold && rng.uniform() < prune_prob)
        e.values[i] = S(0);
  return out;
}

}  // namespace coedge::nets
