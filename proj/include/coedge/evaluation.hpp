#pragma once

// Boundary-evaluation pipeline: oriented non-maximum suppression, tolerance
// matching between predicted and annotated edge pixels, ODS/OIS F-measures
// over a threshold sweep, multi-scale inference and throughput probes.

#include "coedge/core.hpp"
#include "coedge/layers.hpp"

#include <chrono>
#include <map>

namespace coedge::eval {

struct EvalConfig {
  int thresholds = 99;        // uniform in (0,1)
  double max_dist = 0.0075;   // fraction of the image diagonal (NYUD: 0.011)
  bool apply_thinning = true;

  void validate() const {
    if (thresholds < 1) throw ConfigError("threshold count must be >= 1");
    if (!(max_dist > 0.0 && max_dist < 1.0))
      throw ConfigError("max_dist must lie in (0,1)");
  }
};

struct PrPoint {
  double threshold = 0, precision = 0, recall = 0, f = 0;
};

struct EvalReport {
  double ods_f = 0.0, ois_f = 0.0;
  double ods_threshold = 0.0;
  std::vector<PrPoint> pr_points;
  double throughput_fps = 0.0;
  std::int64_t param_count = 0;
};

inline double f_measure(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

// ---------------------------------------------------------------------------
// Separable triangle smoothing with edge replication.

template <class S>
Plane<S> conv_tri(const Plane<S>& x, int radius) {
  if (radius <= 0) return x;
  const int n = 2 * radius + 1;
  std::vector<double> kernel(n);
  double norm = double(radius + 1) * double(radius + 1);
  for (int i = 0; i <= radius; ++i) {
    kernel[i] = double(i + 1) / norm;
    kernel[n - 1 - i] = kernel[i];
  }
  const Index h = x.rows(), w = x.cols();
  Plane<S> tmp(h, w), out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        Index yy = std::clamp<Index>(y + k, 0, h - 1);
        acc += kernel[k + radius] * double(x(yy, xx));
      }
      tmp(y, xx) = S(acc);
    }
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        Index xc = std::clamp<Index>(xx + k, 0, w - 1);
        acc += kernel[k + radius] * double(tmp(y, xc));
      }
      out(y, xx) = S(acc);
    }
  return out;
}

namespace detail {

// Central differences inside, one-sided at the borders.
template <class S>
void gradient2(const Plane<S>& x, Plane<S>& gx, Plane<S>& gy) {
  const Index h = x.rows(), w = x.cols();
  gx.resize(h, w);
  gy.resize(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx) {
      const Index xl = std::max<Index>(xx - 1, 0), xr = std::min<Index>(xx + 1, w - 1);
      const Index yu = std::max<Index>(y - 1, 0), yd = std::min<Index>(y + 1, h - 1);
      gx(y, xx) = (x(y, xr) - x(y, xl)) / S(xr - xl == 0 ? 1 : xr - xl);
      gy(y, xx) = (x(yd, xx) - x(yu, xx)) / S(yd - yu == 0 ? 1 : yd - yu);
    }
}

template <class S>
double interp_or_zero(const Plane<S>& x, double fy, double fx) {
  if (fy < 0.0 || fx < 0.0 || fy > double(x.rows() - 1) || fx > double(x.cols() - 1))
    return 0.0;
  const Index y0 = Index(fy), x0 = Index(fx);
  const Index y1 = std::min<Index>(y0 + 1, x.rows() - 1);
  const Index x1 = std::min<Index>(x0 + 1, x.cols() - 1);
  const double wy = fy - double(y0), wx = fx - double(x0);
  return (1.0 - wy) * ((1.0 - wx) * x(y0, x0) + wx * x(y0, x1)) +
         wy * ((1.0 - wx) * x(y1, x0) + wx * x(y1, x1));
}

}  // namespace detail

// Oriented NMS: edge-normal orientation is estimated from second derivatives
// of a smoothed copy of the probability map, and a pixel survives only if the
// (lightly smoothed) response is maximal against both interpolated neighbours
// along that normal. Surviving pixels keep their original values.
template <class S>
Plane<S> nms_thin(const Plane<S>& prob) {
  if (!prob.isFinite().all()) throw NumericError("nms_thin on non-finite map");
  const Index h = prob.rows(), w = prob.cols();
  Plane<S> smooth_cmp = conv_tri(prob, 1);
  Plane<S> smooth_o = conv_tri(prob, 4);

  Plane<S> ox, oy, oxx, oxy, oyy, unused;
  detail::gradient2(smooth_o, ox, oy);
  detail::gradient2(ox, oxx, unused);
  detail::gradient2(oy, oxy, oyy);

  Plane<S> out = Plane<S>::Zero(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (prob(y, x) <= S(0)) continue;
      const double num = double(oyy(y, x)) * (oxy(y, x) < 0 ? 1.0 : -1.0);
      double o = std::atan(num / (double(oxx(y, x)) + 1e-5));
      if (o < 0.0) o += 3.141592653589793;
      const double cs = std::cos(o), sn = std::sin(o);
      const double here = smooth_cmp(y, x);
      bool keep = true;
      for (int d = -1; d <= 1; d += 2) {
        const double n =
            detail::interp_or_zero(smooth_cmp, double(y) + d * sn, double(x) + d * cs);
        if (here < n) {
          keep = false;
          break;
        }
      }
      if (keep) out(y, x) = prob(y, x);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Tolerance correspondence. Greedy nearest-first one-to-one assignment per
// annotation; a predicted pixel is correct once it matches any annotation,
// and every annotation's edge pixels count toward recall separately.

struct MatchCounts {
  std::int64_t tp_pred = 0;  // predicted pixels matched somewhere
  std::int64_t fp = 0;
  std::int64_t tp_gt = 0;    // annotated pixels recalled (summed over annotators)
  std::int64_t fn = 0;

  double precision() const {
    return tp_pred + fp > 0 ? double(tp_pred) / double(tp_pred + fp) : 0.0;
  }
  double recall() const {
    return tp_gt + fn > 0 ? double(tp_gt) / double(tp_gt + fn) : 0.0;
  }
};

inline std::vector<std::pair<Index, Index>> edge_pixels(const PlaneF& map) {
  std::vector<std::pair<Index, Index>> px;
  for (Index y = 0; y < map.rows(); ++y)
    for (Index x = 0; x < map.cols(); ++x)
      if (map(y, x) > 0.0f) px.push_back({y, x});
  return px;
}

inline MatchCounts correspond_match(const PlaneF& pred_bin,
                                    const std::vector<PlaneF>& gt_maps,
                                    double max_dist) {
  if (gt_maps.empty()) throw DataError("correspond_match needs >= 1 annotation");
  const double diag =
      std::hypot(double(pred_bin.rows()), double(pred_bin.cols()));
  const double tol = max_dist * diag;
  const double tol2 = tol * tol;

  const auto pred_px = edge_pixels(pred_bin);
  std::vector<char> pred_matched_any(pred_px.size(), 0);

  MatchCounts counts;
  for (const auto& gt : gt_maps) {
    if (gt.rows() != pred_bin.rows() || gt.cols() != pred_bin.cols())
      throw ShapeError("annotation/prediction shape mismatch");
    const auto gt_px = edge_pixels(gt);

    struct Pair {
      double d2;
      std::int32_t p, g;
    };
    std::vector<Pair> pairs;
    // Bucket annotation pixels by row band to keep the pair scan local.
    std::map<Index, std::vector<std::int32_t>> by_row;
    for (std::size_t j = 0; j < gt_px.size(); ++j)
      by_row[gt_px[j].first].push_back(std::int32_t(j));
    const Index band = Index(std::floor(tol)) + 1;
    for (std::size_t i = 0; i < pred_px.size(); ++i) {
      const auto [py, px] = pred_px[i];
      for (Index y = py - band; y <= py + band; ++y) {
        auto it = by_row.find(y);
        if (it == by_row.end()) continue;
        for (std::int32_t j : it->second) {
          const double dy = double(py - gt_px[j].first);
          const double dx = double(px - gt_px[j].second);
          const double d2 = dy * dy + dx * dx;
          if (d2 <= tol2) pairs.push_back({d2, std::int32_t(i), j});
        }
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.d2 != b.d2) return a.d2 < b.d2;
      if (a.p != b.p) return a.p < b.p;
      return a.g < b.g;
    });
    std::vector<char> p_used(pred_px.size(), 0), g_used(gt_px.size(), 0);
    std::int64_t matched = 0;
    for (const auto& pr : pairs) {
      if (p_used[pr.p] || g_used[pr.g]) continue;
      p_used[pr.p] = 1;
      g_used[pr.g] = 1;
      pred_matched_any[pr.p] = 1;
      ++matched;
    }
    counts.tp_gt += matched;
    counts.fn += std::int64_t(gt_px.size()) - matched;
  }

  for (char m : pred_matched_any) counts.tp_pred += m;
  counts.fp = std::int64_t(pred_px.size()) - counts.tp_pred;
  return counts;
}

// ---------------------------------------------------------------------------
// Dataset sweep. ODS maximizes F over one dataset-wide threshold; OIS averages
// each image's own best F.

inline EvalReport ods_ois(const std::vector<PlaneF>& predictions,
                          const std::vector<std::vector<PlaneF>>& annotations,
                          const EvalConfig& config, int threads = 0) {
  config.validate();
  if (predictions.empty()) throw DataError("ods_ois on an empty dataset");
  if (predictions.size() != annotations.size())
    throw ShapeError("prediction/annotation count mismatch");

  const int nt = config.thresholds;
  std::vector<double> taus(nt);
  for (int i = 0; i < nt; ++i) taus[i] = double(i + 1) / double(nt + 1);

  const Index n = Index(predictions.size());
  std::vector<std::vector<MatchCounts>> counts(n,
                                               std::vector<MatchCounts>(nt));
  parallel_for(
      n,
      [&](Index i) {
        PlaneF base = config.apply_thinning ? nms_thin(predictions[i])
                                            : predictions[i];
        for (int t = 0; t < nt; ++t) {
          PlaneF bin = (base >= float(taus[t])).cast<float>();
          counts[i][t] = correspond_match(bin, annotations[i], config.max_dist);
        }
      },
      threads);

  EvalReport report;
  report.pr_points.resize(nt);
  double best_f = -1.0;
  for (int t = 0; t < nt; ++t) {
    MatchCounts total;
    for (Index i = 0; i < n; ++i) {
      total.tp_pred += counts[i][t].tp_pred;
      total.fp += counts[i][t].fp;
      total.tp_gt += counts[i][t].tp_gt;
      total.fn += counts[i][t].fn;
    }
    const double p = total.precision(), r = total.recall();
    report.pr_points[t] = {taus[t], p, r, f_measure(p, r)};
    if (report.pr_points[t].f > best_f) {
      best_f = report.pr_points[t].f;
      report.ods_threshold = taus[t];
    }
  }
  report.ods_f = best_f;

  double ois_sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    double best = 0.0;
    for (int t = 0; t < nt; ++t) {
      const double f =
          f_measure(counts[i][t].precision(), counts[i][t].recall());
      best = std::max(best, f);
    }
    ois_sum += best;
  }
  report.ois_f = ois_sum / double(n);
  return report;
}

// ---------------------------------------------------------------------------

template <class S>
Plane<S> resize_plane(const Plane<S>& x, Index h, Index w) {
  nets::ResizeCtx<S> ctx;
  FeatureMap<S> in = to_feature(x), out;
  nets::resize_forward(ctx, in, h, w, out);
  return to_plane(out);
}

// Averages per-scale inferences; `infer` maps an RGB image to a probability
// plane at that image's resolution.
template <class InferFn>
PlaneF multiscale_infer(InferFn&& infer, const std::array<PlaneF, 3>& rgb,
                        const std::vector<double>& scales) {
  if (scales.empty()) throw ConfigError("multiscale_infer needs >= 1 scale");
  const Index h = rgb[0].rows(), w = rgb[0].cols();
  PlaneF acc = PlaneF::Zero(h, w);
  for (double s : scales) {
    if (s <= 0.0) throw ConfigError("scales must be positive");
    const Index sh = std::max<Index>(1, Index(std::lround(double(h) * s)));
    const Index sw = std::max<Index>(1, Index(std::lround(double(w) * s)));
    std::array<PlaneF, 3> scaled;
    for (int c = 0; c < 3; ++c)
      scaled[c] = s == 1.0 ? rgb[c] : resize_plane(rgb[c], sh, sw);
    PlaneF pred = infer(scaled);
    acc += s == 1.0 ? pred : resize_plane(pred, h, w);
  }
  return acc / float(scales.size());
}

// Median-of-runs throughput after warmup, plus the exact trainable count.
template <class RunFn>
std::pair<double, std::int64_t> bench(RunFn&& run, std::int64_t param_count,
                                      int repeats) {
  if (repeats < 10) throw ConfigError("bench needs >= 10 repeats");
  for (int i = 0; i < 3; ++i) run();
  std::vector<double> seconds(repeats);
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const auto t1 = std::chrono::steady_clock::now();
    seconds[i] = std::chrono::duration<double>(t1 - t0).count();
  }
  std::nth_element(seconds.begin(), seconds.begin() + repeats / 2, seconds.end());
  const double median = seconds[repeats / 2];
  return {median > 0.0 ? 1.0 / median : 0.0, param_count};
}

}  // namespace coedge::eval
