#pragma once

// Synthetic desk-scale corpus: filled ellipses and convex polygons on
// textured backgrounds. Shape membership is a crisp per-pixel test, so the
// ground-truth annotation is the exact one-pixel-wide inner boundary of each
// shape's visible region; interiors get smooth shading and global pixel
// noise, boundaries stay hard.

#include "coedge/data.hpp"

namespace coedge::synth {

using IdMap = Plane<int>;

struct GeneratedSample {
  data::AnnotatedImage sample;
  IdMap ids;  // 0 = background, 1..k = shapes (paint order)
};

namespace detail {

struct Shape {
  bool is_ellipse = true;
  double cx = 0, cy = 0, rot = 0;
  double a = 0, b = 0;                       // ellipse radii
  std::vector<std::array<double, 2>> poly;   // convex, counterclockwise

  double bound_radius() const {
    if (is_ellipse) return std::max(a, b);
    double r = 0;
    for (const auto& v : poly)
      r = std::max(r, std::hypot(v[0] - cx, v[1] - cy));
    return r;
  }

  bool contains(double x, double y) const {
    if (is_ellipse) {
      const double dx = x - cx, dy = y - cy;
      const double u = (dx * std::cos(rot) + dy * std::sin(rot)) / a;
      const double v = (-dx * std::sin(rot) + dy * std::cos(rot)) / b;
      return u * u + v * v <= 1.0;
    }
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const auto& p = poly[i];
      const auto& q = poly[(i + 1) % poly.size()];
      const double cross =
          (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]);
      if (cross < 0.0) return false;
    }
    return true;
  }
};

inline Shape draw_shape(Rng& rng, Index size) {
  Shape s;
  s.is_ellipse = rng.bernoulli(0.5);
  s.cx = rng.uniform(0.22, 0.78) * double(size);
  s.cy = rng.uniform(0.22, 0.78) * double(size);
  s.rot = rng.uniform(0.0, 3.141592653589793);
  const double r = rng.uniform(0.12, 0.26) * double(size);
  if (s.is_ellipse) {
    s.a = r;
    s.b = r * rng.uniform(0.55, 1.0);
  } else {
    const int verts = 3 + int(rng.below(4));
    std::vector<double> angles(verts);
    for (auto& a : angles) a = rng.uniform(0.0, 6.283185307179586);
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double rr = r * rng.uniform(0.65, 1.0);
      s.poly.push_back({s.cx + rr * std::cos(a), s.cy + rr * std::sin(a)});
    }
  }
  return s;
}

inline PlaneF textured_background(Rng& rng, Index size, float lo, float hi) {
  PlaneF bg = PlaneF::Zero(size, size);
  const int waves = 3 + int(rng.below(3));
  for (int i = 0; i < waves; ++i) {
    const double kx = rng.uniform(-1.0, 1.0) * 6.283185307179586 / double(size) * 3.0;
    const double ky = rng.uniform(-1.0, 1.0) * 6.283185307179586 / double(size) * 3.0;
    const double phase = rng.uniform(0.0, 6.283185307179586);
    const float amp = float(rng.uniform(0.3, 1.0));
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x)
        bg(y, x) += amp * float(std::cos(kx * x + ky * y + phase));
  }
  const float mn = bg.minCoeff(), mx = bg.maxCoeff();
  if (mx > mn) bg = (bg - mn) / (mx - mn);
  return lo + (hi - lo) * bg;
}

}  // namespace detail

inline GeneratedSample generate_one(Index size, std::uint64_t seed, Index index) {
  if (size < 16) throw ConfigError("synthetic size must be >= 16");
  Rng rng(mix_seed(seed, 0x5e11a000ull + std::uint64_t(index)));

  GeneratedSample out;
  out.ids = IdMap::Zero(size, size);
  auto& img = out.sample.image;
  out.sample.id = "synth_" + std::to_string(index);

  // Background: shared texture with slight per-channel tint.
  PlaneF base = detail::textured_background(rng, size, 0.20f, 0.48f);
  for (int c = 0; c < 3; ++c) {
    const float tint = float(rng.uniform(-0.05, 0.05));
    img[c] = base + tint;
  }

  // 1-4 shapes, with a rare degenerate background-only draw.
  int n_shapes = rng.bernoulli(0.04) ? 0 : 1 + int(rng.below(4));
  std::vector<detail::Shape> placed;
  for (int k = 0; k < n_shapes; ++k) {
    detail::Shape shape;
    bool ok = false;
    for (int attempt = 0; attempt < 24 && !ok; ++attempt) {
      shape = detail::draw_shape(rng, size);
      ok = true;
      for (const auto& other : placed) {
        const double gap = std::hypot(shape.cx - other.cx, shape.cy - other.cy);
        if (gap < shape.bound_radius() + other.bound_radius() + 2.0) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    placed.push_back(shape);
    const int id = int(placed.size());

    // Dark or bright fill so edges stay learnable against the background.
    const float base_luma = rng.bernoulli(0.5) ? float(rng.uniform(0.02, 0.14))
                                               : float(rng.uniform(0.62, 0.95));
    float tint[3];
    for (auto& t : tint) t = float(rng.uniform(-0.08, 0.08));
    const float shade = float(rng.uniform(0.0, 0.35));
    const double rr = shape.bound_radius();

    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        if (!shape.contains(double(x), double(y))) continue;
        out.ids(y, x) = id;
        const double d = std::hypot(double(x) - shape.cx, double(y) - shape.cy) / rr;
        const float g = 1.0f - shade * float(d * d);
        for (int c = 0; c < 3; ++c) img[c](y, x) = (base_luma + tint[c]) * g;
      }
  }

  // Fine pixel noise everywhere; interiors stay smooth, boundaries hard.
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const float n = float(rng.normal() * 0.015);
      for (int c = 0; c < 3; ++c)
        img[c](y, x) = std::min(1.0f, std::max(0.0f, img[c](y, x) + n));
    }

  // Annotation: inner 4-boundary of each shape region in the id map.
  PlaneF ann = PlaneF::Zero(size, size);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const int id = out.ids(y, x);
      if (id == 0) continue;
      const bool edge = (y > 0 && out.ids(y - 1, x) != id) ||
                        (y + 1 < size && out.ids(y + 1, x) != id) ||
                        (x > 0 && out.ids(y, x - 1) != id) ||
                        (x + 1 < size && out.ids(y, x + 1) != id);
      if (edge) ann(y, x) = 1.0f;
    }
  out.sample.annotations.push_back(std::move(ann));
  out.sample.consensus = data::consensus_of(out.sample.annotations);
  return out;
}

inline std::vector<data::AnnotatedImage> synth_generate(Index count, Index size,
                                                        std::uint64_t seed) {
  if (count < 1) throw ConfigError("synthetic count must be >= 1");
  std::vector<data::AnnotatedImage> out(count);
  parallel_for(count, [&](Index i) { out[i] = generate_one(size, seed, i).sample; });
  return out;
}

}  // namespace coedge::synth
