#pragma once

// Shared dense types, deterministic RNG streams and small utilities used by
// every other header. All spatial data is kept in Eigen dense storage; a
// single-channel map is a Plane, multi-channel activations live in a
// FeatureMap whose columns are pixels (column-major within each image, so a
// one-channel FeatureMap row aliases the Plane memory layout).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace coedge {

template <class Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using PlaneF = Plane<float>;
using PlaneD = Plane<double>;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto its exit codes.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Multi-channel activation block. Cols are pixels of `batch` equally sized
// images; within one image the pixel column index is x*h + y.

template <class Scalar>
struct FeatureMap {
  Matrix<Scalar> data;  // channels x (batch*h*w)
  Index channels = 0;
  Index batch = 0;
  Index h = 0;
  Index w = 0;

  FeatureMap() = default;
  FeatureMap(Index c, Index b, Index height, Index width)
      : data(Matrix<Scalar>::Zero(c, b * height * width)),
        channels(c),
        batch(b),
        h(height),
        w(width) {}

  Index pixels() const { return h * w; }
  Index cols() const { return batch * h * w; }

  auto image(Index b) { return data.middleCols(b * pixels(), pixels()); }
  auto image(Index b) const { return data.middleCols(b * pixels(), pixels()); }

  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && batch == o.batch && h == o.h && w == o.w;
  }
};

// Plane <-> single-channel FeatureMap. The column-major Plane layout matches
// the pixel ordering, so these are straight copies.
template <class Scalar>
FeatureMap<Scalar> to_feature(const Plane<Scalar>& p) {
  FeatureMap<Scalar> f(1, 1, p.rows(), p.cols());
  f.data = Eigen::Map<const Matrix<Scalar>>(p.data(), 1, p.size());
  return f;
}

template <class Scalar>
Plane<Scalar> to_plane(const FeatureMap<Scalar>& f, Index b = 0, Index c = 0) {
  Plane<Scalar> p(f.h, f.w);
  Eigen::Map<Matrix<Scalar>>(p.data(), 1, p.size()) =
      f.image(b).row(c);
  return p;
}

template <class Scalar>
FeatureMap<Scalar> rgb_to_feature(const std::array<Plane<Scalar>, 3>& rgb) {
  FeatureMap<Scalar> f(3, 1, rgb[0].rows(), rgb[0].cols());
  for (int c = 0; c < 3; ++c)
    f.data.row(c) = Eigen::Map<const Matrix<Scalar>>(rgb[c].data(), 1, rgb[c].size());
  return f;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. A thin wrapper over mt19937_64 that draws uniforms and
// normals directly from the engine so results do not depend on the standard
// library's distribution internals. State round-trips through text exactly.

struct Rng {
  std::mt19937_64 engine;

  Rng() = default;
  explicit Rng(std::uint64_t seed) : engine(seed) {}

  std::uint64_t bits() { return engine(); }

  // Uniform in [0, 1).
  double uniform() { return double(engine() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // One Box-Muller draw; the paired value is discarded so the stream state
  // stays a pure function of the engine.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine();
    } while (x >= limit);
    return x % n;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine;
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    Rng r;
    std::istringstream is(text);
    is >> r.engine;
    if (!is) throw DataError("invalid RNG state string");
    return r;
  }
};

// splitmix64; used to derive independent named streams from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <class Scalar>
void shuffle(std::vector<Scalar>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.below(i)]);
}

// ---------------------------------------------------------------------------
// Deterministic parallel map over an index range. Results must be written to
// per-index slots by the body; reductions happen afterwards in index order.

inline int effective_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

template <class Body>
void parallel_for(Index n, const Body& body, int threads = 0) {
  const int t = std::min<Index>(effective_threads(threads), n);
  if (t <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::future<void>> workers;
  workers.reserve(t);
  std::atomic<Index> next(0);
  for (int k = 0; k < t; ++k) {
    workers.push_back(std::async(std::launch::async, [&]() {
      for (Index i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    }));
  }
  for (auto& w : workers) w.get();
}

}  // namespace coedge
