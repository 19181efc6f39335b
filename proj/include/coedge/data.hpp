#pragma once

// Dataset ingestion, train/validation splitting and photometric augmentation.
//
// On-disk layout (also produced by the synthetic generator):
//   images/<id>.png          8-bit RGB
//   gt/<id>/<annotator>.png  8-bit grayscale, nonzero = edge

#include "coedge/core.hpp"
#include "coedge/png_io.hpp"

#include <filesystem>
#include <map>

namespace coedge::data {

struct AnnotatedImage {
  std::string id;
  std::array<PlaneF, 3> image;       // RGB in [0,1]
  std::vector<PlaneF> annotations;   // K binary maps
  PlaneF consensus;                  // mean of annotations

  Index height() const { return image[0].rows(); }
  Index width() const { return image[0].cols(); }
};

enum class Hardness { hard, soft };

struct EdgeTarget {
  PlaneF values;
  Hardness hardness = Hardness::hard;
};

struct DatasetSplit {
  std::vector<AnnotatedImage> train;
  std::vector<AnnotatedImage> validation;
  std::uint64_t seed = 0;
};

struct AugmentationConfig {
  double jitter_low = 0.5;
  double jitter_high = 1.5;
  double gray_prob = 0.2;

  void validate() const {
    if (!(0.0 <= jitter_low && jitter_low <= jitter_high))
      throw ConfigError("augmentation jitter range must satisfy 0 <= low <= high");
    if (!(0.0 <= gray_prob && gray_prob <= 1.0))
      throw ConfigError("gray_prob must lie in [0,1]");
  }
};

// Mean of the annotator maps, accumulated in double so the stored value is
// the correctly rounded mean.
inline PlaneF consensus_of(const std::vector<PlaneF>& annotations) {
  if (annotations.empty()) throw DataError("consensus requires >= 1 annotation");
  PlaneD acc = annotations[0].cast<double>();
  for (std::size_t k = 1; k < annotations.size(); ++k)
    acc += annotations[k].cast<double>();
  return (acc / double(annotations.size())).cast<float>();
}

inline EdgeTarget consensus_binarize(const PlaneF& consensus, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("binarization threshold must lie in (0,1)");
  if (!consensus.isFinite().all())
    throw DataError("consensus map contains non-finite values");
  EdgeTarget t;
  t.hardness = Hardness::hard;
  t.values = (consensus >= float(threshold)).cast<float>();
  return t;
}

inline DatasetSplit split_train_val(const std::vector<AnnotatedImage>& dataset,
                                    double val_fraction, std::uint64_t seed) {
  if (dataset.empty()) throw ConfigError("cannot split an empty dataset");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in (0,1)");
  const Index n = Index(dataset.size());
  const Index n_val = Index(std::llround(val_fraction * double(n)));
  if (n_val == 0 || n_val == n)
    throw ConfigError("split leaves train or validation side empty");

  std::vector<Index> order(n);
  for (Index i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, /*tag=*/0xda7a5e7));
  shuffle(order, rng);

  DatasetSplit split;
  split.seed = seed;
  split.validation.reserve(n_val);
  split.train.reserve(n - n_val);
  for (Index i = 0; i < n; ++i) {
    if (i < n_val)
      split.validation.push_back(dataset[order[i]]);
    else
      split.train.push_back(dataset[order[i]]);
  }
  return split;
}

namespace detail {

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

// Hue rotation by `angle` radians around the luma axis (YIQ rotation). The
// zero angle short-circuits so the identity configuration is bit-exact.
inline void rotate_hue(std::array<PlaneF, 3>& rgb, double angle) {
  if (angle == 0.0) return;
  const float u = float(std::cos(angle)), w = float(std::sin(angle));
  const float m[3][3] = {
      {0.299f + 0.701f * u + 0.168f * w, 0.587f - 0.587f * u + 0.330f * w,
       0.114f - 0.114f * u - 0.497f * w},
      {0.299f - 0.299f * u - 0.328f * w, 0.587f + 0.413f * u + 0.035f * w,
       0.114f - 0.114f * u + 0.292f * w},
      {0.299f - 0.300f * u + 1.250f * w, 0.587f - 0.588f * u - 1.050f * w,
       0.114f + 0.886f * u - 0.203f * w}};
  PlaneF r = rgb[0], g = rgb[1], b = rgb[2];
  for (int c = 0; c < 3; ++c)
    rgb[c] = m[c][0] * r + m[c][1] * g + m[c][2] * b;
}

}  // namespace detail

// Photometric jitter: brightness, contrast, saturation and hue factors drawn
// uniformly from [jitter_low, jitter_high], then an optional grayscale
// collapse. Annotations and consensus pass through untouched; the image is
// clipped back to [0,1].
inline AnnotatedImage augment(const AnnotatedImage& sample,
                              const AugmentationConfig& config, Rng& rng) {
  config.validate();
  AnnotatedImage out = sample;

  const double f_bright = rng.uniform(config.jitter_low, config.jitter_high);
  const double f_contrast = rng.uniform(config.jitter_low, config.jitter_high);
  const double f_sat = rng.uniform(config.jitter_low, config.jitter_high);
  const double f_hue = rng.uniform(config.jitter_low, config.jitter_high);
  const bool to_gray = rng.bernoulli(config.gray_prob);

  auto& rgb = out.image;
  if (f_bright != 1.0)
    for (auto& p : rgb) p *= float(f_bright);

  if (f_contrast != 1.0) {
    const float mean =
        (detail::luma(rgb[0].mean(), rgb[1].mean(), rgb[2].mean()));
    for (auto& p : rgb) p = float(f_contrast) * p + float(1.0 - f_contrast) * mean;
  }

  if (f_sat != 1.0) {
    PlaneF gray = 0.299f * rgb[0] + 0.587f * rgb[1] + 0.114f * rgb[2];
    for (auto& p : rgb) p = float(f_sat) * p + float(1.0 - f_sat) * gray;
  }

  detail::rotate_hue(rgb, (f_hue - 1.0) * 3.141592653589793);

  if (to_gray) {
    PlaneF gray = 0.299f * rgb[0] + 0.587f * rgb[1] + 0.114f * rgb[2];
    for (auto& p : rgb) p = gray;
  }

  for (auto& p : rgb) p = p.min(1.0f).max(0.0f);
  return out;
}

// Loads every image under images/ together with all its annotator maps.
inline std::vector<AnnotatedImage> load_bsds_style(
    const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path images_dir = root / "images";
  const fs::path gt_dir = root / "gt";
  std::vector<AnnotatedImage> out;
  if (!fs::exists(images_dir)) return out;

  std::map<std::string, fs::path> image_files;  // sorted for determinism
  for (const auto& e : fs::directory_iterator(images_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      image_files[e.path().stem().string()] = e.path();

  for (const auto& [id, path] : image_files) {
    AnnotatedImage sample;
    sample.id = id;
    sample.image = read_png_rgb(path);

    const fs::path ann_dir = gt_dir / id;
    if (!fs::exists(ann_dir))
      throw DataError("missing annotations for image: " + path.string());
    std::map<std::string, fs::path> ann_files;
    for (const auto& e : fs::directory_iterator(ann_dir))
      if (e.is_regular_file() && e.path().extension() == ".png")
        ann_files[e.path().stem().string()] = e.path();
    if (ann_files.empty())
      throw DataError("missing annotations for image: " + path.string());

    for (const auto& [ann_id, ann_path] : ann_files) {
      PlaneF g = read_png_gray(ann_path);
      if (g.rows() != sample.height() || g.cols() != sample.width())
        throw DataError("annotation size mismatch: " + ann_path.string());
      sample.annotations.push_back((g > 0.0f).cast<float>());
    }
    sample.consensus = consensus_of(sample.annotations);
    out.push_back(std::move(sample));
  }
  return out;
}

// Writes a dataset in the same layout load_bsds_style reads.
inline void write_bsds_style(const std::filesystem::path& root,
                             const std::vector<AnnotatedImage>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  for (const auto& s : samples) {
    write_png_rgb(root / "images" / (s.id + ".png"), s.image);
    const fs::path ann_dir = root / "gt" / s.id;
    fs::create_directories(ann_dir);
    for (std::size_t k = 0; k < s.annotations.size(); ++k)
      write_png_gray(ann_dir / (std::to_string(k) + ".png"), s.annotations[k]);
  }
}

}  // namespace coedge::data
