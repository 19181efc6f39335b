#pragma once

// Collaborative training loops. The full mode trains the recurrent and
// non-recurrent networks jointly: epoch 0 on hard targets, later epochs on
// soft targets blended from the weighted momentum-sample ensembles of both
// architectures; each epoch ends with a momentum update, S fresh parameter
// samples per tracked network and a validation-weighted solve of their
// ensemble weights. The efficient mode keeps a single non-recurrent network
// and draws its samples by stochastic weight pruning. The remaining modes
// are the reduced references used for directional comparisons.

#include "coedge/checkpoint.hpp"
#include "coedge/data.hpp"
#include "coedge/ensemble.hpp"
#include "coedge/losses.hpp"
#include "coedge/nets.hpp"
#include "coedge/optimizer.hpp"

#include <chrono>
#include <functional>
#include <optional>

namespace coedge::train {

enum class AblationMode { full, baseline, nismp, eadm, eads, eadp };

inline const char* ablation_name(AblationMode m) {
  switch (m) {
    case AblationMode::full: return "full";
    case AblationMode::baseline: return "baseline";
    case AblationMode::nismp: return "nismp";
    case AblationMode::eadm: return "eadm";
    case AblationMode::eads: return "eads";
    case AblationMode::eadp: return "eadp";
  }
  return "?";
}

inline AblationMode ablation_from_name(const std::string& name) {
  for (AblationMode m :
       {AblationMode::full, AblationMode::baseline, AblationMode::nismp,
        AblationMode::eadm, AblationMode::eads, AblationMode::eadp})
    if (name == ablation_name(m)) return m;
  throw ConfigError("unknown ablation mode: " + name);
}

struct TrainOptions {
  nets::NetConfig recurrent = nets::recurrent_config(nets::SizeClass::tiny);
  nets::NetConfig nonrecurrent = nets::nonrecurrent_config(nets::SizeClass::tiny);
  LossConfig loss;
  OptimizerConfig optimizer;
  int samples = 3;  // S
  double mu = 0.5;
  double val_fraction = 0.3;
  std::uint64_t seed = 1;
  bool augment = true;
  data::AugmentationConfig augmentation;
  double binarize_threshold = 0.2;
  AblationMode mode = AblationMode::full;
  bool efficient = false;  // single-net pruning-sampled variant
  double prune_prob = 0.5;
  double prune_pool_fraction = 0.2;
  ensemble::SolveOptions solve;
  int threads = 0;

  void validate() const {
    recurrent.validate();
    nonrecurrent.validate();
    loss.validate();
    optimizer.validate(loss.epochs);
    if (samples < 1) throw ConfigError("sample count S must be >= 1");
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("mu must lie in [0,1]");
    if (efficient && mode != AblationMode::full)
      throw ConfigError("the efficient loop has no reduced modes");
    augmentation.validate();
  }

  bool uses_recurrent() const {
    return !efficient && (mode == AblationMode::full || mode == AblationMode::eads);
  }
  bool uses_momentum() const {
    return mode == AblationMode::full || mode == AblationMode::eadm;
  }
  bool uses_sampling() const {
    return mode == AblationMode::full || mode == AblationMode::eadp;
  }
};

struct EpochStats {
  int epoch = 0;
  double eta = 0.0;
  double lr_begin = 0.0, lr_end = 0.0;
  double train_loss_r = 0.0, train_loss_nr = 0.0;
  double val_bce_r = 0.0, val_bce_nr = 0.0;
  bool solver_converged = true;
  double seconds = 0.0;
};

struct TrainResult {
  ParameterVector<float> final_params;
  nets::NetConfig config;
  std::vector<EpochStats> history;
};

// ---------------------------------------------------------------------------

namespace detail {

inline FeatureMap<float> batch_images(
    const std::vector<const std::array<PlaneF, 3>*>& images) {
  const Index h = (*images[0])[0].rows(), w = (*images[0])[0].cols();
  FeatureMap<float> x(3, Index(images.size()), h, w);
  for (std::size_t b = 0; b < images.size(); ++b)
    for (int c = 0; c < 3; ++c)
      x.data.block(c, Index(b) * h * w, 1, h * w) =
          Eigen::Map<const Matrix<float>>((*images[b])[c].data(), 1, h * w);
  return x;
}

inline PlaneF fused_plane(const nets::ForwardResult<float>& fwd, Index b) {
  return to_plane(fwd.fused, b);
}

}  // namespace detail

// Forward one image through a parameter vector (fresh engine state is the
// caller's responsibility; engines are reused across calls for speed).
inline PlaneF predict_image(nets::EdgeNet<float>& engine,
                            const std::array<PlaneF, 3>& rgb,
                            nets::OutputActivation act =
                                nets::OutputActivation::sigmoid) {
  auto fwd = engine.forward(rgb_to_feature(rgb), act);
  return detail::fused_plane(fwd, 0);
}

class Trainer {
 public:
  Trainer(std::vector<data::AnnotatedImage> dataset, TrainOptions opts)
      : opts_(std::move(opts)) {
    opts_.validate();
    split_ = data::split_train_val(dataset, opts_.val_fraction, opts_.seed);
    prepare_targets();

    {
      nets::EdgeNet<float> net(opts_.nonrecurrent);
      net.init(mix_seed(opts_.seed, 0xA2));
      bp_nr_ = net.params();
    }
    vel_nr_ = zeros_like(bp_nr_);
    if (opts_.uses_recurrent()) {
      nets::EdgeNet<float> net(opts_.recurrent);
      net.init(mix_seed(opts_.seed, 0xA1));
      bp_r_ = net.params();
      vel_r_ = zeros_like(*bp_r_);
    }

    shuffle_rng_ = Rng(mix_seed(opts_.seed, 0x5F));
    augment_rng_ = Rng(mix_seed(opts_.seed, 0xA6));
    sample_rng_ = Rng(mix_seed(opts_.seed, 0x5A));

    const int workers = std::min(2, effective_threads(opts_.threads));
    for (int i = 0; i < workers; ++i) {
      nr_engines_.emplace_back(opts_.nonrecurrent);
      if (opts_.uses_recurrent()) r_engines_.emplace_back(opts_.recurrent);
    }
  }

  int epoch() const { return epoch_; }
  const std::vector<EpochStats>& history() const { return history_; }
  const TrainOptions& options() const { return opts_; }
  const data::DatasetSplit& split() const { return split_; }

  void run_epoch() {
    if (epoch_ >= opts_.loss.epochs)
      throw ConfigError("training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats stats;
    stats.epoch = epoch_;
    stats.eta = eta_schedule(epoch_, opts_.loss);

    // Epoch-order shuffle, then this epoch's augmentation draws in order.
    std::vector<Index> order(split_.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = Index(i);
    shuffle(order, shuffle_rng_);

    std::vector<std::array<PlaneF, 3>> inputs(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& sample = split_.train[order[i]];
      inputs[i] = opts_.augment
                      ? data::augment(sample, opts_.augmentation, augment_rng_).image
                      : sample.image;
    }

    // Refined targets for this epoch.
    std::vector<PlaneF> hard(order.size()), soft(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      hard[i] = train_targets_[order[i]];
    if (epoch_ > 0 && opts_.mode != AblationMode::baseline) {
      std::vector<PlaneF> guidance = compute_guidance(inputs);
      for (std::size_t i = 0; i < order.size(); ++i)
        soft[i] = soft_target<float>(guidance[i], hard[i], stats.eta);
    } else {
      soft = hard;
    }

    // Optimize both back-propagation networks over accumulation windows.
    stats.lr_begin = lr_at(double(epoch_), opts_.optimizer, opts_.loss.epochs);
    stats.lr_end =
        lr_at(double(epoch_ + 1), opts_.optimizer, opts_.loss.epochs);
    const Index n_train = Index(order.size());
    double loss_nr = 0.0, loss_r = 0.0;
    for (Index begin = 0; begin < n_train; begin += opts_.optimizer.batch_size) {
      const Index end = std::min<Index>(begin + opts_.optimizer.batch_size, n_train);
      const double lr = lr_at(double(epoch_) + double(begin) / double(n_train),
                              opts_.optimizer, opts_.loss.epochs);
      loss_nr += window_step(nr_engines_, bp_nr_, vel_nr_, inputs, hard, soft,
                             begin, end, lr);
      if (opts_.uses_recurrent())
        loss_r += window_step(r_engines_, *bp_r_, *vel_r_, inputs, hard, soft,
                              begin, end, lr);
    }
    stats.train_loss_nr = loss_nr / double(n_train);
    stats.train_loss_r = opts_.uses_recurrent() ? loss_r / double(n_train) : 0.0;
    if (!std::isfinite(stats.train_loss_nr) ||
        !std::isfinite(stats.train_loss_r))
      throw NumericError("training loss diverged (seed " +
                         std::to_string(opts_.seed) + ", epoch " +
                         std::to_string(epoch_) + ")");

    // Momentum fusion across training moments.
    if (opts_.uses_momentum() || opts_.efficient) {
      if (epoch_ == 0) {
        mom_nr_ = ensemble::MomentumState<float>{bp_nr_, opts_.mu, 0};
        if (opts_.uses_recurrent())
          mom_r_ = ensemble::MomentumState<float>{*bp_r_, opts_.mu, 0};
      } else {
        mom_nr_ = ensemble::momentum_update(bp_nr_, mom_nr_.value());
        if (opts_.uses_recurrent())
          mom_r_ = ensemble::momentum_update(*bp_r_, mom_r_.value());
      }
    }

    // Fresh parameter samples and their generalization-weighted ensemble.
    draw_samples();
    if (samples_nr_) {
      auto [bce_nr, conv_nr] = solve_for(nr_engines_, *samples_nr_, weights_nr_);
      stats.val_bce_nr = bce_nr;
      stats.solver_converged = conv_nr;
      if (opts_.mode == AblationMode::full && !opts_.efficient) {
        auto [bce_r, conv_r] = solve_for(r_engines_, *samples_r_, weights_r_);
        stats.val_bce_r = bce_r;
        stats.solver_converged = stats.solver_converged && conv_r;
      }
    }

    // Epoch-start snapshots feed the reduced guidance modes.
    snapshot_nr_ = bp_nr_;
    if (opts_.uses_recurrent()) snapshot_r_ = *bp_r_;

    ++epoch_;
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    history_.push_back(stats);
  }

  TrainResult finish() {
    if (epoch_ != opts_.loss.epochs)
      throw ConfigError("training has not reached its final epoch");
    TrainResult result;
    result.config = opts_.nonrecurrent;
    result.history = history_;
    switch (opts_.mode) {
      case AblationMode::full:
      case AblationMode::eadp:
        result.final_params =
            ensemble::collapse_params(*samples_nr_, weights_nr_.value());
        break;
      case AblationMode::eadm:
        result.final_params = mom_nr_->theta_m;
        break;
      default:
        result.final_params = bp_nr_;
        break;
    }
    return result;
  }

  // --- checkpointing -------------------------------------------------------

  io::Archive checkpoint() const {
    io::Archive a;
    a.meta["epoch"] = epoch_;
    a.meta["mode"] = ablation_name(opts_.mode);
    a.meta["efficient"] = opts_.efficient;
    a.meta["seed"] = opts_.seed;
    a.meta["rng_shuffle"] = shuffle_rng_.serialize();
    a.meta["rng_augment"] = augment_rng_.serialize();
    a.meta["rng_sample"] = sample_rng_.serialize();
    a.meta["nonrecurrent"] = io::net_config_to_json(opts_.nonrecurrent);
    a.meta["recurrent"] = io::net_config_to_json(opts_.recurrent);
    io::Json hist = io::Json::array();
    for (const auto& s : history_) {
      io::Json e;
      e["epoch"] = s.epoch;
      e["eta"] = s.eta;
      e["lr_begin"] = s.lr_begin;
      e["lr_end"] = s.lr_end;
      e["train_loss_r"] = s.train_loss_r;
      e["train_loss_nr"] = s.train_loss_nr;
      e["val_bce_r"] = s.val_bce_r;
      e["val_bce_nr"] = s.val_bce_nr;
      e["solver_converged"] = s.solver_converged;
      e["seconds"] = s.seconds;
      hist.push_back(e);
    }
    a.meta["history"] = hist;

    a.add_params("bp_nr/", bp_nr_);
    a.add_params("vel_nr/", vel_nr_);
    if (bp_r_) {
      a.add_params("bp_r/", *bp_r_);
      a.add_params("vel_r/", *vel_r_);
    }
    if (mom_nr_) {
      a.add_params("mom_nr/", mom_nr_->theta_m);
      a.meta["mom_nr_epoch"] = mom_nr_->epoch;
    }
    if (mom_r_) {
      a.add_params("mom_r/", mom_r_->theta_m);
      a.meta["mom_r_epoch"] = mom_r_->epoch;
    }
    if (snapshot_nr_) a.add_params("snap_nr/", *snapshot_nr_);
    if (snapshot_r_) a.add_params("snap_r/", *snapshot_r_);
    save_sample_set(a, "samples_nr", samples_nr_);
    save_sample_set(a, "samples_r", samples_r_);
    save_weights(a, "w_nr", weights_nr_);
    save_weights(a, "w_r", weights_r_);
    return a;
  }

  void restore(const io::Archive& a) {
    epoch_ = a.meta.at("epoch").get<int>();
    if (a.meta.at("mode").get<std::string>() != ablation_name(opts_.mode) ||
        a.meta.at("efficient").get<bool>() != opts_.efficient ||
        a.meta.at("seed").get<std::uint64_t>() != opts_.seed)
      throw ConfigError("checkpoint does not match the requested run");
    shuffle_rng_ = Rng::deserialize(a.meta.at("rng_shuffle").get<std::string>());
    augment_rng_ = Rng::deserialize(a.meta.at("rng_augment").get<std::string>());
    sample_rng_ = Rng::deserialize(a.meta.at("rng_sample").get<std::string>());

    history_.clear();
    for (const auto& e : a.meta.at("history")) {
      EpochStats s;
      s.epoch = e.at("epoch").get<int>();
      s.eta = e.at("eta").get<double>();
      s.lr_begin = e.at("lr_begin").get<double>();
      s.lr_end = e.at("lr_end").get<double>();
      s.train_loss_r = e.at("train_loss_r").get<double>();
      s.train_loss_nr = e.at("train_loss_nr").get<double>();
      s.val_bce_r = e.at("val_bce_r").get<double>();
      s.val_bce_nr = e.at("val_bce_nr").get<double>();
      s.solver_converged = e.at("solver_converged").get<bool>();
      s.seconds = e.at("seconds").get<double>();
      history_.push_back(s);
    }

    bp_nr_ = a.params("bp_nr/");
    vel_nr_ = a.params("vel_nr/");
    if (a.find("bp_r/enc.conv.w")) {
      bp_r_ = a.params("bp_r/");
      vel_r_ = a.params("vel_r/");
    }
    if (a.find("mom_nr/enc.conv.w"))
      mom_nr_ = ensemble::MomentumState<float>{
          a.params("mom_nr/"), opts_.mu, a.meta.at("mom_nr_epoch").get<int>()};
    if (a.find("mom_r/enc.conv.w"))
      mom_r_ = ensemble::MomentumState<float>{
          a.params("mom_r/"), opts_.mu, a.meta.at("mom_r_epoch").get<int>()};
    if (a.find("snap_nr/enc.conv.w")) snapshot_nr_ = a.params("snap_nr/");
    if (a.find("snap_r/enc.conv.w")) snapshot_r_ = a.params("snap_r/");
    samples_nr_ = load_sample_set(a, "samples_nr");
    samples_r_ = load_sample_set(a, "samples_r");
    weights_nr_ = load_weights(a, "w_nr");
    weights_r_ = load_weights(a, "w_r");
  }

 private:
  void prepare_targets() {
    train_targets_.resize(split_.train.size());
    for (std::size_t i = 0; i < split_.train.size(); ++i)
      train_targets_[i] =
          data::consensus_binarize(split_.train[i].consensus,
                                   opts_.binarize_threshold)
              .values;
    val_targets_.resize(split_.validation.size());
    for (std::size_t i = 0; i < split_.validation.size(); ++i)
      val_targets_[i] =
          data::consensus_binarize(split_.validation[i].consensus,
                                   opts_.binarize_threshold)
              .values;
  }

  // Deterministic sharded map over image indices: worker w handles the w-th
  // contiguous shard with its own engine.
  template <class Body>
  void sharded(std::size_t count, const Body& body) {
    const int workers = int(nr_engines_.size());
    if (workers <= 1 || count <= 1) {
      body(0, std::size_t(0), count);
      return;
    }
    std::vector<std::future<void>> futs;
    const std::size_t per = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const std::size_t lo = std::min(count, w * per);
      const std::size_t hi = std::min(count, lo + per);
      if (lo >= hi) continue;
      futs.push_back(std::async(std::launch::async,
                                [&body, w, lo, hi]() { body(w, lo, hi); }));
    }
    for (auto& f : futs) f.get();
  }

  // Ensemble prediction of a sampled parameter set over a shard of images,
  // batched through one engine.
  void accumulate_member(nets::EdgeNet<float>& engine,
                         const std::vector<std::array<PlaneF, 3>>& images,
                         std::size_t lo, std::size_t hi, const PlaneF* weight,
                         std::vector<PlaneF>& acc) {
    constexpr std::size_t kChunk = 8;
    for (std::size_t start = lo; start < hi; start += kChunk) {
      const std::size_t stop = std::min(hi, start + kChunk);
      std::vector<const std::array<PlaneF, 3>*> ptrs;
      for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&images[i]);
      auto fwd = engine.forward(detail::batch_images(ptrs));
      for (std::size_t i = start; i < stop; ++i) {
        PlaneF pred = detail::fused_plane(fwd, Index(i - start));
        if (weight) {
          if (weight->rows() == pred.rows() && weight->cols() == pred.cols())
            acc[i] += *weight * pred;
          else
            acc[i] += eval_resize(*weight, pred.rows(), pred.cols()) * pred;
        } else {
          acc[i] = std::move(pred);
        }
      }
    }
  }

  static PlaneF eval_resize(const PlaneF& p, Index h, Index w) {
    nets::ResizeCtx<float> ctx;
    FeatureMap<float> in = to_feature(p), out;
    nets::resize_forward(ctx, in, h, w, out);
    return to_plane(out);
  }

  // Weighted sample-ensemble prediction for every image.
  std::vector<PlaneF> ensemble_over(
      std::vector<nets::EdgeNet<float>>& engines,
      const ensemble::SampleSet<float>& samples,
      const ensemble::EnsembleWeights<float>& weights,
      const std::vector<std::array<PlaneF, 3>>& images) {
    std::vector<PlaneF> acc(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
      acc[i] = PlaneF::Zero(images[i][0].rows(), images[i][0].cols());
    for (Index s = 0; s < samples.size(); ++s) {
      sharded(images.size(), [&](int w, std::size_t lo, std::size_t hi) {
        engines[w].set_params(samples.samples[s]);
        accumulate_member(engines[w], images, lo, hi,
                          samples.size() > 1 ? &weights.w[s] : nullptr, acc);
      });
    }
    return acc;
  }

  // Single-parameter-set prediction for every image.
  std::vector<PlaneF> predict_over(std::vector<nets::EdgeNet<float>>& engines,
                                   const ParameterVector<float>& theta,
                                   const std::vector<std::array<PlaneF, 3>>& images) {
    std::vector<PlaneF> out(images.size());
    sharded(images.size(), [&](int w, std::size_t lo, std::size_t hi) {
      engines[w].set_params(theta);
      accumulate_member(engines[w], images, lo, hi, nullptr, out);
    });
    return out;
  }

  // The guidance map M for every training input of this epoch.
  std::vector<PlaneF> compute_guidance(
      const std::vector<std::array<PlaneF, 3>>& inputs) {
    switch (opts_.mode) {
      case AblationMode::nismp:
        return predict_over(nr_engines_, *snapshot_nr_, inputs);
      case AblationMode::eadm:
        return predict_over(nr_engines_, mom_nr_->theta_m, inputs);
      case AblationMode::eads: {
        auto m_nr = predict_over(nr_engines_, *snapshot_nr_, inputs);
        auto m_r = predict_over(r_engines_, *snapshot_r_, inputs);
        for (std::size_t i = 0; i < m_nr.size(); ++i)
          m_nr[i] = ensemble::confidence_fuse(m_r[i], m_nr[i]);
        return m_nr;
      }
      case AblationMode::eadp:
        return ensemble_over(nr_engines_, *samples_nr_, weights_nr_.value(),
                             inputs);
      case AblationMode::full: {
        auto m_nr =
            ensemble_over(nr_engines_, *samples_nr_, weights_nr_.value(), inputs);
        if (opts_.efficient) return m_nr;
        auto m_r =
            ensemble_over(r_engines_, *samples_r_, weights_r_.value(), inputs);
        for (std::size_t i = 0; i < m_nr.size(); ++i)
          m_nr[i] = ensemble::confidence_fuse(m_r[i], m_nr[i]);
        return m_nr;
      }
      default:
        throw ConfigError("baseline mode has no guidance");
    }
  }

  // One accumulation window (forward+backward over its images, AGC, SGD).
  // Returns the summed per-image loss.
  double window_step(std::vector<nets::EdgeNet<float>>& engines,
                     ParameterVector<float>& params,
                     ParameterVector<float>& velocity,
                     const std::vector<std::array<PlaneF, 3>>& inputs,
                     const std::vector<PlaneF>& hard,
                     const std::vector<PlaneF>& soft, Index begin, Index end,
                     double lr) {
    const double scale = 1.0 / double(end - begin);
    const int workers = int(engines.size());
    std::vector<double> losses(workers, 0.0);
    std::vector<ParameterVector<float>> grads(workers);

    sharded(std::size_t(end - begin), [&](int w, std::size_t lo, std::size_t hi) {
      auto& engine = engines[w];
      engine.set_params(params);
      engine.zero_grad();
      constexpr std::size_t kChunk = 8;
      for (std::size_t start = lo; start < hi; start += kChunk) {
        const std::size_t stop = std::min(hi, start + kChunk);
        std::vector<const std::array<PlaneF, 3>*> ptrs;
        std::vector<PlaneF> yh, ys;
        for (std::size_t i = start; i < stop; ++i) {
          ptrs.push_back(&inputs[begin + Index(i)]);
          yh.push_back(hard[begin + Index(i)]);
          ys.push_back(soft[begin + Index(i)]);
        }
        auto fwd = engine.forward(detail::batch_images(ptrs));
        auto bl = batch_loss_grads(fwd, yh, ys, opts_.loss.lambda, scale);
        losses[w] += bl.total;
        engine.backward(bl.dfused, bl.dsides_f2c, bl.dsides_c2f);
      }
      grads[w] = engine.grads();
    });

    ParameterVector<float> grad = std::move(grads[0]);
    for (int w = 1; w < workers; ++w)
      if (!grads[w].entries.empty()) accumulate_scaled(grad, grads[w], 1.0f);

    ParameterVector<float> clipped =
        agc_clip(grad, params, opts_.optimizer.agc_lambda);
    SgdState<float> sgd{std::move(velocity)};
    sgd.step(params, clipped, lr, opts_.optimizer);
    velocity = std::move(sgd.velocity);

    double total = 0.0;
    for (double l : losses) total += l;
    return total;
  }

  void draw_samples() {
    if (opts_.efficient) {
      ensemble::SampleSet<float> set;
      set.provenance = ensemble::SampleProvenance::pruning;
      for (int s = 0; s < opts_.samples; ++s)
        set.samples.push_back(nets::prune_params(mom_nr_->theta_m,
                                                 opts_.prune_prob, sample_rng_,
                                                 opts_.prune_pool_fraction));
      samples_nr_ = std::move(set);
      return;
    }
    switch (opts_.mode) {
      case AblationMode::full: {
        ensemble::SampleSet<float> set_r, set_nr;
        for (int s = 0; s < opts_.samples; ++s)
          set_r.samples.push_back(nets::sample_dropout_params(
              mom_r_->theta_m, opts_.recurrent.dropout_rate, sample_rng_));
        for (int s = 0; s < opts_.samples; ++s)
          set_nr.samples.push_back(nets::sample_dropout_params(
              mom_nr_->theta_m, opts_.nonrecurrent.dropout_rate, sample_rng_));
        samples_r_ = std::move(set_r);
        samples_nr_ = std::move(set_nr);
        break;
      }
      case AblationMode::eadp: {
        ensemble::SampleSet<float> set;
        for (int s = 0; s < opts_.samples; ++s)
          set.samples.push_back(nets::sample_dropout_params(
              bp_nr_, opts_.nonrecurrent.dropout_rate, sample_rng_));
        samples_nr_ = std::move(set);
        break;
      }
      default:
        break;  // no sampling in the other reduced modes
    }
  }

  // Member predictions on the validation split and the weight solve.
  std::pair<double, bool> solve_for(
      std::vector<nets::EdgeNet<float>>& engines,
      const ensemble::SampleSet<float>& samples,
      std::optional<ensemble::EnsembleWeights<float>>& weights_out) {
    std::vector<std::array<PlaneF, 3>> images(split_.validation.size());
    for (std::size_t i = 0; i < images.size(); ++i)
      images[i] = split_.validation[i].image;

    std::vector<std::vector<PlaneF>> members(samples.size());
    for (Index s = 0; s < samples.size(); ++s) {
      members[s].resize(images.size());
      sharded(images.size(), [&](int w, std::size_t lo, std::size_t hi) {
        engines[w].set_params(samples.samples[s]);
        accumulate_member(engines[w], images, lo, hi, nullptr, members[s]);
      });
    }
    ensemble::SolveOptions solve = opts_.solve;
    solve.threads = opts_.threads;
    auto report = ensemble::solve_weights<float>(members, val_targets_, solve);
    weights_out = std::move(report.weights);
    return {report.bce_achieved, report.converged};
  }

  void save_sample_set(io::Archive& a, const std::string& key,
                       const std::optional<ensemble::SampleSet<float>>& set) const {
    if (!set) return;
    a.meta[key + "_count"] = set->samples.size();
    a.meta[key + "_provenance"] =
        set->provenance == ensemble::SampleProvenance::pruning ? "pruning"
                                                               : "dropout";
    for (std::size_t s = 0; s < set->samples.size(); ++s)
      a.add_params(key + "/" + std::to_string(s) + "/", set->samples[s]);
  }

  std::optional<ensemble::SampleSet<float>> load_sample_set(
      const io::Archive& a, const std::string& key) const {
    if (!a.meta.contains(key + "_count")) return std::nullopt;
    ensemble::SampleSet<float> set;
    set.provenance =
        a.meta.at(key + "_provenance").get<std::string>() == "pruning"
            ? ensemble::SampleProvenance::pruning
            : ensemble::SampleProvenance::dropout;
    const std::size_t count = a.meta.at(key + "_count").get<std::size_t>();
    for (std::size_t s = 0; s < count; ++s)
      set.samples.push_back(a.params(key + "/" + std::to_string(s) + "/"));
    return set;
  }

  void save_weights(io::Archive& a, const std::string& key,
                    const std::optional<ensemble::EnsembleWeights<float>>& w) const {
    if (!w) return;
    a.meta[key + "_count"] = w->w.size();
    a.meta[key + "_omega"] = w->omega;
    for (std::size_t s = 0; s < w->w.size(); ++s)
      a.add_plane(key + "/" + std::to_string(s), w->w[s]);
  }

  std::optional<ensemble::EnsembleWeights<float>> load_weights(
      const io::Archive& a, const std::string& key) const {
    if (!a.meta.contains(key + "_count")) return std::nullopt;
    ensemble::EnsembleWeights<float> w;
    const std::size_t count = a.meta.at(key + "_count").get<std::size_t>();
    w.omega = a.meta.at(key + "_omega").get<std::vector<float>>();
    for (std::size_t s = 0; s < count; ++s)
      w.w.push_back(a.plane(key + "/" + std::to_string(s)));
    return w;
  }

  TrainOptions opts_;
  data::DatasetSplit split_;
  std::vector<PlaneF> train_targets_, val_targets_;

  ParameterVector<float> bp_nr_, vel_nr_;
  std::optional<ParameterVector<float>> bp_r_, vel_r_;
  std::optional<ParameterVector<float>> snapshot_nr_, snapshot_r_;
  std::optional<ensemble::MomentumState<float>> mom_nr_, mom_r_;
  std::optional<ensemble::SampleSet<float>> samples_nr_, samples_r_;
  std::optional<ensemble::EnsembleWeights<float>> weights_nr_, weights_r_;

  std::vector<nets::EdgeNet<float>> nr_engines_, r_engines_;
  Rng shuffle_rng_, augment_rng_, sample_rng_;
  int epoch_ = 0;
  std::vector<EpochStats> history_;
};

// ---------------------------------------------------------------------------

using CheckpointSink = std::function<void(int epoch, const io::Archive&)>;

inline TrainResult train_collaborative(std::vector<data::AnnotatedImage> dataset,
                                       TrainOptions opts,
                                       const CheckpointSink& sink = {}) {
  opts.efficient = false;
  Trainer trainer(std::move(dataset), std::move(opts));
  while (trainer.epoch() < trainer.options().loss.epochs) {
    trainer.run_epoch();
    if (sink) sink(trainer.epoch() - 1, trainer.checkpoint());
  }
  return trainer.finish();
}

inline TrainResult train_efficient(std::vector<data::AnnotatedImage> dataset,
                                   TrainOptions opts,
                                   const CheckpointSink& sink = {}) {
  opts.efficient = true;
  opts.mode = AblationMode::full;
  Trainer trainer(std::move(dataset), std::move(opts));
  while (trainer.epoch() < trainer.options().loss.epochs) {
    trainer.run_epoch();
    if (sink) sink(trainer.epoch() - 1, trainer.checkpoint());
  }
  return trainer.finish();
}

}  // namespace coedge::train
