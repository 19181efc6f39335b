#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coedge/losses.hpp"
#include "coedge/nets.hpp"
#include "oracles.hpp"

using namespace coedge;
using namespace coedge::nets;
using namespace coedge::train;

namespace {

// Full-network objective: summed side/fused losses over a random batch.
struct NetProbe {
  EdgeNet<double> net;
  FeatureMap<double> x;
  std::vector<Plane<double>> y_hard, y_soft;
  double lambda = 1.1;

  explicit NetProbe(const NetConfig& cfg, std::uint64_t seed) : net(cfg) {
    net.init(seed);
    Rng rng(mix_seed(seed, 99));
    const Index h = 8, w = 8, batch = 2;
    x = FeatureMap<double>(3, batch, h, w);
    for (Index i = 0; i < x.data.size(); ++i)
      x.data(i % 3, i / 3) = rng.uniform();
    for (Index b = 0; b < batch; ++b) {
      Plane<double> yh(h, w), ys(h, w);
      for (Index i = 0; i < yh.size(); ++i) {
        yh(i) = rng.bernoulli(0.2) ? 1.0 : 0.0;
        ys(i) = rng.uniform();
      }
      y_hard.push_back(yh);
      y_soft.push_back(ys);
    }
  }

  double loss() {
    auto fwd = net.forward(x);
    double total = 0.0;
    for (Index b = 0; b < x.batch; ++b)
      total += total_losses(fwd, y_hard[b], y_soft[b], lambda, b);
    return total;
  }

  ParameterVector<double> analytic() {
    net.zero_grad();
    auto fwd = net.forward(x);
    auto bl = batch_loss_grads(fwd, y_hard, y_soft, lambda, 1.0);
    net.backward(bl.dfused, bl.dsides_f2c, bl.dsides_c2f);
    return net.grads();
  }
};

void check_net_gradients(const NetConfig& cfg, std::uint64_t seed,
                         double tolerance) {
  NetProbe probe(cfg, seed);
  auto grads = probe.analytic();
  auto params = probe.net.params();

  // floor relative errors at 1% of the typical gradient magnitude
  double mean_abs = 0.0;
  Index count = 0;
  for (const auto& e : grads.entries) {
    mean_abs += e.values.cwiseAbs().sum();
    count += e.values.size();
  }
  const double floor = 0.01 * mean_abs / double(count);

  // Central differences are only a derivative estimate on coordinates whose
  // +-step segment keeps the activation topology fixed; the others sit on a
  // ReLU/pooling kink where the loss has one-sided slopes.
  probe.loss();
  const std::uint64_t base_sig = probe.net.topology_signature();
  auto eval_with_sig = [&](std::uint64_t& sig) {
    probe.net.set_params(params);
    const double f = probe.loss();
    sig = probe.net.topology_signature();
    return f;
  };

  oracles::FdCheckResult result;
  const double step = 1e-3;
  for (std::size_t e = 0; e < params.entries.size(); ++e) {
    auto& entry = params.entries[e];
    const Index stride = std::max<Index>(1, entry.values.size() / 6);
    for (Index i = 0; i < entry.values.size(); i += stride) {
      double& x = entry.values(i);
      const double saved = x;
      std::uint64_t sig_p = 0, sig_m = 0;
      x = saved + step;
      const double fp = eval_with_sig(sig_p);
      x = saved - step;
      const double fm = eval_with_sig(sig_m);
      x = saved;
      if (sig_p != base_sig || sig_m != base_sig) {
        ++result.skipped;
        continue;
      }
      ++result.checked;
      const double fd = (fp - fm) / (2.0 * step);
      result.worst_rel = std::max(
          result.worst_rel,
          oracles::rel_error(grads.entries[e].values(i), fd, floor));
    }
  }
  probe.net.set_params(params);
  CHECK(result.worst_rel < tolerance);
  // kink-window coordinates must stay a minority of the probes
  CHECK(result.checked >= 40);
  CHECK(result.checked >= result.skipped);
}

}  // namespace

TEST_CASE("weighted_bce gradient matches finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    Plane<double> pred(8, 8), y(8, 8);
    for (Index i = 0; i < pred.size(); ++i) {
      // away from the clamp region, where the 1e-3 step stays in the
      // truncation budget
      pred(i) = 0.1 + 0.8 * rng.uniform();
      y(i) = rng.bernoulli(0.3) ? 1.0 : 0.0;
    }
    const double alpha = 0.3 + rng.uniform(), beta = 0.2 + rng.uniform();
    Plane<double> grad = weighted_bce_grad(pred, y, alpha, beta);
    for (Index i = 0; i < pred.size(); i += 5) {
      const double fd = oracles::central_diff(
          [&]() { return weighted_bce(pred, y, alpha, beta); }, pred(i), 1e-3);
      CHECK(oracles::rel_error(grad(i), fd) < 1e-4);
    }
  }
}

TEST_CASE("recurrent network gradients match finite differences") {
  NetConfig cfg;
  cfg.kind = NetKind::recurrent;
  cfg.steps = 3;
  cfg.stage_widths = {5};
  cfg.side_channels = 3;
  check_net_gradients(cfg, 1234, 1e-4);
}

TEST_CASE("nonrecurrent network gradients match finite differences") {
  NetConfig cfg;
  cfg.kind = NetKind::nonrecurrent;
  cfg.steps = 3;
  cfg.stage_widths = {4, 5, 7};
  cfg.side_channels = 3;
  check_net_gradients(cfg, 4321, 1e-4);
}
