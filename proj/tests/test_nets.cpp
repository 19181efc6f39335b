#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coedge/checkpoint.hpp"
#include "coedge/nets.hpp"

#include <filesystem>

using namespace coedge;
using namespace coedge::nets;

namespace {

FeatureMap<double> random_feature(Index c, Index h, Index w, Rng& rng) {
  FeatureMap<double> f(c, 1, h, w);
  for (Index i = 0; i < f.data.cols(); ++i)
    for (Index r = 0; r < c; ++r) f.data(r, i) = rng.normal();
  return f;
}

}  // namespace

TEST_CASE("aggregate_f2c unrolls the recurrence") {
  Rng rng(11);
  // T = 2 direct example: F = (A, B + Down(A))
  std::vector<FeatureMap<double>> z;
  z.push_back(random_feature(1, 6, 6, rng));
  z.push_back(random_feature(1, 3, 3, rng));
  auto f = aggregate_f2c(z);
  CHECK((f[0].data - z[0].data).cwiseAbs().maxCoeff() == 0.0);
  PoolCtx<double> ctx;
  FeatureMap<double> down;
  maxpool2_forward(ctx, z[0], down);
  CHECK((f[1].data - (z[1].data + down.data)).cwiseAbs().maxCoeff() == 0.0);

  // T = 3 loop-free expansion oracle: F3 = Z3 + Down(Z2 + Down(Z1))
  std::vector<FeatureMap<double>> z3;
  z3.push_back(random_feature(2, 8, 8, rng));
  z3.push_back(random_feature(2, 4, 4, rng));
  z3.push_back(random_feature(2, 2, 2, rng));
  auto f3 = aggregate_f2c(z3);
  PoolCtx<double> c1, c2;
  FeatureMap<double> d1, mid, d2;
  maxpool2_forward(c1, z3[0], d1);
  mid = z3[1];
  mid.data += d1.data;
  maxpool2_forward(c2, mid, d2);
  FeatureMap<double> expect = z3[2];
  expect.data += d2.data;
  CHECK((f3[2].data - expect.data).cwiseAbs().maxCoeff() < 1e-12);

  // all-zero input stays zero (linearity)
  for (auto& m : z3) m.data.setZero();
  auto fz = aggregate_f2c(z3);
  for (const auto& m : fz) CHECK(m.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("aggregate_c2f mirrors aggregate_f2c on equal scales") {
  Rng rng(12);
  std::vector<FeatureMap<double>> z;
  for (int t = 0; t < 4; ++t) z.push_back(random_feature(1, 5, 5, rng));

  // With identity down/up on equal-scale inputs the two directions are
  // reverses of each other.
  auto identity_down = [](const FeatureMap<double>& x) { return x; };
  auto identity_up = [](const FeatureMap<double>& x, Index, Index) { return x; };
  auto f2c = aggregate_f2c(z, identity_down);
  std::vector<FeatureMap<double>> reversed(z.rbegin(), z.rend());
  auto c2f = aggregate_c2f(reversed, identity_up);
  for (std::size_t t = 0; t < z.size(); ++t)
    CHECK((f2c[t].data - c2f[z.size() - 1 - t].data).cwiseAbs().maxCoeff() ==
          0.0);

  // T = 1: no accumulation on either side
  std::vector<FeatureMap<double>> single{z[0]};
  CHECK((aggregate_f2c(single)[0].data - z[0].data).cwiseAbs().maxCoeff() == 0.0);
  CHECK((aggregate_c2f(single)[0].data - z[0].data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("test_activation values and logistic identity") {
  CHECK(test_activation(0.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(test_activation(40.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(test_activation(-40.0) == doctest::Approx(0.0).epsilon(1e-12));

  // Independent evaluation of both closed forms at x = 1.
  const double x = 1.0;
  const double direct =
      std::exp(x - 0.5) / (std::exp(x - 0.5) + std::exp(-x + 0.5));
  const double logistic = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(test_activation(x) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(test_activation(x) == doctest::Approx(logistic).epsilon(1e-14));
}

TEST_CASE("forward passes are pure and zero nets output 0.5") {
  for (NetKind kind : {NetKind::recurrent, NetKind::nonrecurrent}) {
    NetConfig cfg;
    cfg.kind = kind;
    cfg.steps = 3;
    cfg.stage_widths = kind == NetKind::recurrent ? std::vector<int>{6}
                                                  : std::vector<int>{4, 5, 6};
    cfg.side_channels = 3;
    EdgeNet<double> net(cfg);
    net.init(77);

    Rng rng(5);
    auto x = random_feature(3, 12, 10, rng);
    auto r1 = net.forward(x);
    auto r2 = net.forward(x);
    CHECK((r1.fused.data - r2.fused.data).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t t = 0; t < r1.f2c_side.size(); ++t)
      CHECK((r1.f2c_side[t].data - r2.f2c_side[t].data).cwiseAbs().maxCoeff() ==
            0.0);
    CHECK(r1.fused.data.maxCoeff() < 1.0);
    CHECK(r1.fused.data.minCoeff() > 0.0);
    CHECK(Index(r1.f2c_side.size()) == cfg.steps);
    CHECK(Index(r1.c2f_side.size()) == cfg.steps);

    // all-zero parameters: fused logit 0 -> sigma(0) = 0.5 everywhere
    auto zero = zeros_like(net.params());
    net.set_params(zero);
    auto rz = net.forward(x);
    CHECK(rz.fused.data.isApproxToConstant(0.5, 1e-12));
  }
}

TEST_CASE("recurrent T=1 degenerate config works") {
  NetConfig cfg;
  cfg.kind = NetKind::recurrent;
  cfg.steps = 1;
  cfg.stage_widths = {4};
  cfg.side_channels = 2;
  EdgeNet<double> net(cfg);
  net.init(3);
  Rng rng(4);
  auto x = random_feature(3, 6, 6, rng);
  auto r = net.forward(x);
  CHECK(r.f2c_side.size() == 1);
  // with a single step the aggregated side equals the raw decoder output
  CHECK((r.f2c_side[0].data - to_feature(to_plane(r.f2c_side[0])).data)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("undersized inputs are rejected") {
  NetConfig cfg = recurrent_config(SizeClass::tiny);  // T = 5 -> minimum 16
  EdgeNet<float> net(cfg);
  net.init(1);
  FeatureMap<float> x(3, 1, 15, 64);
  CHECK_THROWS_AS(net.forward(x), ShapeError);
}

TEST_CASE("nonrecurrent widths grow as resolution shrinks") {
  auto cfg = nonrecurrent_config(SizeClass::normal);
  for (std::size_t i = 1; i < cfg.stage_widths.size(); ++i)
    CHECK(cfg.stage_widths[i] > cfg.stage_widths[i - 1]);

  NetConfig bad = cfg;
  bad.stage_widths = {12, 10, 34, 70};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("parameter budgets match the published sizes within 15%") {
  const double target[] = {315e3, 487e3, 716e3, 4.3e6};
  const SizeClass cls[] = {SizeClass::tiny, SizeClass::small, SizeClass::normal,
                           SizeClass::large};
  for (int i = 0; i < 4; ++i) {
    EdgeNet<float> net(nonrecurrent_config(cls[i]));
    const double count = double(net.parameter_count());
    CHECK(std::abs(count / target[i] - 1.0) < 0.15);
  }
  // the recurrent partner stays compact thanks to weight sharing
  EdgeNet<float> rec(recurrent_config(SizeClass::normal));
  EdgeNet<float> nr(nonrecurrent_config(SizeClass::normal));
  CHECK(rec.parameter_count() < nr.parameter_count() / 4);
}

TEST_CASE("sample_dropout_params identity, concentration, determinism") {
  NetConfig cfg = nonrecurrent_config(SizeClass::tiny, 3);
  EdgeNet<float> net(cfg);
  net.init(9);
  auto theta = net.params();

  Rng rng(1);
  auto same = sample_dropout_params(theta, 0.0, rng);
  CHECK(bitwise_equal(theta, same));

  Rng rng2(2);
  auto dropped = sample_dropout_params(theta, 0.5, rng2);
  Index zeros = 0, total = 0;
  for (std::size_t e = 0; e < dropped.entries.size(); ++e) {
    for (Index i = 0; i < dropped.entries[e].values.size(); ++i) {
      ++total;
      if (dropped.entries[e].values[i] == 0.0f)
        ++zeros;
      else
        CHECK(dropped.entries[e].values[i] ==
              doctest::Approx(theta.entries[e].values[i] * 2.0f));
    }
  }
  CHECK(std::abs(double(zeros) / double(total) - 0.5) < 0.01);

  Rng a(7), b(7);
  CHECK(bitwise_equal(sample_dropout_params(theta, 0.3, a),
                      sample_dropout_params(theta, 0.3, b)));

  Rng bad(1);
  CHECK_THROWS_AS(sample_dropout_params(theta, 1.0, bad), ConfigError);
}

TEST_CASE("prune_params identity, pool membership, expected fraction") {
  ParameterVector<float> theta;
  auto& e = theta.add("w", {100});
  Rng init(3);
  for (Index i = 0; i < 100; ++i) e.values[i] = float(init.normal());
  e.values[17] = 1e-8f;  // smallest magnitude, guaranteed pool member

  Rng rng(5);
  CHECK(bitwise_equal(prune_params(theta, 0.0, rng), theta));

  // the zero entry is always inside the smallest-10% pool: over many seeds it
  // must be zeroed roughly prune_prob of the time, large entries never
  int zeroed_17 = 0;
  const Index largest = [&] {
    Index arg = 0;
    for (Index i = 0; i < 100; ++i)
      if (std::abs(e.values[i]) > std::abs(e.values[arg])) arg = i;
    return arg;
  }();
  double zero_fraction = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    Rng r(mix_seed(1000, t));
    auto pruned = prune_params(theta, 0.5, r, 0.1);
    if (pruned.entries[0].values[17] == 0.0f) ++zeroed_17;
    CHECK(pruned.entries[0].values[largest] == e.values[largest]);
    Index z = 0;
    for (Index i = 0; i < 100; ++i)
      if (pruned.entries[0].values[i] == 0.0f && e.values[i] != 0.0f) ++z;
    zero_fraction += double(z) / 100.0;
  }
  CHECK(zeroed_17 > 400);  // ~0.5 of trials
  CHECK(zeroed_17 < 600);
  zero_fraction /= trials;
  CHECK(std::abs(zero_fraction - 0.1 * 0.5) < 0.015);

  Rng bad(1);
  CHECK_THROWS_AS(prune_params(theta, 1.0, bad), ConfigError);
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  NetConfig cfg = nonrecurrent_config(SizeClass::tiny, 3);
  EdgeNet<float> net(cfg);
  net.init(123);
  auto theta = net.params();

  const fs::path path = fs::temp_directory_path() / "coedge_ckpt_test.bin";
  io::save_model(path, theta, cfg, 123);
  auto loaded = io::load_model(path);
  CHECK(bitwise_equal(theta, loaded.params));
  CHECK(loaded.seed == 123);
  CHECK(loaded.config.kind == cfg.kind);
  CHECK(loaded.config.stage_widths == cfg.stage_widths);
  fs::remove(path);
}

TEST_CASE("spec-level forward wrappers validate kinds") {
  NetConfig rec = recurrent_config(SizeClass::tiny, 2);
  EdgeNet<float> net(rec);
  net.init(5);
  FeatureMap<float> x(3, 1, 8, 8);
  x.data.setConstant(0.25f);
  auto out = forward_recurrent(x, net.params(), rec);
  CHECK(out.fused.data.minCoeff() > 0.0f);
  CHECK_THROWS_AS(forward_nonrecurrent(x, net.params(), rec), ConfigError);
}
