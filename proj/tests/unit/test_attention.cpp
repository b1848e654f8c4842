#include <doctest.h>

#include <cmath>
#include <random>

#include "tdformer/attention.hpp"

using namespace tdformer;

namespace {

SpikeTensor bits(Shape shape, std::vector<double> v) {
  return SpikeTensor(make_tensor(std::move(shape), std::move(v)));
}

SpikeTensor random_spikes(Shape shape, double f, Rng& rng) {
  std::bernoulli_distribution bern(f);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = bern(rng) ? 1.0 : 0.0;
  return bits(std::move(shape), std::move(v));
}

std::vector<double> values(const SpikeTensor& s) { return {s.bits().begin(), s.bits().end()}; }

double total_ops(const OpCounter& c) { return c.total().macs + c.total().elementwise; }

}  // namespace

TEST_CASE("make_qkv quiescent input and compositional oracle") {
  Rng rng(1);
  ParameterStore store;
  LifConfig lif;
  QkvWeights w{SpikingLinear::create(store, "q", 4, 4, lif, rng),
               SpikingLinear::create(store, "k", 4, 4, lif, rng),
               SpikingLinear::create(store, "v", 4, 4, lif, rng)};
  RunContext ctx;
  Qkv zero = make_qkv(SpikeTensor::zeros(Shape{2, 1, 3, 4}), w, ctx);
  CHECK(zero.q.firing_rate() == 0.0);
  CHECK(zero.k.firing_rate() == 0.0);
  CHECK(zero.v.firing_rate() == 0.0);

  SpikeTensor x = random_spikes(Shape{3, 2, 5, 4}, 0.5, rng);
  ParameterStore store2;
  Rng rng2(9);
  SpikingLinear q = SpikingLinear::create(store2, "q", 4, 4, lif, rng2);
  RunContext c2;
  Qkv out = make_qkv(x, QkvWeights{q, q, q}, c2);
  for (double b : out.q.bits()) CHECK((b == 0.0 || b == 1.0));

  // Oracle: BN over the whole time-major batch, then an explicit LIF loop.
  RunContext c3;
  Var current = q.current(x.node(), c3.mode);
  std::vector<double> v(2 * 5 * 4, 0.0);
  std::vector<double> expect;
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double h = v[i] + (current->values[t * v.size() + i] - v[i]) / lif.tau;
      const double s = h >= lif.v_th ? 1.0 : 0.0;
      v[i] = h * (1 - s);
      expect.push_back(s);
    }
  }
  CHECK(values(out.q) == expect);
}

TEST_CASE("ssa brute-force 2x2 example") {
  Qkv x{bits(Shape{1, 1, 2, 2}, {1, 0, 1, 1}), bits(Shape{1, 1, 2, 2}, {0, 1, 1, 0}),
        bits(Shape{1, 1, 2, 2}, {1, 1, 0, 1})};
  const double Q[2][2] = {{1, 0}, {1, 1}}, K[2][2] = {{0, 1}, {1, 0}}, V[2][2] = {{1, 1}, {0, 1}};
  LifConfig lif;
  std::vector<double> expect;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c) acc += Q[i][c] * K[n][c] * V[n][j];
      const double h = acc * 0.25 / lif.tau;
      expect.push_back(h >= lif.v_th ? 1.0 : 0.0);
    }
  CHECK(values(ssa(x, 0.25, 1, lif)) == expect);
  Var pre = qktv(x, 1);
  CHECK(pre->values == std::vector<double>{0, 1, 1, 2});
  Qkv zero{SpikeTensor::zeros(Shape{1, 1, 2, 2}), SpikeTensor::zeros(Shape{1, 1, 2, 2}),
           SpikeTensor::zeros(Shape{1, 1, 2, 2})};
  CHECK(ssa(zero, 0.125, 1, lif).firing_rate() == 0.0);
  CHECK(sdsa2(zero, 0.125, 1, lif).firing_rate() == 0.0);
  CHECK_THROWS_AS(ssa(Qkv{x.q, SpikeTensor::zeros(Shape{1, 1, 3, 2}), x.v}, 0.25, 1, lif),
                  DimensionError);
}

TEST_CASE("sdsa1 examples and masking") {
  LifConfig lif;
  SpikeTensor ones = bits(Shape{1, 1, 3, 1}, {1, 1, 1});
  SpikeTensor q = bits(Shape{1, 1, 3, 1}, {1, 0, 1});
  CHECK(values(sdsa1(Qkv{q, ones, ones}, lif)) == values(q));
  CHECK(sdsa1(Qkv{q, ones, SpikeTensor::zeros(Shape{1, 1, 3, 1})}, lif).firing_rate() == 0.0);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Qkv x{random_spikes(Shape{2, 2, 6, 4}, 0.4, rng), random_spikes(Shape{2, 2, 6, 4}, 0.5, rng),
          random_spikes(Shape{2, 2, 6, 4}, 0.5, rng)};
    SpikeTensor out = sdsa1(x, lif);
    for (std::size_t i = 0; i < out.bits().size(); ++i) CHECK(out.bits()[i] <= x.q.bits()[i]);
  }
}

TEST_CASE("sdsa2 cross-check with ssa and monotonicity in s") {
  Rng rng(3);
  LifConfig lif;
  for (int trial = 0; trial < 10; ++trial) {
    Qkv x{random_spikes(Shape{3, 1, 5, 4}, 0.5, rng), random_spikes(Shape{3, 1, 5, 4}, 0.5, rng),
          random_spikes(Shape{3, 1, 5, 4}, 0.5, rng)};
    CHECK(values(sdsa2(x, 1.0, 1, lif)) == values(ssa(x, 1.0, 1, lif)));
    double last = 1e300;
    for (double s : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
      const double count = sdsa2(x, s, 2, lif).firing_rate();
      CHECK(count <= last);
      last = count;
    }
  }
}

TEST_CASE("qk token attention example and zero query") {
  LifConfig unit_gain;
  unit_gain.reset = ResetMode::soft;
  SpikeTensor q = bits(Shape{1, 1, 2, 2}, {1, 0, 1, 1});
  SpikeTensor k = bits(Shape{1, 1, 2, 2}, {0, 1, 1, 1});
  CHECK(values(qk_attention(q, k, QkMode::token, 1, unit_gain)) == values(k));
  // With the hard-reset charge gain 1/tau a channel sum of 1 stays subthreshold.
  LifConfig hard;
  CHECK(values(qk_attention(q, k, QkMode::token, 1, hard)) == std::vector<double>{0, 0, 1, 1});
  CHECK(qk_attention(SpikeTensor::zeros(Shape{1, 1, 2, 2}), k, QkMode::channel, 1, hard)
            .firing_rate() == 0.0);
  CHECK_THROWS_AS(parse_qk_mode("diagonal"), ConfigError);
}

TEST_CASE("qk token attention is local to each token") {
  Rng rng(4);
  LifConfig lif;
  SpikeTensor q = random_spikes(Shape{2, 1, 6, 8}, 0.5, rng);
  SpikeTensor k = random_spikes(Shape{2, 1, 6, 8}, 0.5, rng);
  SpikeTensor base = qk_attention(q, k, QkMode::token, 2, lif);
  std::vector<double> qv = values(q);
  for (std::size_t c = 0; c < 8; ++c) qv[3 * 8 + c] = 1.0 - qv[3 * 8 + c];  // token 3, t=0
  SpikeTensor moved = qk_attention(bits(q.shape(), qv), k, QkMode::token, 2, lif);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t n = 0; n < 6; ++n) {
      if (n == 3) continue;
      for (std::size_t c = 0; c < 8; ++c) {
        const std::size_t i = (t * 6 + n) * 8 + c;
        CHECK(base.bits()[i] == moved.bits()[i]);
      }
    }
}

TEST_CASE("operation counts: linear for qk attention, quadratic for ssa") {
  Rng rng(5);
  LifConfig lif;
  auto count = [&](std::size_t n, AttentionKind kind) {
    const Shape s{1, 1, n, 16};
    Qkv x{random_spikes(s, 0.5, rng), random_spikes(s, 0.5, rng), random_spikes(s, 0.5, rng)};
    AttentionConfig cfg;
    cfg.kind = kind;
    OpCounter counter;
    CountingScope scope(counter);
    attend(x, cfg);
    return total_ops(counter);
  };
  for (std::size_t n : {8u, 32u, 64u}) {
    CHECK(count(2 * n, AttentionKind::qkta) / count(n, AttentionKind::qkta) ==
          doctest::Approx(2.0).epsilon(0.005));
    CHECK(count(2 * n, AttentionKind::qkca) / count(n, AttentionKind::qkca) ==
          doctest::Approx(2.0).epsilon(0.005));
    CHECK(count(2 * n, AttentionKind::ssa) / count(n, AttentionKind::ssa) ==
          doctest::Approx(4.0).epsilon(0.005));
  }
}

TEST_CASE("attention config validation") {
  AttentionConfig cfg;
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(8), ConfigError);
  cfg.heads = 2;
  cfg.kind = AttentionKind::ssa;
  cfg.scale = 0.0;
  CHECK_THROWS_AS(cfg.validate(8), ConfigError);
  CHECK_THROWS_AS(parse_attention_kind("softmax"), ConfigError);
  CHECK(parse_attention_kind("sdsa2") == AttentionKind::sdsa2);
}

TEST_CASE("all attention outputs are binary; ssa pre-activations are integers") {
  Rng rng(6);
  LifConfig lif;
  for (AttentionKind kind : {AttentionKind::ssa, AttentionKind::sdsa1, AttentionKind::sdsa2,
                             AttentionKind::qkta, AttentionKind::qkca}) {
    const Shape s{2, 2, 6, 8};
    Qkv x{random_spikes(s, 0.3, rng), random_spikes(s, 0.6, rng), random_spikes(s, 0.5, rng)};
    AttentionConfig cfg;
    cfg.kind = kind;
    cfg.heads = 2;
    SpikeTensor out = attend(x, cfg);
    CHECK(out.shape() == s);
    for (double b : out.bits()) CHECK((b == 0.0 || b == 1.0));
    Var pre = qktv(x, 2);
    for (double v : pre->values) CHECK((v >= 0.0 && v == std::floor(v)));
  }
}

TEST_CASE("pm spatial attention examples") {
  LifConfig lif;
  SpikeTensor ones = SpikeTensor(full(Shape{2, 1, 3, 4}, 1.0));
  SpatialAttention zero_w = pm_spatial_attention(ones, zeros(Shape{4}), 0.0, 1.5, lif);
  CHECK(zero_w.out.firing_rate() == 0.0);
  for (double m : zero_w.m->values) CHECK(m == 0.0);

  Var w = make_tensor(Shape{4}, {1.0, 0.5, 0.5, 1.0});
  SpatialAttention sat = pm_spatial_attention(ones, w, 0.0, 1.5, lif);
  for (double m : sat.m->values) CHECK(m == 1.5);
  for (double p : sat.pre->values) CHECK(p == 1.5);
  CHECK_THROWS_AS(pm_spatial_attention(ones, w, 1.0, 1.0, lif), ConfigError);
  CHECK_THROWS_AS(pm_spatial_attention(ones, zeros(Shape{3}), 0.0, 1.0, lif), DimensionError);
}

TEST_CASE("pm spatial attention gradient is masked outside the clamp range") {
  LifConfig lif;
  SpikeTensor x = bits(Shape{1, 1, 2, 2}, {1, 1, 1, 0});
  Var w = make_tensor(Shape{2}, {1.0, 1.0}, true);
  SpatialAttention sa = pm_spatial_attention(x, w, 0.0, 1.5, lif);
  backward(sum_all(sa.pre));
  // Token 0 has M = 2 (clipped), token 1 has M = 1 (inside).
  CHECK(w->grad == std::vector<double>{1.0, 0.0});
}
