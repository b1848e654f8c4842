#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "tdformer/spiking.hpp"

using namespace tdformer;

namespace {

NeuronState state_of(double v) { return NeuronState{make_tensor(Shape{1, 1, 1}, {v}), {}}; }
Var scalar_input(double x) { return make_tensor(Shape{1, 1, 1}, {x}); }

}  // namespace

TEST_CASE("lif_step direct evaluation") {
  LifConfig cfg;
  LifStep a = lif_step(state_of(0.0), scalar_input(2.0), cfg);
  CHECK(a.h->values[0] == doctest::Approx(1.0));
  CHECK(a.spikes.bits()[0] == 1.0);
  CHECK(a.state.v->values[0] == 0.0);

  LifStep b = lif_step(state_of(0.0), scalar_input(0.5), cfg);
  CHECK(b.h->values[0] == doctest::Approx(0.25));
  CHECK(b.spikes.bits()[0] == 0.0);
  CHECK(b.state.v->values[0] == doctest::Approx(0.25));

  NeuronState s = state_of(0.0);
  for (int t = 0; t < 5; ++t) {
    LifStep q = lif_step(s, scalar_input(0.0), cfg);
    CHECK(q.h->values[0] == 0.0);
    CHECK(q.spikes.bits()[0] == 0.0);
    s = q.state;
  }
}

TEST_CASE("lif_step errors") {
  LifConfig cfg;
  CHECK_THROWS_AS(lif_step(state_of(0.0), make_tensor(Shape{2}, {1, 1}), cfg), DimensionError);
  CHECK_THROWS_AS(lif_step(state_of(0.0), scalar_input(std::nan("")), cfg), NumericError);
  LifConfig bad;
  bad.tau = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LifConfig{};
  bad.v_reset = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("surrogate window") {
  LifConfig one;
  CHECK(surrogate_grad(1.2, one) == 1.0);
  CHECK(surrogate_grad(2.0, one) == 0.0);
  CHECK(surrogate_grad(0.5, one) == 0.0);
  LifConfig two;
  two.v_th = 2.0;
  CHECK(surrogate_grad(2.5, two) == 0.5);
}

TEST_CASE("run_sequence base case and constant drive") {
  LifConfig cfg;
  Var x = make_tensor(Shape{1, 1, 2, 1}, {2.0, 0.5});
  LifSequence seq = run_sequence(x, cfg);
  LifStep step = lif_step(initial_state(Shape{1, 1, 2, 1}, cfg), x, cfg);
  CHECK(std::vector<double>(seq.spikes.bits().begin(), seq.spikes.bits().end()) ==
        std::vector<double>(step.spikes.bits().begin(), step.spikes.bits().end()));
  CHECK(seq.final_state.v->values == step.state.v->values);

  Var drive = full(Shape{6, 1, 1, 1}, 2.0 * cfg.tau);
  LifSequence all = run_sequence(drive, cfg);
  for (double b : all.spikes.bits()) CHECK(b == 1.0);
}

TEST_CASE("property: binary output, exact reset, leak bound") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01(0.8, 1.0);
  LifConfig cfg;
  cfg.tau = 3.0;
  const std::size_t T = 20;
  std::vector<double> xs(T * 16);
  for (double& v : xs) v = n01(rng);
  Var x = make_tensor(Shape{T, 2, 8, 1}, xs);
  NeuronState s = initial_state(Shape{1, 2, 8, 1}, cfg);
  for (std::size_t t = 0; t < T; ++t) {
    LifStep step = lif_step(s, slice(x, 0, t, t + 1), cfg);
    for (std::size_t i = 0; i < 16; ++i) {
      const double b = step.spikes.bits()[i];
      CHECK((b == 0.0 || b == 1.0));
      if (b == 1.0) CHECK(step.state.v->values[i] == cfg.v_reset);
    }
    s = step.state;
  }
  NeuronState leak = state_of(0.9);
  for (int t = 0; t < 6; ++t) {
    LifStep step = lif_step(leak, scalar_input(0.0), cfg);
    CHECK(std::abs(step.state.v->values[0]) ==
          doctest::Approx(cfg.leak() * std::abs(leak.v->values[0])).epsilon(1e-14));
    leak = step.state;
  }
}

TEST_CASE("soft-reset sensitivity dH(t+1)/dH(t) equals the gated leak") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 2.5);
  LifConfig cfg;
  cfg.reset = ResetMode::soft;
  for (int trial = 0; trial < 200; ++trial) {
    Var h = make_tensor(Shape{1}, {u(rng)}, true);
    Var s = spike_fn(h, cfg);
    NeuronState st{sub(h, scale(s, cfg.v_th)), {}};
    LifStep next = lif_step(st, make_tensor(Shape{1}, {u(rng)}), cfg);
    backward(next.h);
    const double hv = h->values[0];
    const bool in_window = hv > cfg.window_lo() && hv < cfg.window_hi();
    CHECK(h->grad[0] == doctest::Approx(in_window ? 0.0 : cfg.leak()).epsilon(1e-15));
  }
}

TEST_CASE("BPTT gradient flows through reset and charge") {
  LifConfig cfg;
  // Surrogate-based gradients are piecewise; check the charge path against
  // finite differences far from every threshold crossing.
  Var x = make_tensor(Shape{3, 1, 1, 2}, {0.3, 0.4, 0.35, 0.2, 0.1, 0.25}, true);
  CHECK(testing::gradcheck({x}, [&] {
          LifSequence seq = run_sequence(x, cfg);
          Var acc = zeros(Shape{1, 1, 1, 2});
          for (const Var& h : seq.h) acc = add(acc, hadamard(h, h));
          return sum_all(acc);
        }) < 1e-7);
}
