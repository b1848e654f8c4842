#include <doctest.h>

#include <algorithm>
#include <random>

#include "tdformer/topdown.hpp"

using namespace tdformer;

namespace {

SpikeTensor random_spikes(Shape shape, double f, Rng& rng) {
  std::bernoulli_distribution bern(f);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = bern(rng) ? 1.0 : 0.0;
  return SpikeTensor(make_tensor(std::move(shape), std::move(v)));
}

std::vector<double> values(const SpikeTensor& s) { return {s.bits().begin(), s.bits().end()}; }

}  // namespace

TEST_CASE("schedule construction and validation") {
  SubnetSchedule s = SubnetSchedule::uniform(4, 2);
  CHECK(s.segments == std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}, {2, 4}});
  CHECK(s.alphas == std::vector<double>{0.25, 0.75});
  CHECK_FALSE(s.fine_grained());
  CHECK(SubnetSchedule::uniform(4, 4).fine_grained());
  CHECK(SubnetSchedule::uniform(4, 1).alphas == std::vector<double>{1.0});
  CHECK_THROWS_AS(SubnetSchedule::uniform(4, 3), ConfigError);
  CHECK_THROWS_AS(SubnetSchedule::uniform(4, 2, {0.5, 0.6}), ConfigError);
  SubnetSchedule gap = s;
  gap.segments = {{0, 1}, {2, 4}};
  CHECK_THROWS_AS(gap.validate(), ConfigError);
  SubnetSchedule uneven;
  uneven.total_T = 5;
  uneven.segments = {{0, 2}, {2, 5}};
  uneven.alphas = {0.4, 0.6};
  CHECK_NOTHROW(uneven.validate());
}

TEST_CASE("feedback alignment") {
  Rng rng(1);
  SpikeTensor s = random_spikes(Shape{2, 1, 3, 2}, 0.5, rng);
  CHECK(values(align_feedback(s, 2)) == values(s));
  SpikeTensor wide = align_feedback(s, 3);
  CHECK(wide.shape() == Shape{3, 1, 3, 2});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 6; ++i) CHECK(wide.bits()[t * 6 + i] == s.bits()[6 + i]);
}

TEST_CASE("control module variants") {
  const std::size_t c = 6;
  LifConfig lif;
  Rng data(2);
  SpikeTensor s_bu = random_spikes(Shape{3, 2, 5, c}, 0.5, data);
  FeedbackSignal fb{random_spikes(Shape{3, 2, 5, c}, 0.6, data), 0};
  FeedbackSignal zero{SpikeTensor::zeros(Shape{3, 2, 5, c}), 0};

  for (CmVariant variant : {CmVariant::cm1, CmVariant::cm2, CmVariant::cm3}) {
    ParameterStore store;
    Rng rng(3), td(4);
    ControlWeights w = create_control(store, "b", c, variant, true, lif, rng, td);
    RunContext ctx;
    Qkv none = control_module(s_bu, nullptr, w, ctx);
    Qkv zeros_in = control_module(s_bu, &zero, w, ctx);
    Qkv with = control_module(s_bu, &fb, w, ctx);
    CHECK(values(none.q) == values(zeros_in.q));
    CHECK(values(none.k) == values(zeros_in.k));
    CHECK(values(none.v) == values(zeros_in.v));
    for (const SpikeTensor* t : {&with.q, &with.k, &with.v}) {
      for (double b : t->bits()) CHECK((b == 0.0 || b == 1.0));
    }
    const bool q_same = values(with.q) == values(none.q);
    const bool k_same = values(with.k) == values(none.k);
    const bool v_same = values(with.v) == values(none.v);
    if (variant == CmVariant::cm1) {
      CHECK(q_same);
      CHECK_FALSE(k_same);
      CHECK(v_same);
    } else if (variant == CmVariant::cm2) {
      CHECK(q_same);
      CHECK(k_same);
      CHECK_FALSE(v_same);
    } else {
      CHECK_FALSE(q_same);
      CHECK_FALSE(k_same);
      CHECK_FALSE(v_same);
    }
  }
}

TEST_CASE("control module errors") {
  LifConfig lif;
  ParameterStore store;
  Rng rng(5), td(6);
  ControlWeights w = create_control(store, "b", 4, CmVariant::cm1, true, lif, rng, td);
  RunContext ctx;
  SpikeTensor s_bu = SpikeTensor::zeros(Shape{1, 1, 2, 4});
  FeedbackSignal bad{SpikeTensor::zeros(Shape{1, 1, 2, 3}), 0};
  CHECK_THROWS_AS(control_module(s_bu, &bad, w, ctx), DimensionError);
  ParameterStore store2;
  ControlWeights plain = create_control(store2, "b", 4, CmVariant::cm1, false, lif, rng, td);
  FeedbackSignal ok{SpikeTensor::zeros(Shape{1, 1, 2, 4}), 0};
  CHECK_THROWS_AS(control_module(s_bu, &ok, plain, ctx), ConfigError);
}

TEST_CASE("processing module quiescence and clamp contract") {
  LifConfig lif;
  for (PmVariant v : {PmVariant::v1, PmVariant::v2, PmVariant::v3, PmVariant::v4}) {
    ParameterStore store;
    Rng rng(7);
    ProcessingWeights w = create_processing(store, "pm", 8, v, 0.0, 1.5, lif, rng);
    RunContext ctx;
    ProcessingOutput zero = processing_module(SpikeTensor::zeros(Shape{2, 2, 4, 8}), w, ctx);
    CHECK(zero.signal.s_td.firing_rate() == 0.0);
    Rng data(8);
    ProcessingOutput out = processing_module(random_spikes(Shape{2, 2, 4, 8}, 0.5, data), w, ctx);
    for (double m : out.m->values) CHECK((m >= 0.0 && m <= 1.5));
    for (double b : out.signal.s_td.bits()) CHECK((b == 0.0 || b == 1.0));
  }
  ParameterStore store;
  Rng rng(9);
  CHECK_THROWS_AS(create_processing(store, "pm", 4, PmVariant::v1, 1.0, 1.0, lif, rng),
                  ConfigError);
}

TEST_CASE("processing module v1 matches a stepwise composition") {
  LifConfig lif;
  ParameterStore store;
  Rng rng(10);
  ProcessingWeights w = create_processing(store, "pm", 4, PmVariant::v1, 0.0, 1.5, lif, rng);
  Rng data(11);
  SpikeTensor h = random_spikes(Shape{3, 2, 5, 4}, 0.5, data);
  RunContext ctx;
  ProcessingOutput out = processing_module(h, w, ctx);

  // Oracle: mixer current from the same layer, then explicit LIF loops.
  Var current = w.mix1.current(h.node(), NormMode::train);
  const std::size_t per_t = 2 * 5 * 4;
  std::vector<double> mixed(3 * per_t), v(per_t, 0.0);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < per_t; ++i) {
      const double hh = v[i] + (current->values[t * per_t + i] - v[i]) / lif.tau;
      const double s = hh >= lif.v_th ? 1.0 : 0.0;
      v[i] = hh * (1 - s);
      mixed[t * per_t + i] = s;
    }
  CHECK(values(out.mixed) == mixed);
  std::vector<double> expect(3 * per_t);
  std::fill(v.begin(), v.end(), 0.0);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t n = 0; n < 10; ++n) {
      double m = 0.0;
      for (std::size_t c = 0; c < 4; ++c) m += w.w_c->values[c] * mixed[t * per_t + n * 4 + c];
      m = std::clamp(m, 0.0, 1.5);
      for (std::size_t c = 0; c < 4; ++c) {
        const std::size_t i = n * 4 + c;
        const double x = mixed[t * per_t + i] * m;
        const double hh = v[i] + (x - v[i]) / lif.tau;
        const double s = hh >= lif.v_th ? 1.0 : 0.0;
        v[i] = hh * (1 - s);
        expect[t * per_t + i] = s;
      }
    }
  CHECK(values(out.signal.s_td) == expect);
}

TEST_CASE("variant parsing") {
  CHECK(parse_cm_variant("cm2") == CmVariant::cm2);
  CHECK(parse_pm_variant("v4") == PmVariant::v4);
  CHECK_THROWS_AS(parse_cm_variant("cm4"), ConfigError);
  CHECK_THROWS_AS(parse_pm_variant("v0"), ConfigError);
}
