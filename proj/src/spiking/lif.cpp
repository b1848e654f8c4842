#include <cmath>
#include <string>

#include "tdformer/spiking.hpp"

namespace tdformer {

void LifConfig::validate() const {
  if (!(tau > 1.0)) {
    throw ConfigError("lif tau must be > 1, got " + std::to_string(tau));
  }
  if (!(v_th > 0.0)) {
    throw ConfigError("lif v_th must be > 0, got " + std::to_string(v_th));
  }
  if (!(v_reset < v_th)) {
    throw ConfigError("lif v_reset must be below v_th");
  }
}

NeuronState initial_state(Shape shape, const LifConfig& cfg) {
  const double v0 = cfg.reset == ResetMode::hard ? cfg.v_reset : 0.0;
  return NeuronState{full(std::move(shape), v0), {}};
}

double surrogate_grad(double h, const LifConfig& cfg) {
  return (h > cfg.window_lo() && h < cfg.window_hi()) ? 1.0 / cfg.v_th : 0.0;
}

Var spike_fn(const Var& h, const LifConfig& cfg) {
  std::vector<double> out(h->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = h->values[i] >= cfg.v_th ? 1.0 : 0.0;
  return make_result(h->shape, std::move(out), "spike", {h}, [cfg](Node& self) {
    Node& ph = *self.parents[0];
    auto gh = ph.grad_buffer();
    for (std::size_t i = 0; i < gh.size(); ++i) {
      gh[i] += self.grad[i] * surrogate_grad(ph.values[i], cfg);
    }
  });
}

namespace {

Var charge(const Var& v, const Var& x, const LifConfig& cfg) {
  const std::size_t n = x->values.size();
  std::vector<double> out(n);
  const double inv_tau = 1.0 / cfg.tau;
  const double leak = cfg.leak();
  const double in_gain = cfg.reset == ResetMode::hard ? inv_tau : 1.0;
  if (cfg.reset == ResetMode::hard) {
    for (std::size_t i = 0; i < n; ++i) {
      const double vp = v->values[i];
      out[i] = vp + inv_tau * (x->values[i] - (vp - cfg.v_reset));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = leak * v->values[i] + x->values[i];
  }
  return make_result(x->shape, std::move(out), "lif_charge", {v, x},
                     [leak, in_gain](Node& self) {
                       Node& pv = *self.parents[0];
                       Node& px = *self.parents[1];
                       if (pv.requires_grad) {
                         auto g = pv.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += leak * self.grad[i];
                       }
                       if (px.requires_grad) {
                         auto g = px.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += in_gain * self.grad[i];
                       }
                     });
}

Var reset(const Var& h, const Var& s, const LifConfig& cfg) {
  const std::size_t n = h->values.size();
  std::vector<double> out(n);
  if (cfg.reset == ResetMode::hard) {
    for (std::size_t i = 0; i < n; ++i) {
      const double si = s->values[i];
      out[i] = h->values[i] * (1.0 - si) + cfg.v_reset * si;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = h->values[i] - cfg.v_th * s->values[i];
  }
  return make_result(h->shape, std::move(out), "lif_reset", {h, s}, [cfg](Node& self) {
    Node& ph = *self.parents[0];
    Node& ps = *self.parents[1];
    const bool hard = cfg.reset == ResetMode::hard;
    if (ph.requires_grad) {
      auto g = ph.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * (hard ? 1.0 - ps.values[i] : 1.0);
      }
    }
    if (ps.requires_grad) {
      auto g = ps.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * (hard ? cfg.v_reset - ph.values[i] : -cfg.v_th);
      }
    }
  });
}

}  // namespace

LifStep lif_step(const NeuronState& state, const Var& x, const LifConfig& cfg) {
  if (!state.v || state.v->shape != x->shape) {
    throw DimensionError("lif_step: state shape " +
                         (state.v ? state.v->shape.str() : std::string("<none>")) +
                         " does not match input " + x->shape.str());
  }
  for (double v : x->values) {
    if (!std::isfinite(v)) throw NumericError("lif_step: non-finite input current");
  }
  Var h = charge(state.v, x, cfg);
  Var s = spike_fn(h, cfg);
  NeuronState next{reset(h, s, cfg), state.h_trace};
  next.h_trace.push_back(h);
  return LifStep{SpikeTensor(s), h, std::move(next)};
}

LifSequence run_sequence(const Var& inputs, const LifConfig& cfg,
                         const std::optional<NeuronState>& initial) {
  const Shape& s = inputs->shape;
  if (s.rank() < 1) throw DimensionError("run_sequence needs a leading time axis");
  const std::size_t steps = s[0];
  std::vector<std::size_t> step_dims = s.dims();
  step_dims[0] = 1;
  const Shape step_shape(step_dims);

  NeuronState state;
  if (initial) {
    if (initial->v->shape != step_shape) {
      throw DimensionError("run_sequence: initial state " + initial->v->shape.str() +
                           " does not match step shape " + step_shape.str());
    }
    state = NeuronState{initial->v, {}};
  } else {
    state = initial_state(step_shape, cfg);
  }

  LifSequence out;
  std::vector<Var> spikes;
  spikes.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var x_t = steps == 1 ? inputs : slice(inputs, 0, t, t + 1);
    LifStep step = lif_step(state, x_t, cfg);
    spikes.push_back(step.spikes.node());
    out.h.push_back(step.h);
    state = NeuronState{step.state.v, {}};
  }
  out.spikes = SpikeTensor(steps == 1 ? spikes[0] : concat(spikes, 0));
  state.h_trace = out.h;
  out.final_state = std::move(state);
  return out;
}

}  // namespace tdformer
