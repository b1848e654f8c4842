#pragma once

#include <optional>
#include <vector>

#include "tdformer/tensor.hpp"

namespace tdformer {

// hard: H = V + (X - (V - V_reset)) / tau,  V' = H (1 - S) + V_reset S
// soft: H = (1 - 1/tau) V + X,              V' = H - v_th S
// The soft form is the one used by the temporal-gradient analysis.
enum class ResetMode { hard, soft };

struct LifConfig {
  double tau = 2.0;
  double v_th = 1.0;
  double v_reset = 0.0;
  ResetMode reset = ResetMode::hard;

  void validate() const;
  double leak() const { return 1.0 - 1.0 / tau; }
  // Surrogate window (v_th/2, 3 v_th/2), open on both ends.
  double window_lo() const { return 0.5 * v_th; }
  double window_hi() const { return 1.5 * v_th; }
};

struct NeuronState {
  Var v;  // post-reset membrane potential V[t-1]
  std::vector<Var> h_trace;
};

NeuronState initial_state(Shape shape, const LifConfig& cfg);

// 1/v_th inside the window, 0 elsewhere.
double surrogate_grad(double h, const LifConfig& cfg);

// Heaviside(h - v_th) with the rectangular surrogate derivative (h >= v_th fires).
Var spike_fn(const Var& h, const LifConfig& cfg);

struct LifStep {
  SpikeTensor spikes;
  Var h;
  NeuronState state;
};

LifStep lif_step(const NeuronState& state, const Var& x, const LifConfig& cfg);

struct LifSequence {
  SpikeTensor spikes;        // [T, ...]
  std::vector<Var> h;        // H[t], shape [1, ...] each
  NeuronState final_state;
};

// Folds lif_step over axis 0 of `inputs`. Without an initial state the
// membrane starts at V_reset (0 in soft mode).
LifSequence run_sequence(const Var& inputs, const LifConfig& cfg,
                         const std::optional<NeuronState>& initial = std::nullopt);

}  // namespace tdformer
