#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tdformer/spiking.hpp"
#include "tdformer/tensor.hpp"

namespace tdformer {

using Rng = std::mt19937_64;

// Owns every trainable leaf and every batch-norm running state of a model.
// Names are unique and insertion order is stable, which checkpointing and
// the optimizer both rely on.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Var create(const std::string& name, Shape shape, std::vector<double> init);
  BatchNormState& bn_state(const std::string& name);

  const std::vector<std::pair<std::string, Var>>& parameters() const { return params_; }
  std::map<std::string, BatchNormState>& bn_states() { return bn_; }
  const std::map<std::string, BatchNormState>& bn_states() const { return bn_; }
  Var find(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::map<std::string, BatchNormState> bn_;
};

// Per-forward-pass state: normalization mode and, when membranes persist
// across calls, the LIF state of each named layer.
struct RunContext {
  NormMode mode = NormMode::train;
  bool persist_membrane = false;
  std::map<std::string, NeuronState> membranes;

  // Spike count and element count per fired neuron key.
  std::map<std::string, std::pair<double, double>> spikes;

  LifSequence fire(const std::string& key, const Var& current, const LifConfig& cfg);
  void record(const std::string& key, const SpikeTensor& s);
  double firing_rate(const std::string& key) const;
};

struct Linear {
  Var weight;  // [in, out]
  Var bias;    // [out] or null

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);
  Var forward(const Var& x) const { return linear(x, weight, bias); }
};

struct BatchNorm {
  Var gamma;
  Var beta;
  BatchNormState* state = nullptr;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNorm create(ParameterStore& store, const std::string& name,
                          std::size_t channels);
  // Normalizes over every axis but the last.
  Var forward(const Var& x, NormMode mode) const;
};

// SN(BN(Linear(x))) over a time-major [T, ..., C] tensor.
//
// An optional second input (top-down spikes) enters through its own weight
// block: BN(x W + b + td W_td). This equals a linear map over the channel
// concatenation [x, td] and reduces bit-exactly to the plain layer when td
// is absent.
struct SpikingLinear {
  std::string name;
  Linear linear;
  Var td_weight;  // [td_in, out] or null
  BatchNorm bn;
  LifConfig lif;

  // td weights come from `td_rng` so that the main stream stays aligned with
  // a model built without them.
  static SpikingLinear create(ParameterStore& store, const std::string& name,
                              std::size_t in, std::size_t out, const LifConfig& lif,
                              Rng& rng, std::size_t td_in = 0, Rng* td_rng = nullptr);
  bool has_td() const { return static_cast<bool>(td_weight); }
  Var current(const Var& x, NormMode mode, const Var& td = nullptr) const;
  SpikeTensor forward(const Var& x, RunContext& ctx, const Var& td = nullptr) const;
};

std::vector<double> uniform_init(std::size_t n, double bound, Rng& rng);

}  // namespace tdformer
