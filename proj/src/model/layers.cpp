#include <cmath>

#include "tdformer/layers.hpp"

namespace tdformer {

Var ParameterStore::create(const std::string& name, Shape shape, std::vector<double> init) {
  if (find(name)) throw ConfigError("duplicate parameter name " + name);
  Var p = make_tensor(std::move(shape), std::move(init), true);
  params_.emplace_back(name, p);
  return p;
}

BatchNormState& ParameterStore::bn_state(const std::string& name) {
  auto [it, inserted] = bn_.try_emplace(name);
  if (!inserted) throw ConfigError("duplicate batch-norm state " + name);
  return it->second;
}

Var ParameterStore::find(const std::string& name) const {
  for (const auto& [n, v] : params_) {
    if (n == name) return v;
  }
  return nullptr;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [n, v] : params_) total += v->values.size();
  return total;
}

void ParameterStore::zero_grad() {
  for (const auto& [n, v] : params_) v->zero_grad();
}

LifSequence RunContext::fire(const std::string& key, const Var& current,
                             const LifConfig& cfg) {
  std::optional<NeuronState> initial;
  if (persist_membrane) {
    auto it = membranes.find(key);
    if (it != membranes.end() && it->second.v->shape[0] == 1) {
      std::vector<std::size_t> want = current->shape.dims();
      want[0] = 1;
      if (it->second.v->shape == Shape(want)) initial = it->second;
    }
  }
  LifSequence seq = run_sequence(current, cfg, initial);
  if (persist_membrane) membranes[key] = NeuronState{seq.final_state.v, {}};
  record(key, seq.spikes);
  return seq;
}

void RunContext::record(const std::string& key, const SpikeTensor& s) {
  auto& [count, total] = spikes[key];
  for (double b : s.bits()) count += b;
  total += static_cast<double>(s.bits().size());
}

double RunContext::firing_rate(const std::string& key) const {
  auto it = spikes.find(key);
  if (it == spikes.end() || it->second.second == 0.0) {
    throw ConfigError("no firing rate recorded for " + key);
  }
  return it->second.first / it->second.second;
}

std::vector<double> uniform_init(std::size_t n, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Rng weight_rng(rng());
  Rng bias_rng(rng());
  Linear layer;
  layer.weight =
      store.create(name + ".weight", Shape{in, out}, uniform_init(in * out, bound, weight_rng));
  if (with_bias) {
    layer.bias = store.create(name + ".bias", Shape{out}, uniform_init(out, bound, bias_rng));
  }
  return layer;
}

BatchNorm BatchNorm::create(ParameterStore& store, const std::string& name,
                            std::size_t channels) {
  BatchNorm bn;
  bn.gamma = store.create(name + ".gamma", Shape{channels}, std::vector<double>(channels, 1.0));
  bn.beta = store.create(name + ".beta", Shape{channels}, std::vector<double>(channels, 0.0));
  bn.state = &store.bn_state(name);
  return bn;
}

Var BatchNorm::forward(const Var& x, NormMode mode) const {
  BatchNormOptions opts;
  opts.channel_axis = x->shape.rank() - 1;
  opts.mode = mode;
  opts.eps = eps;
  opts.momentum = momentum;
  return batch_norm(x, gamma, beta, *state, opts);
}

SpikingLinear SpikingLinear::create(ParameterStore& store, const std::string& name,
                                    std::size_t in, std::size_t out, const LifConfig& lif,
                                    Rng& rng, std::size_t td_in, Rng* td_rng) {
  SpikingLinear layer;
  layer.name = name;
  layer.linear = Linear::create(store, name + ".linear", in, out, rng);
  if (td_in > 0) {
    if (!td_rng) throw ConfigError(name + ": top-down weights need their own generator");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    layer.td_weight = store.create(name + ".td_weight", Shape{td_in, out},
                                   uniform_init(td_in * out, bound, *td_rng));
  }
  layer.bn = BatchNorm::create(store, name + ".bn", out);
  layer.lif = lif;
  return layer;
}

Var SpikingLinear::current(const Var& x, NormMode mode, const Var& td) const {
  Var pre;
  {
    CountLabel label(name);
    pre = linear.forward(x);
  }
  if (td) {
    if (!td_weight) throw ConfigError(name + " has no top-down input slot");
    CountLabel label(name + ".td");
    pre = add(pre, matmul(td, td_weight));
  }
  return bn.forward(pre, mode);
}

SpikeTensor SpikingLinear::forward(const Var& x, RunContext& ctx, const Var& td) const {
  return ctx.fire(name, current(x, ctx.mode, td), lif).spikes;
}

}  // namespace tdformer
