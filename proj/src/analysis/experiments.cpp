#include <algorithm>
#include <numeric>

#include "tdformer/experiments.hpp"

namespace tdformer {

namespace {

// Without running statistics the forward pass falls back to batch
// statistics; the original (empty) states are put back afterwards.
class NormGuard {
 public:
  explicit NormGuard(const TdFormer& model) : model_(const_cast<TdFormer&>(model)) {
    for (const auto& [name, st] : model.store().bn_states()) initialized_ &= st.initialized;
    if (!initialized_) saved_ = model.store().bn_states();
  }
  ~NormGuard() {
    if (!initialized_) model_.store().bn_states() = saved_;
  }
  NormMode mode() const { return initialized_ ? NormMode::eval : NormMode::train; }

 private:
  TdFormer& model_;
  bool initialized_ = true;
  std::map<std::string, BatchNormState> saved_;
};

std::vector<std::size_t> first(std::size_t n, const Dataset& data) {
  const std::size_t count = n == 0 ? data.size() : std::min(n, data.size());
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

SpikeTensor collect_features(const TdFormer& model, const Dataset& data, std::size_t samples,
                             std::size_t batch_size, const ChainOptions& options) {
  NoGradScope no_grad;
  NormGuard guard(model);
  const std::vector<std::size_t> all = first(samples, data);
  if (batch_size == 0) batch_size = all.size();
  const SubnetSchedule schedule = model.config().schedule();
  std::vector<Var> parts;
  for (std::size_t begin = 0; begin < all.size(); begin += batch_size) {
    const std::size_t end = std::min(all.size(), begin + batch_size);
    std::vector<std::size_t> idx(all.begin() + static_cast<long>(begin),
                                 all.begin() + static_cast<long>(end));
    RunContext ctx;
    ctx.mode = guard.mode();
    ctx.persist_membrane = model.config().persist_membrane;
    ChainResult r = run_subnet_chain(model, data.batch(idx), schedule, ctx, options);
    std::vector<Var> steps;
    for (const SpikeTensor& h : r.h) steps.push_back(h.node());
    parts.push_back(steps.size() == 1 ? steps[0] : concat(steps, 0));
  }
  return SpikeTensor(parts.size() == 1 ? parts[0] : concat(parts, 1));
}

EnergyLedger measure_energy(const TdFormer& model, const Dataset& data, std::size_t samples,
                            const EnergyConstants& constants, const ChainOptions& options) {
  NoGradScope no_grad;
  NormGuard guard(model);
  const std::vector<std::size_t> idx = first(samples, data);
  OpCounter counter;
  {
    CountingScope scope(counter);
    RunContext ctx;
    ctx.mode = guard.mode();
    ctx.persist_membrane = model.config().persist_membrane;
    run_subnet_chain(model, data.batch(idx), model.config().schedule(), ctx, options);
  }
  return energy_report(counter, measured_input_rates(counter), idx.size(), constants);
}

namespace {

std::size_t size_key(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  const long v = kv.get_int(key, static_cast<long>(fallback));
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

void same_extent(const char* what, std::size_t model, std::size_t data) {
  if (model != data) {
    throw ConfigError(std::string("data.") + what + " = " + std::to_string(data) +
                      " does not match the model's " + std::to_string(model));
  }
}

}  // namespace

ExperimentConfig load_experiment(const KeyValues& kv, bool require_alphas) {
  ExperimentConfig out;
  out.config_hash = hex64(fnv1a(kv.canonical()));
  out.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  if (require_alphas) kv.require_doubles("model.alphas");

  Experiment& e = out.experiment;
  e.model = ModelConfig::from_kv(kv);
  e.model.validate();
  e.model.schedule().validate();

  // Dimensions the dataset shares with the model default to the model's.
  KeyValues data = kv;
  const std::pair<const char*, std::size_t> shared[] = {
      {"T", e.model.T},           {"grid_h", e.model.grid_h}, {"grid_w", e.model.grid_w},
      {"channels", e.model.in_channels}, {"classes", e.model.classes}};
  for (const auto& [key, value] : shared) {
    if (!data.has(std::string("data.") + key)) data.set(std::string("data.") + key, std::to_string(value));
  }
  e.data = DatasetSpec::from_kv(data);
  std::vector<std::string> unknown;
  for (const std::string& key : data.unused()) {
    if (key.rfind("data.", 0) == 0 && key != "data.test_samples") unknown.push_back(key);
  }
  e.data.validate();
  same_extent("T", e.model.T, e.data.T);
  same_extent("grid_h", e.model.grid_h, e.data.grid_h);
  same_extent("grid_w", e.model.grid_w, e.data.grid_w);
  same_extent("channels", e.model.in_channels, e.data.channels);
  same_extent("classes", e.model.classes, e.data.classes);
  e.test_samples = size_key(kv, "data.test_samples", e.test_samples);
  if (e.test_samples == 0) throw ConfigError("data.test_samples must be positive");

  e.train = TrainConfig::from_kv(kv);
  e.train.validate();

  AnalysisSettings& a = out.analysis;
  a.bound_samples = size_key(kv, "analysis.bound_samples", a.bound_samples);
  a.moment_rates = kv.get_doubles("analysis.moment_rates", a.moment_rates);
  a.moment_a = kv.get_double("analysis.moment_a", a.moment_a);
  a.moment_b = kv.get_double("analysis.moment_b", a.moment_b);
  a.moment_channels = size_key(kv, "analysis.moment_channels", a.moment_channels);
  a.moment_samples = size_key(kv, "analysis.moment_samples", a.moment_samples);
  a.variance_n = size_key(kv, "analysis.variance_n", a.variance_n);
  a.variance_d = size_key(kv, "analysis.variance_d", a.variance_d);
  a.variance_rate = kv.get_double("analysis.variance_rate", a.variance_rate);
  a.variance_samples = size_key(kv, "analysis.variance_samples", a.variance_samples);
  a.epsilon_probes = size_key(kv, "analysis.epsilon_probes", a.epsilon_probes);
  a.dphi_ds = kv.get_double("analysis.dphi_ds", a.dphi_ds);
  e.mi_units = size_key(kv, "analysis.mi_units", e.mi_units);
  a.mi_samples = size_key(kv, "analysis.mi_samples", a.mi_samples);
  a.energy.e_mac_pj = kv.get_double("analysis.e_mac_pj", a.energy.e_mac_pj);
  a.energy.e_ac_pj = kv.get_double("analysis.e_ac_pj", a.energy.e_ac_pj);
  if (a.bound_samples < 10000) throw ConfigError("analysis.bound_samples must be at least 10000");

  // data.* keys were consumed on the copy above.
  for (const std::string& key : kv.unused()) {
    if (key.rfind("data.", 0) != 0) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config key";
    msg += unknown.size() == 1 ? " " : "s ";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", '" : "'") + unknown[i] + "'";
    throw ConfigError(msg);
  }
  return out;
}

ArmResult run_arm(const Experiment& exp, bool feedback, std::uint64_t seed) {
  ModelConfig mc = exp.model;
  mc.topdown = feedback;
  mc.seed = seed;
  DatasetSpec ds = exp.data;
  ds.seed = exp.data.seed + seed;
  ds.split = 0;
  const Dataset train_set = synth_dataset(ds);
  ds.split = 1;
  ds.samples = exp.test_samples;
  const Dataset test_set = synth_dataset(ds);

  TdFormer model(mc);
  TrainConfig tc = exp.train;
  tc.seed = seed;
  const TrainReport report = train(model, train_set, &test_set, tc);

  ArmResult out;
  out.seed = seed;
  out.train_accuracy = report.epochs.empty() ? 0.0 : report.epochs.back().train_accuracy;
  out.test_accuracy = evaluate(model, test_set, tc.batch_size).accuracy;
  const SpikeTensor features = collect_features(model, test_set, 0, tc.batch_size);
  out.mi_off_diagonal = mi_matrix(features, exp.mi_units, seed).mean_off_diagonal();
  out.energy = measure_energy(model, test_set, tc.batch_size, EnergyConstants{});
  return out;
}

}  // namespace tdformer
