#pragma once

#include <cstdint>
#include <vector>

#include "tdformer/analysis.hpp"
#include "tdformer/model.hpp"

namespace tdformer {

// H of every segment concatenated back to [T, B, N, C], over the first
// `samples` items of `data` (0 = all). Runs without gradients and leaves
// the model untouched.
SpikeTensor collect_features(const TdFormer& model, const Dataset& data, std::size_t samples,
                             std::size_t batch_size, const ChainOptions& options = {});

// One counted forward pass over the first `samples` items.
EnergyLedger measure_energy(const TdFormer& model, const Dataset& data, std::size_t samples,
                            const EnergyConstants& constants, const ChainOptions& options = {});

struct ArmResult {
  std::uint64_t seed = 0;
  double test_accuracy = 0;
  double train_accuracy = 0;
  double mi_off_diagonal = 0;
  EnergyLedger energy;
};

struct Experiment {
  ModelConfig model;
  DatasetSpec data;  // data.seed is offset by the run seed; split is set per set
  std::size_t test_samples = 256;
  TrainConfig train;
  std::size_t mi_units = 0;
};

struct AnalysisSettings {
  std::size_t bound_samples = 100000;
  std::vector<double> moment_rates = {0.05, 0.1};
  double moment_a = 1.5;
  double moment_b = 0.0;
  std::size_t moment_channels = 1024;
  std::size_t moment_samples = 100000;
  std::size_t variance_n = 16;
  std::size_t variance_d = 16;
  double variance_rate = 0.3;
  std::size_t variance_samples = 100000;
  std::size_t epsilon_probes = 10000;
  double dphi_ds = 1.0;
  std::size_t mi_samples = 0;  // 0 = the whole test split
  EnergyConstants energy;
};

struct ExperimentConfig {
  Experiment experiment;
  AnalysisSettings analysis;
  std::uint64_t seed = 0;
  std::string config_hash;  // FNV-1a of the canonical key-value text
};

// Reads the top-level `seed` and the model., data., train. and analysis.
// sections. Data dimensions default to the model's. Rejects unknown keys
// and, when `require_alphas`, a missing model.alphas.
ExperimentConfig load_experiment(const KeyValues& kv, bool require_alphas);

// Trains one arm. `feedback` false builds the backbone without the
// top-down pathway; `feedback` true builds the full model.
ArmResult run_arm(const Experiment& exp, bool feedback, std::uint64_t seed);

}  // namespace tdformer
