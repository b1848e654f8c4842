#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tdformer/attention.hpp"
#include "tdformer/config.hpp"
#include "tdformer/layers.hpp"
#include "tdformer/topdown.hpp"

namespace tdformer {

struct ModelConfig {
  std::size_t T = 4;
  std::size_t n_sub = 2;
  std::vector<double> alphas;  // empty -> default_alphas(n_sub)
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t in_channels = 1;
  std::size_t embed_c = 32;
  std::size_t depth = 2;        // transformer blocks
  std::size_t conv_blocks = 1;  // 3x3 spiking patch-embed blocks
  std::size_t mlp_ratio = 4;
  std::size_t classes = 2;
  AttentionKind attention = AttentionKind::qkta;
  std::size_t heads = 1;
  double attn_scale = 0.125;
  CmVariant cm = CmVariant::cm1;
  PmVariant pm = PmVariant::v1;
  double clamp_a = 1.5;
  double clamp_b = 0.0;
  LifConfig lif;
  bool topdown = true;  // false builds the plain backbone
  bool persist_membrane = false;
  std::uint64_t seed = 0;

  std::size_t tokens() const { return grid_h * grid_w; }
  SubnetSchedule schedule() const;
  void validate() const;

  // Keys under the "model." prefix.
  static ModelConfig from_kv(const KeyValues& kv, const std::string& prefix = "model.");
  void write_kv(KeyValues& kv, const std::string& prefix = "model.") const;
};

struct TransformerBlock {
  std::string name;
  ControlWeights cm;
  AttentionConfig attn;
  SpikingLinear proj;
  SpikingLinear mlp1;
  SpikingLinear mlp2;
};

struct ChainOptions {
  bool feedback = true;
  // Called on H_n before it reaches the head and the processing module.
  std::function<SpikeTensor(std::size_t, const SpikeTensor&)> h_hook;
};

struct ChainResult {
  std::vector<Var> logits;                // O_n, [T_seg, B, L]
  std::vector<SpikeTensor> h;             // H_n
  std::vector<FeedbackSignal> feedback;   // S_td produced by segment n (n < N-1)
  std::vector<Var> pm_maps;
};

class TdFormer {
 public:
  explicit TdFormer(ModelConfig cfg);
  TdFormer(const TdFormer&) = delete;
  TdFormer& operator=(const TdFormer&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  bool has_topdown() const { return cfg_.topdown; }

  // x: [T_seg, B, N, C_in] analog input. Returns bottom-up spikes [T_seg, B, N, C].
  SpikeTensor embed(const Var& x, RunContext& ctx) const;
  SpikeTensor transformer(const SpikeTensor& s, const FeedbackSignal* fb, RunContext& ctx) const;
  Var head(const SpikeTensor& h) const;
  ProcessingOutput process(const SpikeTensor& h, RunContext& ctx, std::size_t origin) const;

  const std::vector<TransformerBlock>& blocks() const { return blocks_; }
  const std::vector<std::vector<long>>& neighbor_table() const { return neighbors_; }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  std::vector<std::vector<long>> neighbors_;
  std::vector<SpikingLinear> embed_;
  std::vector<TransformerBlock> blocks_;
  Linear head_;
  std::unique_ptr<ProcessingWeights> pm_;
};

// x: [T, B, N, C_in]. Segment n sees its time slice and S_td from n - 1.
ChainResult run_subnet_chain(const TdFormer& model, const Var& x, const SubnetSchedule& schedule,
                             RunContext& ctx, const ChainOptions& options = {});

// Sum of alpha_n * CE(mean_t O_n, y). Per-stage losses are written to
// `stage_losses` when given.
Var tdformer_loss(const std::vector<Var>& logits, std::span<const int> targets,
                  const std::vector<double>& alphas, std::vector<double>* stage_losses = nullptr);

// Σ alpha_n * stage_n accumulated in segment order, as tdformer_loss does.
double combine_stage_losses(const std::vector<double>& stage, const std::vector<double>& alphas);

// Time-averaged final-segment logits -> argmax per sample.
std::vector<int> predict(const ChainResult& r);

enum class DatasetKind { static_patterns, temporal_xor, rate_coded };
DatasetKind parse_dataset_kind(const std::string& name);
std::string to_string(DatasetKind kind);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::static_patterns;
  std::size_t samples = 256;
  std::size_t T = 4;
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t channels = 1;
  std::size_t classes = 2;
  std::size_t segments = 2;  // temporal-xor: pattern changes at T / segments
  double noise = 0.3;
  std::vector<double> rates;  // rate-coded: per-class spike probability
  std::uint64_t seed = 0;     // fixes templates and, with split, the samples
  std::uint64_t split = 0;    // 0 train, 1 test; same templates, fresh samples

  void validate() const;
  static DatasetSpec from_kv(const KeyValues& kv, const std::string& prefix = "data.");
  void write_kv(KeyValues& kv, const std::string& prefix = "data.") const;
};

struct Dataset {
  std::size_t T = 0;
  std::size_t tokens = 0;
  std::size_t channels = 0;
  std::size_t classes = 0;
  std::vector<double> x;  // [S, T, N, C]
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  // Time-major batch [T, B, N, C].
  Var batch(std::span<const std::size_t> indices) const;
  std::vector<int> labels(std::span<const std::size_t> indices) const;
};

Dataset synth_dataset(const DatasetSpec& spec);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::string optimizer = "adamw";  // adamw | sgd
  double lr = 1e-3;
  double weight_decay = 0.01;
  double momentum = 0.9;
  bool cosine = true;
  std::uint64_t seed = 0;

  void validate() const;
  static TrainConfig from_kv(const KeyValues& kv, const std::string& prefix = "train.");
  void write_kv(KeyValues& kv, const std::string& prefix = "train.") const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<double> stage_losses;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::map<std::string, double> firing_rates;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;
};

TrainReport train(TdFormer& model, const Dataset& train_set, const Dataset* test_set,
                  const TrainConfig& cfg, const ChainOptions& options = {},
                  const std::function<void(const EpochStats&)>& on_epoch = {});

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> stage_losses;
  std::map<std::string, double> firing_rates;
};

EvalResult evaluate(const TdFormer& model, const Dataset& data, std::size_t batch_size,
                    const ChainOptions& options = {});

void save_checkpoint(const TdFormer& model, const std::string& path);
std::unique_ptr<TdFormer> load_checkpoint(const std::string& path);

}  // namespace tdformer
