#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tdformer/attention.hpp"
#include "tdformer/layers.hpp"

namespace tdformer {

enum class CmVariant { cm1, cm2, cm3 };
enum class PmVariant { v1, v2, v3, v4 };

CmVariant parse_cm_variant(const std::string& name);
PmVariant parse_pm_variant(const std::string& name);
std::string to_string(CmVariant v);
std::string to_string(PmVariant v);

// Partition of [0, total_T) into contiguous segments with loss weights.
struct SubnetSchedule {
  std::size_t total_T = 0;
  std::vector<std::pair<std::size_t, std::size_t>> segments;  // [begin, end)
  std::vector<double> alphas;

  // Equal-length segments; n must divide T.
  static SubnetSchedule uniform(std::size_t T, std::size_t n, std::vector<double> alphas = {});
  void validate() const;
  std::size_t size() const { return segments.size(); }
  std::size_t length(std::size_t n) const { return segments.at(n).second - segments.at(n).first; }
  bool fine_grained() const { return segments.size() == total_T; }
};

// N = 1 -> [1]; otherwise 0.75 on the last segment and the rest split evenly.
std::vector<double> default_alphas(std::size_t n);

struct FeedbackSignal {
  SpikeTensor s_td;  // [T_seg, B, N, C]
  std::size_t origin_segment = 0;
};

// Step-wise when lengths match, otherwise the last step is repeated.
SpikeTensor align_feedback(const SpikeTensor& s_td, std::size_t steps);

// Projections for one block. Which of q/k/v carry a top-down slot depends on
// the variant; a backbone block has none.
struct ControlWeights {
  CmVariant variant = CmVariant::cm1;
  QkvWeights proj;
};

ControlWeights create_control(ParameterStore& store, const std::string& name, std::size_t c,
                              CmVariant variant, bool topdown, const LifConfig& lif, Rng& rng,
                              Rng& td_rng);

// Absent s_td feeds zeros into the top-down slots.
Qkv control_module(const SpikeTensor& s_bu, const FeedbackSignal* s_td,
                   const ControlWeights& weights, RunContext& ctx);

struct ProcessingWeights {
  std::string name;
  PmVariant variant = PmVariant::v1;
  SpikingLinear mix1;
  SpikingLinear mix2;  // v2 only
  Var depthwise;       // v3 only, [C]
  BatchNorm depthwise_bn;
  Var w_c;             // spatial map weights, [C]
  double b = 0.0;
  double a = 1.5;
  LifConfig lif;
};

ProcessingWeights create_processing(ParameterStore& store, const std::string& name,
                                    std::size_t c, PmVariant variant, double b, double a,
                                    const LifConfig& lif, Rng& rng);

struct ProcessingOutput {
  FeedbackSignal signal;
  Var m;               // clamped spatial map
  SpikeTensor mixed;   // channel-mixer output
};

ProcessingOutput processing_module(const SpikeTensor& h, const ProcessingWeights& weights,
                                   RunContext& ctx, std::size_t origin_segment = 0);

// Elementwise OR of binary tensors written as a + b - ab, which keeps a
// usable gradient for both inputs.
SpikeTensor spike_or(const SpikeTensor& a, const SpikeTensor& b);

}  // namespace tdformer
