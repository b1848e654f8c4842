#pragma once

#include <string>

#include "tdformer/layers.hpp"
#include "tdformer/spiking.hpp"
#include "tdformer/tensor.hpp"

namespace tdformer {

enum class AttentionKind { ssa, sdsa1, sdsa2, qkta, qkca };

AttentionKind parse_attention_kind(const std::string& name);
std::string to_string(AttentionKind kind);
bool uses_scale(AttentionKind kind);

struct AttentionConfig {
  AttentionKind kind = AttentionKind::qkta;
  double scale = 0.125;
  std::size_t heads = 1;
  LifConfig lif;

  void validate(std::size_t channels) const;
};

struct Qkv {
  SpikeTensor q, k, v;
};

struct QkvWeights {
  SpikingLinear q, k, v;
};

// I_s = SN(BN(X W_I)) for I in {Q, K, V}; x is [T, B, N, C].
Qkv make_qkv(const SpikeTensor& s_bu, const QkvWeights& weights, RunContext& ctx);

// All attention ops take [T, B, N, C] spikes. LIF state is fresh per call
// unless `ctx` persists membranes; `key` names the internal neuron.
SpikeTensor ssa(const Qkv& x, double s, std::size_t heads, const LifConfig& lif,
                RunContext* ctx = nullptr, const std::string& key = "ssa");
SpikeTensor sdsa1(const Qkv& x, const LifConfig& lif, RunContext* ctx = nullptr,
                  const std::string& key = "sdsa1");
SpikeTensor sdsa2(const Qkv& x, double s, std::size_t heads, const LifConfig& lif,
                  RunContext* ctx = nullptr, const std::string& key = "sdsa2");

enum class QkMode { token, channel };
QkMode parse_qk_mode(const std::string& name);

SpikeTensor qk_attention(const SpikeTensor& q, const SpikeTensor& k, QkMode mode,
                         std::size_t heads, const LifConfig& lif, RunContext* ctx = nullptr,
                         const std::string& key = "qk");

// Dispatches on cfg.kind.
SpikeTensor attend(const Qkv& x, const AttentionConfig& cfg, RunContext* ctx = nullptr,
                   const std::string& key = "attn");

// Pre-activation Q K^T V (before scaling or LIF), [T, B, N, C].
Var qktv(const Qkv& x, std::size_t heads);

struct SpatialAttention {
  SpikeTensor out;  // SN(x * M)
  Var m;            // clamped map, [T, B, N, 1]
  Var pre;          // x * M
};

// M(t, n) = clamp(sum_c w_c x(t, n, c), b, a); out = SN(x * M).
SpatialAttention pm_spatial_attention(const SpikeTensor& x, const Var& w_c, double b,
                                      double a, const LifConfig& lif,
                                      RunContext* ctx = nullptr,
                                      const std::string& key = "pm_spatial");

}  // namespace tdformer
