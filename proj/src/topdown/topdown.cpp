#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdformer/topdown.hpp"

namespace tdformer {

CmVariant parse_cm_variant(const std::string& name) {
  if (name == "cm1") return CmVariant::cm1;
  if (name == "cm2") return CmVariant::cm2;
  if (name == "cm3") return CmVariant::cm3;
  throw ConfigError("unknown control module variant '" + name + "'");
}

PmVariant parse_pm_variant(const std::string& name) {
  if (name == "v1") return PmVariant::v1;
  if (name == "v2") return PmVariant::v2;
  if (name == "v3") return PmVariant::v3;
  if (name == "v4") return PmVariant::v4;
  throw ConfigError("unknown processing module variant '" + name + "'");
}

std::string to_string(CmVariant v) {
  switch (v) {
    case CmVariant::cm1: return "cm1";
    case CmVariant::cm2: return "cm2";
    case CmVariant::cm3: return "cm3";
  }
  return "?";
}

std::string to_string(PmVariant v) {
  switch (v) {
    case PmVariant::v1: return "v1";
    case PmVariant::v2: return "v2";
    case PmVariant::v3: return "v3";
    case PmVariant::v4: return "v4";
  }
  return "?";
}

std::vector<double> default_alphas(std::size_t n) {
  if (n == 0) throw ConfigError("schedule needs at least one segment");
  if (n == 1) return {1.0};
  std::vector<double> a(n, 0.25 / static_cast<double>(n - 1));
  a.back() = 0.75;
  return a;
}

SubnetSchedule SubnetSchedule::uniform(std::size_t T, std::size_t n, std::vector<double> alphas) {
  if (n == 0 || T == 0 || T % n != 0) {
    throw ConfigError("n_sub (" + std::to_string(n) + ") must divide T (" + std::to_string(T) +
                      ")");
  }
  SubnetSchedule s;
  s.total_T = T;
  const std::size_t len = T / n;
  for (std::size_t i = 0; i < n; ++i) s.segments.emplace_back(i * len, (i + 1) * len);
  s.alphas = alphas.empty() ? default_alphas(n) : std::move(alphas);
  s.validate();
  return s;
}

void SubnetSchedule::validate() const {
  if (segments.empty()) throw ConfigError("schedule has no segments");
  std::size_t cursor = 0;
  for (const auto& [b, e] : segments) {
    if (b != cursor || e <= b) throw ConfigError("schedule segments must partition [0, T)");
    cursor = e;
  }
  if (cursor != total_T) throw ConfigError("schedule segments do not cover T");
  if (alphas.size() != segments.size()) {
    throw ConfigError("alphas has " + std::to_string(alphas.size()) + " entries for " +
                      std::to_string(segments.size()) + " segments");
  }
  double sum = 0.0;
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alphas must lie in [0, 1]");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("alphas must sum to 1, got " + std::to_string(sum));
  }
}

SpikeTensor align_feedback(const SpikeTensor& s_td, std::size_t steps) {
  const Shape& s = s_td.shape();
  if (s[0] == steps) return s_td;
  Var last = slice(s_td.node(), 0, s[0] - 1, s[0]);
  std::vector<std::size_t> dims = s.dims();
  dims[0] = steps;
  std::fill(dims.begin() + 1, dims.end(), 1);
  return SpikeTensor(add(zeros(Shape(dims)), last));
}

ControlWeights create_control(ParameterStore& store, const std::string& name, std::size_t c,
                              CmVariant variant, bool topdown, const LifConfig& lif, Rng& rng,
                              Rng& td_rng) {
  const bool q_td = topdown && variant == CmVariant::cm3;
  const bool k_td = topdown && (variant == CmVariant::cm1 || variant == CmVariant::cm3);
  const bool v_td = topdown && (variant == CmVariant::cm2 || variant == CmVariant::cm3);
  ControlWeights w;
  w.variant = variant;
  w.proj.q = SpikingLinear::create(store, name + ".q", c, c, lif, rng, q_td ? c : 0, &td_rng);
  w.proj.k = SpikingLinear::create(store, name + ".k", c, c, lif, rng, k_td ? c : 0, &td_rng);
  w.proj.v = SpikingLinear::create(store, name + ".v", c, c, lif, rng, v_td ? c : 0, &td_rng);
  return w;
}

Qkv control_module(const SpikeTensor& s_bu, const FeedbackSignal* s_td,
                   const ControlWeights& w, RunContext& ctx) {
  Var td;
  if (s_td) {
    if (s_td->s_td.shape() != s_bu.shape()) {
      throw DimensionError("control_module: feedback " + s_td->s_td.shape().str() +
                           " does not match bottom-up " + s_bu.shape().str());
    }
    td = s_td->s_td.node();
  }
  const bool any_slot = w.proj.q.has_td() || w.proj.k.has_td() || w.proj.v.has_td();
  if (!td && any_slot) td = zeros(s_bu.shape());
  if (td && !any_slot) {
    throw ConfigError("control_module: feedback given to a block without top-down slots");
  }
  const Var& x = s_bu.node();
  auto project = [&](const SpikingLinear& p) {
    return p.forward(x, ctx, p.has_td() ? td : nullptr);
  };
  return Qkv{project(w.proj.q), project(w.proj.k), project(w.proj.v)};
}

ProcessingWeights create_processing(ParameterStore& store, const std::string& name,
                                    std::size_t c, PmVariant variant, double b, double a,
                                    const LifConfig& lif, Rng& rng) {
  if (!(b < a)) throw ConfigError("processing module clamp needs b < a");
  ProcessingWeights w;
  w.name = name;
  w.variant = variant;
  w.b = b;
  w.a = a;
  w.lif = lif;
  switch (variant) {
    case PmVariant::v1:
    case PmVariant::v4:
      w.mix1 = SpikingLinear::create(store, name + ".mix1", c, c, lif, rng);
      break;
    case PmVariant::v2:
      w.mix1 = SpikingLinear::create(store, name + ".mix1", c, c, lif, rng);
      w.mix2 = SpikingLinear::create(store, name + ".mix2", c, c, lif, rng);
      break;
    case PmVariant::v3: {
      Rng dw(rng());
      std::vector<double> init = uniform_init(c, 1.0, dw);
      for (double& v : init) v = 1.0 + 0.1 * v;
      w.depthwise = store.create(name + ".depthwise", Shape{c}, std::move(init));
      w.depthwise_bn = BatchNorm::create(store, name + ".depthwise_bn", c);
      break;
    }
  }
  // Spatial weights start in [0.5, 1.5]: a token with one active channel
  // already puts its LIF input inside the surrogate window.
  Rng sp(rng());
  std::vector<double> wc = uniform_init(c, 0.5, sp);
  for (double& v : wc) v += 1.0;
  w.w_c = store.create(name + ".w_c", Shape{c}, std::move(wc));
  return w;
}

SpikeTensor spike_or(const SpikeTensor& a, const SpikeTensor& b) {
  const Var& x = a.node();
  const Var& y = b.node();
  return SpikeTensor(sub(add(x, y), hadamard(x, y)));
}

ProcessingOutput processing_module(const SpikeTensor& h, const ProcessingWeights& w,
                                   RunContext& ctx, std::size_t origin_segment) {
  SpikeTensor mixed;
  switch (w.variant) {
    case PmVariant::v1:
      mixed = w.mix1.forward(h.node(), ctx);
      break;
    case PmVariant::v2:
      mixed = w.mix2.forward(w.mix1.forward(h.node(), ctx).node(), ctx);
      break;
    case PmVariant::v3: {
      Var scaled;
      {
        CountLabel label(w.name + ".depthwise");
        scaled = hadamard(h.node(), w.depthwise);
      }
      mixed = ctx.fire(w.name + ".depthwise", w.depthwise_bn.forward(scaled, ctx.mode), w.lif)
                  .spikes;
      break;
    }
    case PmVariant::v4:
      mixed = spike_or(w.mix1.forward(h.node(), ctx), h);
      break;
  }
  SpatialAttention sa;
  {
    CountLabel label(w.name + ".spatial");
    sa = pm_spatial_attention(mixed, w.w_c, w.b, w.a, w.lif, &ctx, w.name + ".spatial");
  }
  return ProcessingOutput{FeedbackSignal{sa.out, origin_segment}, sa.m, mixed};
}

}  // namespace tdformer
