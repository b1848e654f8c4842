#include <algorithm>
#include <cmath>

#include "tdformer/model.hpp"

namespace tdformer {

namespace {

constexpr std::uint64_t kTopdownStream = 0x9e3779b97f4a7c15ull;

std::size_t get_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  const long v = kv.get_int(key, static_cast<long>(fallback));
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::vector<std::vector<long>> grid_neighbors(std::size_t h, std::size_t w) {
  std::vector<std::vector<long>> table(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      auto& row = table[r * w + c];
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const long rr = static_cast<long>(r) + dr;
          const long cc = static_cast<long>(c) + dc;
          const bool inside = rr >= 0 && cc >= 0 && rr < static_cast<long>(h) &&
                              cc < static_cast<long>(w);
          row.push_back(inside ? rr * static_cast<long>(w) + cc : -1);
        }
    }
  return table;
}

ResetMode parse_reset(const std::string& s) {
  if (s == "hard") return ResetMode::hard;
  if (s == "soft") return ResetMode::soft;
  throw ConfigError("config key 'model.lif_reset': expected hard or soft, got '" + s + "'");
}

}  // namespace

SubnetSchedule ModelConfig::schedule() const { return SubnetSchedule::uniform(T, n_sub, alphas); }

void ModelConfig::validate() const {
  if (T == 0) throw ConfigError("model.T must be positive");
  if (n_sub == 0 || T % n_sub != 0) {
    throw ConfigError("model.n_sub must divide model.T");
  }
  schedule();
  if (grid_h == 0 || grid_w == 0 || in_channels == 0 || embed_c == 0 || classes < 2 ||
      mlp_ratio == 0) {
    throw ConfigError("model sizes must be positive (classes >= 2)");
  }
  if (conv_blocks == 0) throw ConfigError("model.conv_blocks must be at least 1");
  if (!(clamp_a >= 1.0 && clamp_a <= 2.0)) {
    throw ConfigError("model.clamp_a must lie in [1, 2]");
  }
  if (!(clamp_b >= 0.0 && clamp_b < clamp_a)) {
    throw ConfigError("model.clamp_b must satisfy 0 <= b < a");
  }
  AttentionConfig attn{attention, attn_scale, heads, lif};
  attn.validate(embed_c);
  lif.validate();
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv, const std::string& p) {
  ModelConfig c;
  c.T = get_size(kv, p + "T", c.T);
  c.n_sub = get_size(kv, p + "n_sub", c.n_sub);
  c.alphas = kv.get_doubles(p + "alphas", {});
  c.grid_h = get_size(kv, p + "grid_h", c.grid_h);
  c.grid_w = get_size(kv, p + "grid_w", c.grid_w);
  c.in_channels = get_size(kv, p + "in_channels", c.in_channels);
  c.embed_c = get_size(kv, p + "embed_c", c.embed_c);
  c.depth = get_size(kv, p + "depth", c.depth);
  c.conv_blocks = get_size(kv, p + "conv_blocks", c.conv_blocks);
  c.mlp_ratio = get_size(kv, p + "mlp_ratio", c.mlp_ratio);
  c.classes = get_size(kv, p + "classes", c.classes);
  c.attention = parse_attention_kind(kv.get_string(p + "attention", to_string(c.attention)));
  c.heads = get_size(kv, p + "heads", c.heads);
  c.attn_scale = kv.get_double(p + "attn_scale", c.attn_scale);
  c.cm = parse_cm_variant(kv.get_string(p + "cm", to_string(c.cm)));
  c.pm = parse_pm_variant(kv.get_string(p + "pm", to_string(c.pm)));
  c.clamp_a = kv.get_double(p + "clamp_a", c.clamp_a);
  c.clamp_b = kv.get_double(p + "clamp_b", c.clamp_b);
  c.lif.tau = kv.get_double(p + "lif_tau", c.lif.tau);
  c.lif.v_th = kv.get_double(p + "lif_v_th", c.lif.v_th);
  c.lif.v_reset = kv.get_double(p + "lif_v_reset", c.lif.v_reset);
  c.lif.reset = parse_reset(kv.get_string(p + "lif_reset", "hard"));
  c.topdown = kv.get_bool(p + "topdown", c.topdown);
  c.persist_membrane = kv.get_bool(p + "persist_membrane", c.persist_membrane);
  c.seed = static_cast<std::uint64_t>(kv.get_int(p + "seed", static_cast<long>(c.seed)));
  return c;
}

void ModelConfig::write_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "T", std::to_string(T));
  kv.set(p + "n_sub", std::to_string(n_sub));
  kv.set(p + "alphas", join_doubles(alphas.empty() ? default_alphas(n_sub) : alphas));
  kv.set(p + "grid_h", std::to_string(grid_h));
  kv.set(p + "grid_w", std::to_string(grid_w));
  kv.set(p + "in_channels", std::to_string(in_channels));
  kv.set(p + "embed_c", std::to_string(embed_c));
  kv.set(p + "depth", std::to_string(depth));
  kv.set(p + "conv_blocks", std::to_string(conv_blocks));
  kv.set(p + "mlp_ratio", std::to_string(mlp_ratio));
  kv.set(p + "classes", std::to_string(classes));
  kv.set(p + "attention", to_string(attention));
  kv.set(p + "heads", std::to_string(heads));
  kv.set(p + "attn_scale", format_double(attn_scale));
  kv.set(p + "cm", to_string(cm));
  kv.set(p + "pm", to_string(pm));
  kv.set(p + "clamp_a", format_double(clamp_a));
  kv.set(p + "clamp_b", format_double(clamp_b));
  kv.set(p + "lif_tau", format_double(lif.tau));
  kv.set(p + "lif_v_th", format_double(lif.v_th));
  kv.set(p + "lif_v_reset", format_double(lif.v_reset));
  kv.set(p + "lif_reset", lif.reset == ResetMode::hard ? "hard" : "soft");
  kv.set(p + "topdown", topdown ? "true" : "false");
  kv.set(p + "persist_membrane", persist_membrane ? "true" : "false");
  kv.set(p + "seed", std::to_string(seed));
}

TdFormer::TdFormer(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.alphas.empty()) cfg_.alphas = default_alphas(cfg_.n_sub);
  Rng rng(cfg_.seed);
  Rng td_rng(cfg_.seed ^ kTopdownStream);
  const std::size_t c = cfg_.embed_c;
  neighbors_ = grid_neighbors(cfg_.grid_h, cfg_.grid_w);
  const std::size_t k = neighbors_[0].size();
  for (std::size_t i = 0; i < cfg_.conv_blocks; ++i) {
    const std::size_t in = (i == 0 ? cfg_.in_channels : c) * k;
    embed_.push_back(
        SpikingLinear::create(store_, "embed" + std::to_string(i), in, c, cfg_.lif, rng));
  }
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    TransformerBlock b;
    b.name = "block" + std::to_string(l);
    b.cm = create_control(store_, b.name, c, cfg_.cm, cfg_.topdown, cfg_.lif, rng, td_rng);
    b.attn = AttentionConfig{cfg_.attention, cfg_.attn_scale, cfg_.heads, cfg_.lif};
    b.proj = SpikingLinear::create(store_, b.name + ".proj", c, c, cfg_.lif, rng);
    const std::size_t hidden = c * cfg_.mlp_ratio;
    b.mlp1 = SpikingLinear::create(store_, b.name + ".mlp1", c, hidden, cfg_.lif, rng);
    b.mlp2 = SpikingLinear::create(store_, b.name + ".mlp2", hidden, c, cfg_.lif, rng);
    blocks_.push_back(std::move(b));
  }
  head_ = Linear::create(store_, "head", c, cfg_.classes, rng);
  if (cfg_.topdown) {
    pm_ = std::make_unique<ProcessingWeights>(create_processing(
        store_, "pm", c, cfg_.pm, cfg_.clamp_b, cfg_.clamp_a, cfg_.lif, td_rng));
  }
}

SpikeTensor TdFormer::embed(const Var& x, RunContext& ctx) const {
  const Shape& s = x->shape;
  if (s.rank() != 4 || s[2] != cfg_.tokens() || s[3] != cfg_.in_channels) {
    throw DimensionError("model input must be [T, B, " + std::to_string(cfg_.tokens()) + ", " +
                         std::to_string(cfg_.in_channels) + "], got " + s.str());
  }
  Var cur = x;
  SpikeTensor out;
  for (const SpikingLinear& layer : embed_) {
    Var patches = gather_neighbors(cur, neighbors_);
    out = layer.forward(patches, ctx);
    cur = out.node();
  }
  return out;
}

SpikeTensor TdFormer::transformer(const SpikeTensor& s_in, const FeedbackSignal* fb,
                                  RunContext& ctx) const {
  SpikeTensor s = s_in;
  for (const TransformerBlock& b : blocks_) {
    Qkv qkv = control_module(s, fb, b.cm, ctx);
    SpikeTensor a;
    {
      CountLabel label(b.name + ".attn");
      a = attend(qkv, b.attn, &ctx, b.name + ".attn");
    }
    s = spike_or(s, b.proj.forward(a.node(), ctx));
    SpikeTensor m = b.mlp2.forward(b.mlp1.forward(s.node(), ctx).node(), ctx);
    s = spike_or(s, m);
  }
  return s;
}

Var TdFormer::head(const SpikeTensor& h) const {
  CountLabel label("head");
  return head_.forward(mean(h.node(), 2));
}

ProcessingOutput TdFormer::process(const SpikeTensor& h, RunContext& ctx,
                                   std::size_t origin) const {
  if (!pm_) throw ConfigError("model was built without the top-down pathway");
  return processing_module(h, *pm_, ctx, origin);
}

ChainResult run_subnet_chain(const TdFormer& model, const Var& x, const SubnetSchedule& schedule,
                             RunContext& ctx, const ChainOptions& options) {
  schedule.validate();
  if (x->shape.rank() != 4 || x->shape[0] != schedule.total_T) {
    throw ConfigError("schedule covers T=" + std::to_string(schedule.total_T) +
                      " but input is " + x->shape.str());
  }
  ctx.membranes.clear();
  ChainResult out;
  std::optional<FeedbackSignal> prev;
  const std::size_t n_seg = schedule.size();
  for (std::size_t n = 0; n < n_seg; ++n) {
    const auto [begin, end] = schedule.segments[n];
    Var x_n = n_seg == 1 ? x : slice(x, 0, begin, end);
    SpikeTensor s_bu = model.embed(x_n, ctx);
    std::optional<FeedbackSignal> aligned;
    if (prev) aligned = FeedbackSignal{align_feedback(prev->s_td, end - begin), prev->origin_segment};
    SpikeTensor h = model.transformer(s_bu, aligned ? &*aligned : nullptr, ctx);
    if (options.h_hook) h = options.h_hook(n, h);
    out.logits.push_back(model.head(h));
    out.h.push_back(h);
    if (model.has_topdown() && options.feedback && n + 1 < n_seg) {
      ProcessingOutput pm = model.process(h, ctx, n);
      prev = pm.signal;
      out.feedback.push_back(pm.signal);
      out.pm_maps.push_back(pm.m);
    }
  }
  return out;
}

Var tdformer_loss(const std::vector<Var>& logits, std::span<const int> targets,
                  const std::vector<double>& alphas, std::vector<double>* stage_losses) {
  if (logits.empty() || logits.size() != alphas.size()) {
    throw ConfigError("tdformer_loss: " + std::to_string(logits.size()) + " stages for " +
                      std::to_string(alphas.size()) + " weights");
  }
  double sum = 0.0;
  for (double a : alphas) sum += a;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("tdformer_loss: weights sum to " + std::to_string(sum) + ", not 1");
  }
  if (stage_losses) stage_losses->clear();
  Var total;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    Var avg = logits[n]->shape.rank() == 3 ? mean(logits[n], 0) : logits[n];
    Var ce = cross_entropy(avg, targets);
    if (stage_losses) stage_losses->push_back(ce->item());
    Var weighted = scale(ce, alphas[n]);
    total = n == 0 ? weighted : add(total, weighted);
  }
  return total;
}

double combine_stage_losses(const std::vector<double>& stage, const std::vector<double>& alphas) {
  const bool f32 = precision() == Precision::f32;
  auto round = [f32](double v) { return f32 ? static_cast<double>(static_cast<float>(v)) : v; };
  double total = 0.0;
  for (std::size_t n = 0; n < stage.size(); ++n) {
    const double w = round(stage[n] * alphas.at(n));
    total = n == 0 ? w : round(total + w);
  }
  return total;
}

std::vector<int> predict(const ChainResult& r) {
  const Var& last = r.logits.back();
  const Shape& s = last->shape;
  const std::size_t steps = s[0], batch = s[1], classes = s[2];
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t j = 0; j < classes; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < steps; ++t) acc += last->values[(t * batch + b) * classes + j];
      if (acc > best_v) {
        best_v = acc;
        best = j;
      }
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

}  // namespace tdformer
