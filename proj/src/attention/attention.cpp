#include "tdformer/attention.hpp"

namespace tdformer {

AttentionKind parse_attention_kind(const std::string& name) {
  if (name == "ssa") return AttentionKind::ssa;
  if (name == "sdsa1") return AttentionKind::sdsa1;
  if (name == "sdsa2") return AttentionKind::sdsa2;
  if (name == "qkta") return AttentionKind::qkta;
  if (name == "qkca") return AttentionKind::qkca;
  throw ConfigError("unknown attention kind '" + name + "'");
}

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::ssa: return "ssa";
    case AttentionKind::sdsa1: return "sdsa1";
    case AttentionKind::sdsa2: return "sdsa2";
    case AttentionKind::qkta: return "qkta";
    case AttentionKind::qkca: return "qkca";
  }
  return "?";
}

bool uses_scale(AttentionKind kind) {
  return kind == AttentionKind::ssa || kind == AttentionKind::sdsa2;
}

void AttentionConfig::validate(std::size_t channels) const {
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("attention heads (" + std::to_string(heads) +
                      ") must divide channels (" + std::to_string(channels) + ")");
  }
  if (uses_scale(kind) && !(scale > 0.0)) {
    throw ConfigError("attention scale must be > 0 for " + to_string(kind));
  }
  lif.validate();
}

QkMode parse_qk_mode(const std::string& name) {
  if (name == "token") return QkMode::token;
  if (name == "channel") return QkMode::channel;
  throw ConfigError("invalid qk attention mode '" + name + "'");
}

namespace {

void require_tokens(const Shape& s, const char* op) {
  if (s.rank() != 4) {
    throw DimensionError(std::string(op) + " expects [T, B, N, C], got " + s.str());
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape " + a.str() + " vs " + b.str());
  }
}

void require_heads(const Shape& s, std::size_t heads) {
  if (heads == 0 || s[3] % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide channels (" +
                      std::to_string(s[3]) + ")");
  }
}

// [T, B, N, C] -> [T, B, h, N, d]; identity when h == 1.
Var to_heads(const Var& x, std::size_t heads) {
  if (heads == 1) return x;
  const Shape& s = x->shape;
  Var r = reshape(x, Shape{s[0], s[1], s[2], heads, s[3] / heads});
  return permute(r, {0, 1, 3, 2, 4});
}

Var from_heads(const Var& x, std::size_t heads) {
  if (heads == 1) return x;
  const Shape& s = x->shape;
  Var p = permute(x, {0, 1, 3, 2, 4});
  return reshape(p, Shape{s[0], s[1], s[3], s[2] * s[4]});
}

Var transpose_last(const Var& x) {
  return x->shape.rank() == 4 ? permute(x, {0, 1, 3, 2}) : permute(x, {0, 1, 2, 4, 3});
}

SpikeTensor fire(RunContext* ctx, const std::string& key, const Var& current,
                 const LifConfig& lif) {
  if (ctx) return ctx->fire(key, current, lif).spikes;
  return run_sequence(current, lif).spikes;
}

}  // namespace

Qkv make_qkv(const SpikeTensor& s_bu, const QkvWeights& w, RunContext& ctx) {
  require_tokens(s_bu.shape(), "make_qkv");
  const Var& x = s_bu.node();
  return Qkv{w.q.forward(x, ctx), w.k.forward(x, ctx), w.v.forward(x, ctx)};
}

Var qktv(const Qkv& x, std::size_t heads) {
  require_tokens(x.q.shape(), "qktv");
  require_same(x.q.shape(), x.k.shape(), "qktv Q/K");
  require_same(x.k.shape(), x.v.shape(), "qktv K/V");
  require_heads(x.q.shape(), heads);
  Var q = to_heads(x.q.node(), heads);
  Var k = to_heads(x.k.node(), heads);
  Var v = to_heads(x.v.node(), heads);
  Var attn = matmul(q, transpose_last(k));
  return from_heads(matmul(attn, v), heads);
}

SpikeTensor ssa(const Qkv& x, double s, std::size_t heads, const LifConfig& lif,
                RunContext* ctx, const std::string& key) {
  if (!(s > 0.0)) throw ConfigError("ssa scale must be > 0");
  return fire(ctx, key, scale(qktv(x, heads), s), lif);
}

SpikeTensor sdsa1(const Qkv& x, const LifConfig& lif, RunContext* ctx,
                  const std::string& key) {
  require_tokens(x.q.shape(), "sdsa1");
  require_same(x.q.shape(), x.k.shape(), "sdsa1 Q/K");
  require_same(x.k.shape(), x.v.shape(), "sdsa1 K/V");
  Var kv = hadamard(x.k.node(), x.v.node());
  Var column = reduce_sum(kv, 2, true);
  SpikeTensor gate = fire(ctx, key, column, lif);
  return SpikeTensor(hadamard(x.q.node(), gate.node()));
}

SpikeTensor sdsa2(const Qkv& x, double s, std::size_t heads, const LifConfig& lif,
                  RunContext* ctx, const std::string& key) {
  if (!(s > 0.0)) throw ConfigError("sdsa2 scale must be > 0");
  LifConfig scaled = lif;
  scaled.v_th = lif.v_th * s;
  scaled.validate();
  return fire(ctx, key, qktv(x, heads), scaled);
}

SpikeTensor qk_attention(const SpikeTensor& q, const SpikeTensor& k, QkMode mode,
                         std::size_t heads, const LifConfig& lif, RunContext* ctx,
                         const std::string& key) {
  require_tokens(q.shape(), "qk_attention");
  require_same(q.shape(), k.shape(), "qk_attention Q/K");
  if (mode == QkMode::channel) {
    SpikeTensor gate = fire(ctx, key, reduce_sum(q.node(), 2, true), lif);
    return SpikeTensor(hadamard(gate.node(), k.node()));
  }
  require_heads(q.shape(), heads);
  Var qh = to_heads(q.node(), heads);
  Var sums = reduce_sum(qh, qh->shape.rank() - 1, true);
  SpikeTensor gate = fire(ctx, key, sums, lif);
  return SpikeTensor(from_heads(hadamard(gate.node(), to_heads(k.node(), heads)), heads));
}

SpikeTensor attend(const Qkv& x, const AttentionConfig& cfg, RunContext* ctx,
                   const std::string& key) {
  cfg.validate(x.q.shape()[3]);
  switch (cfg.kind) {
    case AttentionKind::ssa: return ssa(x, cfg.scale, cfg.heads, cfg.lif, ctx, key);
    case AttentionKind::sdsa1: return sdsa1(x, cfg.lif, ctx, key);
    case AttentionKind::sdsa2: return sdsa2(x, cfg.scale, cfg.heads, cfg.lif, ctx, key);
    case AttentionKind::qkta:
      return qk_attention(x.q, x.k, QkMode::token, cfg.heads, cfg.lif, ctx, key);
    case AttentionKind::qkca:
      return qk_attention(x.q, x.k, QkMode::channel, cfg.heads, cfg.lif, ctx, key);
  }
  throw ConfigError("unhandled attention kind");
}

SpatialAttention pm_spatial_attention(const SpikeTensor& x, const Var& w_c, double b,
                                      double a, const LifConfig& lif, RunContext* ctx,
                                      const std::string& key) {
  if (!(b < a)) throw ConfigError("pm_spatial_attention needs b < a");
  require_tokens(x.shape(), "pm_spatial_attention");
  const std::size_t c = x.shape()[3];
  if (w_c->shape != Shape{c}) {
    throw DimensionError("pm_spatial_attention: w_c " + w_c->shape.str() + " for " +
                         std::to_string(c) + " channels");
  }
  Var raw = matmul(x.node(), reshape(w_c, Shape{c, 1}));
  Var m = clamp(raw, b, a);
  Var pre = hadamard(x.node(), m);
  return SpatialAttention{fire(ctx, key, pre, lif), m, pre};
}

}  // namespace tdformer
