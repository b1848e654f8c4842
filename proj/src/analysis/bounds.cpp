#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tdformer/analysis.hpp"
#include "tdformer/layers.hpp"

namespace tdformer {

namespace {

void check_domain(double a, double b, double f) {
  if (!(b >= 0.0 && b < a)) {
    throw DomainError("variance bound needs 0 <= b < a, got a=" + std::to_string(a) +
                      " b=" + std::to_string(b));
  }
  if (!(f >= 0.0 && f <= 1.0)) {
    throw DomainError("firing rate must lie in [0, 1], got " + std::to_string(f));
  }
}

bool draw(Rng& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

// Sample variance and the standard error of it from the fourth central moment.
VarianceSample summarize(const std::vector<double>& y) {
  VarianceSample out;
  out.samples = y.size();
  if (y.empty()) return out;
  const double n = static_cast<double>(y.size());
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double v : y) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  out.mean = mean;
  out.variance = m2;
  out.sigma = std::sqrt(std::max(0.0, m4 - m2 * m2) / n);
  return out;
}

}  // namespace

double clamp_variance_breakpoint(double a, double b) { return (a + b) / (2.0 * a); }

double clamp_variance_bound(double a, double b, double f) {
  check_domain(a, b, f);
  if (f <= clamp_variance_breakpoint(a, b)) {
    return a * a * (f * f - f + 0.5) + a * b * (1.0 - 2.0 * f) + 0.5 * b * b;
  }
  return (a * a + 2.0 * a * b + b * b - 4.0 * f * a * b) / 4.0;
}

double clamp_variance_tight(double a, double b, double f) {
  check_domain(a, b, f);
  if (f <= clamp_variance_breakpoint(a, b)) return a * a * f * (1.0 - f);
  return (a + b) * (a + b) / 4.0 - a * b * f;
}

BoundLaw parse_bound_law(const std::string& name) {
  if (name == "two-point") return BoundLaw::two_point;
  if (name == "uniform") return BoundLaw::uniform;
  if (name == "deterministic") return BoundLaw::deterministic;
  throw ConfigError("unknown law '" + name + "' (two-point, uniform, deterministic)");
}

std::string to_string(BoundLaw law) {
  switch (law) {
    case BoundLaw::two_point: return "two-point";
    case BoundLaw::uniform: return "uniform";
    case BoundLaw::deterministic: return "deterministic";
  }
  return "?";
}

BoundReport verify_bound_mc(double a, double b, double f, BoundLaw law, std::size_t samples,
                            std::uint64_t seed) {
  BoundReport r;
  r.a = a;
  r.b = b;
  r.f = f;
  r.law = law;
  r.bound = clamp_variance_bound(a, b, f);
  r.tight = clamp_variance_tight(a, b, f);
  r.samples = samples;
  if (samples == 0) throw DomainError("verify_bound_mc needs at least one sample");
  if (law == BoundLaw::two_point) {
    r.p = f > 0.0 ? (a + b - 2.0 * b * f) / (2.0 * f * (a - b)) : INFINITY;
    if (!(r.p >= 0.0 && r.p <= 1.0)) {
      r.applicable = false;
      r.empirical = NAN;
      r.sigma = NAN;
      r.margin = NAN;
      return r;
    }
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(b, a);
  std::vector<double> y(samples);
  for (double& v : y) {
    const bool x = draw(rng, f);
    double m = a;
    if (law == BoundLaw::two_point) m = draw(rng, r.p) ? a : b;
    else if (law == BoundLaw::uniform) m = uni(rng);
    v = x ? m : 0.0;
  }
  const VarianceSample s = summarize(y);
  r.empirical = s.variance;
  r.sigma = s.sigma;
  r.margin = r.bound - r.empirical;
  return r;
}

std::vector<BoundReport> bound_grid(std::size_t samples, std::uint64_t seed) {
  std::vector<BoundReport> out;
  std::uint64_t k = 0;
  for (double a : {1.0, 1.5, 2.0}) {
    for (double b : {0.0, 0.2}) {
      for (int i = 1; i <= 19; ++i) {
        const double f = 0.05 * i;
        for (BoundLaw law : {BoundLaw::two_point, BoundLaw::uniform, BoundLaw::deterministic}) {
          out.push_back(verify_bound_mc(a, b, f, law, samples, seed + 7919 * k++));
        }
      }
    }
  }
  return out;
}

VarianceKind parse_variance_kind(const std::string& name) {
  if (name == "ssa") return VarianceKind::ssa;
  if (name == "qkta") return VarianceKind::qkta;
  throw ConfigError("unknown variance kind '" + name + "' (ssa, qkta)");
}

std::string to_string(VarianceKind kind) { return kind == VarianceKind::ssa ? "ssa" : "qkta"; }

namespace {

void check_rates(double fq, double fk, double fv) {
  for (double r : {fq, fk, fv}) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw DomainError("firing rate must lie in [0, 1], got " + std::to_string(r));
    }
  }
}

}  // namespace

double attention_variance(VarianceKind kind, double fq, double fk, double fv, std::size_t n,
                          std::size_t d) {
  check_rates(fq, fk, fv);
  const double nd = static_cast<double>(n) * static_cast<double>(d);
  if (kind == VarianceKind::qkta) return static_cast<double>(d) * fq * (1.0 - fq);
  const double gq = 1.0 - fq, gk = 1.0 - fk, gv = 1.0 - fv;
  return nd * (fq * fk * fv * gq * gk * gv + fq * fk * fv * fv * gq * gk +
               fq * fk * fk * fv * gq * gv + fq * fq * fk * fv * gk * gv +
               fq * fk * fk * fv * fv * gq + fq * fq * fk * fv * fv * gk +
               fq * fq * fk * fk * fv * gv);
}

double ssa_variance_exact(double fq, double fk, double fv, std::size_t n, std::size_t d) {
  check_rates(fq, fk, fv);
  const double N = static_cast<double>(n);
  const double D = static_cast<double>(d);
  const double m = fq * fk * fv;
  const double single = m * (1.0 - m);
  // Terms (n, c), (n', c) share Q_ic; terms (n, c), (n, c') share V_nj.
  const double share_q = fq * (1.0 - fq) * fk * fk * fv * fv;
  const double share_v = fv * (1.0 - fv) * fq * fq * fk * fk;
  return N * D * single + N * D * (N - 1.0) * share_q + N * D * (D - 1.0) * share_v;
}

VarianceSample attention_variance_mc(VarianceKind kind, double fq, double fk, double fv,
                                     std::size_t n, std::size_t d, std::size_t samples,
                                     std::uint64_t seed) {
  check_rates(fq, fk, fv);
  Rng rng(seed);
  std::vector<double> y(samples);
  std::vector<int> q(d);
  for (double& out : y) {
    for (int& v : q) v = draw(rng, fq);
    if (kind == VarianceKind::qkta) {
      int s = 0;
      for (int v : q) s += v;
      out = s;
      continue;
    }
    // Entry (i, j) of (Q K^T) V: sum_n V_nj sum_c Q_ic K_nc.
    long total = 0;
    for (std::size_t t = 0; t < n; ++t) {
      int qk = 0;
      for (std::size_t c = 0; c < d; ++c) qk += q[c] & static_cast<int>(draw(rng, fk));
      if (draw(rng, fv)) total += qk;
    }
    out = static_cast<double>(total);
  }
  return summarize(y);
}

double pm_e_ratio(double f) { return std::sqrt(f * (1.0 - f) / (2.0 * std::numbers::pi)); }

double pm_var_ratio(double f) { return f * (std::numbers::pi - f) / (2.0 * std::numbers::pi); }

PmMoments pm_moments(double f, double a, double b, std::size_t channels, std::size_t samples,
                     std::uint64_t seed) {
  check_domain(a, b, f);
  if (channels < 2 || samples < 2) throw DomainError("pm_moments needs C >= 2 and samples >= 2");
  PmMoments r;
  r.f = f;
  r.a = a;
  r.b = b;
  r.channels = channels;
  r.samples = samples;
  r.e_ratio = pm_e_ratio(f);
  r.var_ratio = pm_var_ratio(f);
  std::vector<std::string> notes;
  if (b > 0.1 * a) notes.push_back("b not near 0");
  if (a < 1.0) notes.push_back("a < 1");
  if (f > 0.2) notes.push_back("f not small");
  if (channels < 256) notes.push_back("few channels");
  r.in_regime = notes.empty();
  for (const std::string& s : notes) r.regime_note += (r.regime_note.empty() ? "" : "; ") + s;

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(channels);
  double mean_w = 0.0;
  for (double& v : w) {
    v = normal(rng);
    mean_w += v;
  }
  mean_w /= static_cast<double>(channels);
  double norm = 0.0;
  for (double& v : w) {
    v -= mean_w;
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : w) {
    v /= norm;
    r.weight_sum += v;
  }

  // Ones are placed by geometric gaps, which is exact for i.i.d. Bernoulli
  // and cheap at small f.
  const bool never = f <= 0.0;
  const bool always = f >= 1.0;
  std::geometric_distribution<long> gap(never || always ? 0.5 : f);
  std::vector<double> count(channels, 0.0);
  std::vector<double> sum_mx(channels, 0.0);
  std::vector<std::size_t> ones;
  ones.reserve(channels);
  double sum_m = 0, sum_m2 = 0, sum_k = 0, sum_mk = 0, sum_y = 0, sum_y2 = 0;
  const long C = static_cast<long>(channels);
  for (std::size_t s = 0; s < samples; ++s) {
    ones.clear();
    if (always) {
      for (long c = 0; c < C; ++c) ones.push_back(static_cast<std::size_t>(c));
    } else if (!never) {
      for (long c = gap(rng); c < C; c += 1 + gap(rng)) ones.push_back(static_cast<std::size_t>(c));
    }
    double m = 0.0;
    for (std::size_t c : ones) m += w[c];
    const double mc = std::clamp(m, b, a);
    const double k = static_cast<double>(ones.size());
    for (std::size_t c : ones) {
      count[c] += 1.0;
      sum_mx[c] += m;
    }
    sum_m += m;
    sum_m2 += m * m;
    sum_k += k;
    sum_mk += m * k;
    sum_y += mc * k;
    sum_y2 += mc * mc * k;
  }
  const double S = static_cast<double>(samples);
  const double SC = S * static_cast<double>(channels);
  const double ex = sum_k / SC;
  const double var_x = ex * (1.0 - ex);
  const double ey = sum_y / SC;
  const double var_y = sum_y2 / SC - ey * ey;
  r.mc_e_ratio = ex > 0.0 ? ey / ex : 0.0;
  r.mc_var_ratio = var_x > 0.0 ? var_y / var_x : 0.0;

  const double mean_m = sum_m / S;
  const double var_m = sum_m2 / S - mean_m * mean_m;
  double abs_sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double p = count[c] / S;
    const double denom = std::sqrt(var_m * p * (1.0 - p));
    if (denom <= 0.0) continue;
    const double rho = (sum_mx[c] / S - mean_m * p) / denom;
    abs_sum += std::abs(rho);
    r.corr_max_abs = std::max(r.corr_max_abs, std::abs(rho));
    ++counted;
  }
  r.corr_mean_abs = counted ? abs_sum / static_cast<double>(counted) : 0.0;
  const double pooled_denom = std::sqrt(var_m * var_x);
  r.corr_pooled = pooled_denom > 0.0 ? (sum_mk / SC - mean_m * ex) / pooled_denom : 0.0;
  return r;
}

}  // namespace tdformer
