#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tdformer/spiking.hpp"
#include "tdformer/tensor.hpp"

namespace tdformer {

// ---------------------------------------------------------------------------
// Variance bound for Y = X * M with X ~ Bernoulli(f) and M in [b, a].

// f at which the two branches of clamp_variance_bound meet: (a + b) / (2a).
double clamp_variance_breakpoint(double a, double b);

// Piecewise closed form. Throws DomainError unless 0 <= b < a and f in [0, 1].
double clamp_variance_bound(double a, double b, double f);

// max Var(X M) over all laws of M on [b, a]. Equals clamp_variance_bound for
// f >= breakpoint; below it the maximizer is M = a and the value a^2 f (1-f).
double clamp_variance_tight(double a, double b, double f);

enum class BoundLaw { two_point, uniform, deterministic };
BoundLaw parse_bound_law(const std::string& name);
std::string to_string(BoundLaw law);

struct BoundReport {
  double a = 0, b = 0, f = 0;
  BoundLaw law = BoundLaw::uniform;
  bool applicable = true;  // false when the two-point p falls outside [0, 1]
  double p = 0;            // two-point probability of M = a
  double bound = 0;
  double tight = 0;
  double empirical = 0;
  double sigma = 0;  // standard error of the sample variance
  double margin = 0; // bound - empirical
  std::size_t samples = 0;

  bool violation() const { return applicable && empirical > bound + 3.0 * sigma; }
};

BoundReport verify_bound_mc(double a, double b, double f, BoundLaw law, std::size_t samples,
                            std::uint64_t seed);

// a in {1, 1.5, 2}, b in {0, 0.2}, f in {0.05, 0.10, ..., 0.95}, every law.
std::vector<BoundReport> bound_grid(std::size_t samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Output variance of the pre-spike attention sums for Bernoulli Q, K, V.

enum class VarianceKind { ssa, qkta };
VarianceKind parse_variance_kind(const std::string& name);
std::string to_string(VarianceKind kind);

// SSA: N d Var(q k v) (independent-term sum). QKTA: d f_Q (1 - f_Q).
double attention_variance(VarianceKind kind, double fq, double fk, double fv, std::size_t n,
                          std::size_t d);

// Var of sum_{n,c} Q_ic K_nc V_nj including the covariance of terms that
// share a Q or a V entry.
double ssa_variance_exact(double fq, double fk, double fv, std::size_t n, std::size_t d);

struct VarianceSample {
  double mean = 0;
  double variance = 0;
  double sigma = 0;  // standard error of `variance`
  std::size_t samples = 0;
};

VarianceSample attention_variance_mc(VarianceKind kind, double fq, double fk, double fv,
                                     std::size_t n, std::size_t d, std::size_t samples,
                                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Moments of Y = clamp(M, b, a) X with M = sum_c w'_c X_c, ||w'|| = 1.

double pm_e_ratio(double f);
double pm_var_ratio(double f);

struct PmMoments {
  double f = 0, a = 0, b = 0;
  std::size_t channels = 0;
  std::size_t samples = 0;
  double e_ratio = 0;  // closed forms
  double var_ratio = 0;
  double mc_e_ratio = 0;
  double mc_var_ratio = 0;
  double weight_sum = 0;      // sum_c w'_c, so E[M] = f * weight_sum
  double corr_mean_abs = 0;   // mean over c of |corr(M, X_c)|
  double corr_max_abs = 0;
  double corr_pooled = 0;     // corr(M, X_c) with (sample, c) pairs pooled
  bool in_regime = true;
  std::string regime_note;
};

// Weights are drawn N(0, 1), centred to zero sum and scaled to unit norm so
// the Gaussian limit of M has mean 0 and variance f (1 - f).
PmMoments pm_moments(double f, double a, double b, std::size_t channels, std::size_t samples,
                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Membrane sensitivity dH(t+1)/dH(t) under the soft-reset recursion
// H(t+1) = (1 - 1/tau)(H(t) - v_th S(t)) + X(t+1) [+ phi(S(t))].

double epsilon_baseline(double h, const LifConfig& cfg);
double epsilon_feedback(double h, const LifConfig& cfg, double dphi_ds);

// Autodiff measurement on a one-unit network with phi(S) = dphi_ds * S
// (dphi_ds = 0 is the baseline neuron).
double measure_epsilon(double h, const LifConfig& cfg, double dphi_ds);

struct EpsilonProbe {
  double h = 0;
  bool in_window = false;
  double closed_baseline = 0;
  double measured_baseline = 0;
  double closed_feedback = 0;
  double measured_feedback = 0;
};

// h drawn uniformly on [-v_th, 3 v_th].
std::vector<EpsilonProbe> epsilon_probes(std::size_t count, const LifConfig& cfg, double dphi_ds,
                                         std::uint64_t seed);

struct JacobianProbe {
  std::size_t steps = 0;
  std::size_t units = 0;
  bool all_in_window = false;
  double max_abs_baseline = 0;  // max |dH(T)/dH(1)| entry without feedback
  double max_abs_feedback = 0;  // same chain with phi(S) = S W_fb
};

// Builds input currents that keep every unit inside the surrogate window at
// every step, then measures the membrane-only Jacobian across the chain.
JacobianProbe temporal_jacobian(const LifConfig& cfg, std::size_t steps, std::size_t units,
                                std::uint64_t seed);

// ---------------------------------------------------------------------------
// Mutual information across time steps.

struct MiMatrix {
  std::size_t T = 0;
  std::vector<double> values;  // row-major T x T, bits
  std::size_t samples = 0;
  std::size_t units = 0;
  std::size_t degenerate_units = 0;  // constant at some step
  std::string estimator = "plug-in MI of per-unit binary spikes, 2x2 tables, mean over units";

  double at(std::size_t i, std::size_t j) const { return values[i * T + j]; }
  double mean_off_diagonal() const;
};

// features: [T, B, N, C] spikes. `units` (n, c) pairs are sampled without
// replacement when fewer than N*C; 0 means all. Needs B >= 100.
MiMatrix mi_matrix(const SpikeTensor& features, std::size_t units, std::uint64_t seed);

// Heatmap with a fixed sequential colormap and a colorbar.
std::string mi_svg(const MiMatrix& mi, const std::string& title);

// ---------------------------------------------------------------------------
// Energy from instrumented operation counts.

struct EnergyConstants {
  double e_mac_pj = 4.6;
  double e_ac_pj = 0.9;
};

// SOP = f_r * T * FLOPs, FLOPs being per-step multiply-accumulates.
double sop(double rate, double steps, double flops);

struct EnergyRow {
  std::string label;
  bool tdac = false;    // top-down pathway (".td" slots and "pm.*")
  bool dense = false;   // analog operand, priced per MAC
  double macs = 0;      // dense MACs per sample over every step it ran
  double input_rate = 0;
  double sop = 0;       // input_rate * macs
  double accumulates = 0;  // counted spike-gated accumulates per sample
  double elementwise = 0;
  double energy_pj = 0;
};

struct EnergyLedger {
  EnergyConstants constants;
  std::vector<EnergyRow> rows;
  double baseline_pj = 0;
  double tdac_pj = 0;
  double total_pj() const { return baseline_pj + tdac_pj; }
  double tdac_share() const;
};

// Input firing rate per label as seen by the counter.
std::map<std::string, double> measured_input_rates(const OpCounter& counter);

// Rows for every labelled entry of `counter`, normalized per sample. Each
// label needs an entry in `rates` (ConfigError otherwise). Labels in `dense`
// are priced at E_MAC per MAC, the rest at E_AC per SOP; elementwise spike
// gating is priced at E_AC per op.
EnergyLedger energy_report(const OpCounter& counter, const std::map<std::string, double>& rates,
                           std::size_t batch, const EnergyConstants& constants,
                           const std::set<std::string>& dense = {"embed0", "head"});

}  // namespace tdformer
