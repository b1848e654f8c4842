#include <cmath>
#include <random>

#include "tdformer/analysis.hpp"
#include "tdformer/layers.hpp"

namespace tdformer {

namespace {

LifConfig soft_form(const LifConfig& cfg) {
  LifConfig out = cfg;
  out.reset = ResetMode::soft;
  out.validate();
  return out;
}

bool in_window(double h, const LifConfig& cfg) {
  return h > cfg.window_lo() && h < cfg.window_hi();
}

// One soft-reset transition H(t) -> H(t+1) with X(t+1) = x + S(t) W.
Var transition(const Var& h, const Var& x, const Var& w_fb, const LifConfig& cfg) {
  Var s = spike_fn(h, cfg);
  Var v = sub(h, scale(s, cfg.v_th));
  Var drive = w_fb ? add(x, matmul(s, w_fb)) : x;
  return lif_step(NeuronState{v, {}}, drive, cfg).h;
}

}  // namespace

double epsilon_baseline(double h, const LifConfig& cfg) {
  return in_window(h, cfg) ? 0.0 : cfg.leak();
}

double epsilon_feedback(double h, const LifConfig& cfg, double dphi_ds) {
  return in_window(h, cfg) ? dphi_ds / cfg.v_th : cfg.leak();
}

double measure_epsilon(double h, const LifConfig& cfg, double dphi_ds) {
  const LifConfig soft = soft_form(cfg);
  Var h0 = make_tensor(Shape{1, 1}, {h}, true);
  Var x = make_tensor(Shape{1, 1}, {0.25 * soft.v_th});
  Var w = dphi_ds != 0.0 ? make_tensor(Shape{1, 1}, {dphi_ds}) : nullptr;
  backward(transition(h0, x, w, soft));
  return h0->grad.empty() ? 0.0 : h0->grad[0];
}

std::vector<EpsilonProbe> epsilon_probes(std::size_t count, const LifConfig& cfg, double dphi_ds,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-cfg.v_th, 3.0 * cfg.v_th);
  std::vector<EpsilonProbe> out(count);
  for (EpsilonProbe& p : out) {
    p.h = dist(rng);
    p.in_window = in_window(p.h, cfg);
    p.closed_baseline = epsilon_baseline(p.h, cfg);
    p.measured_baseline = measure_epsilon(p.h, cfg, 0.0);
    p.closed_feedback = epsilon_feedback(p.h, cfg, dphi_ds);
    p.measured_feedback = measure_epsilon(p.h, cfg, dphi_ds);
  }
  return out;
}

JacobianProbe temporal_jacobian(const LifConfig& cfg, std::size_t steps, std::size_t units,
                                std::uint64_t seed) {
  if (steps < 2 || units < 1) throw DomainError("temporal_jacobian needs steps >= 2, units >= 1");
  const LifConfig soft = soft_form(cfg);
  Rng rng(seed);
  std::uniform_real_distribution<double> target(0.55 * soft.v_th, 1.45 * soft.v_th);
  std::vector<std::vector<double>> targets(steps, std::vector<double>(units));
  for (auto& row : targets) {
    for (double& v : row) v = target(rng);
  }
  std::uniform_real_distribution<double> wdist(-0.5, 0.5);
  std::vector<double> wv(units * units);
  for (std::size_t i = 0; i < units; ++i) {
    for (std::size_t j = 0; j < units; ++j) wv[i * units + j] = (i == j ? 1.0 : 0.0) + wdist(rng);
  }
  const Var w_fb = make_tensor(Shape{units, units}, wv);

  JacobianProbe out;
  out.steps = steps;
  out.units = units;
  out.all_in_window = true;
  for (bool feedback : {false, true}) {
    Var h1 = make_tensor(Shape{1, units}, targets[0], true);
    Var h = h1;
    for (std::size_t t = 1; t < steps; ++t) {
      // Choose X(t) so that H(t) lands on its in-window target.
      std::vector<double> x(units);
      for (std::size_t j = 0; j < units; ++j) {
        const double hv = h->values[j];
        const double s = hv >= soft.v_th ? 1.0 : 0.0;
        double fb = 0.0;
        if (feedback) {
          for (std::size_t i = 0; i < units; ++i) {
            const double si = h->values[i] >= soft.v_th ? 1.0 : 0.0;
            fb += si * wv[i * units + j];
          }
        }
        x[j] = targets[t][j] - soft.leak() * (hv - soft.v_th * s) - fb;
      }
      h = transition(h, make_tensor(Shape{1, units}, x), feedback ? w_fb : nullptr, soft);
      for (double v : h->values) out.all_in_window = out.all_in_window && in_window(v, soft);
    }
    double worst = 0.0;
    for (std::size_t j = 0; j < units; ++j) {
      h1->zero_grad();
      backward(slice(h, 1, j, j + 1));
      for (double g : h1->grad) worst = std::max(worst, std::abs(g));
    }
    (feedback ? out.max_abs_feedback : out.max_abs_baseline) = worst;
  }
  return out;
}

}  // namespace tdformer
