// One PASS/FAIL line per acceptance criterion. Exits 1 when any line fails
// so ctest reports a red criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tdformer/experiments.hpp"

using namespace tdformer;

namespace {

int failures = 0;

void report(const char* id, bool pass, const std::string& what) {
  std::printf("%s %-4s %s\n", pass ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// 1. Finite differences.

Var normal_leaf(Shape shape, Rng& rng, bool grad = true) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = g(rng);
  return make_tensor(std::move(shape), std::move(v), grad);
}

// ||analytic - numeric|| / max(||analytic||, ||numeric||) of a random
// projection of the op output.
double relative_error(const std::vector<Var>& leaves, const std::function<Var()>& op, Rng& rng) {
  Var probe = op();
  const Var weights = normal_leaf(probe->shape, rng, false);
  auto loss = [&] { return sum_all(hadamard(op(), weights)); };
  for (const Var& l : leaves) l->zero_grad();
  backward(loss());
  const double h = 1e-4;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (const Var& l : leaves) {
    std::vector<double> analytic = l->grad;
    analytic.resize(l->values.size(), 0.0);
    for (std::size_t i = 0; i < l->values.size(); ++i) {
      const double x0 = l->values[i];
      double up, down;
      {
        NoGradScope ng;
        l->values[i] = x0 + h;
        up = loss()->item();
        l->values[i] = x0 - h;
        down = loss()->item();
      }
      l->values[i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
  }
  const double scale = std::sqrt(std::max(a2, n2));
  return scale > 0.0 ? std::sqrt(diff2) / scale : std::sqrt(diff2);
}

struct Primitive {
  const char* name;
  std::function<double(Rng&)> run;
};

std::vector<Primitive> primitives() {
  std::vector<Primitive> p;
  p.push_back({"add", [](Rng& r) {
                 Var a = normal_leaf({3, 4}, r), b = normal_leaf({4}, r);
                 return relative_error({a, b}, [&] { return add(a, b); }, r);
               }});
  p.push_back({"sub", [](Rng& r) {
                 Var a = normal_leaf({3, 1}, r), b = normal_leaf({3, 4}, r);
                 return relative_error({a, b}, [&] { return sub(a, b); }, r);
               }});
  p.push_back({"hadamard", [](Rng& r) {
                 Var a = normal_leaf({2, 3, 1}, r), b = normal_leaf({2, 3, 4}, r);
                 return relative_error({a, b}, [&] { return hadamard(a, b); }, r);
               }});
  p.push_back({"scale", [](Rng& r) {
                 Var a = normal_leaf({5}, r);
                 return relative_error({a}, [&] { return add_scalar(scale(a, -1.7), 0.3); }, r);
               }});
  p.push_back({"matmul", [](Rng& r) {
                 Var a = normal_leaf({4, 5}, r), b = normal_leaf({5, 3}, r);
                 return relative_error({a, b}, [&] { return matmul(a, b); }, r);
               }});
  p.push_back({"batched matmul", [](Rng& r) {
                 Var a = normal_leaf({2, 3, 4}, r), b = normal_leaf({4, 2}, r);
                 return relative_error({a, b}, [&] { return matmul(a, b); }, r);
               }});
  p.push_back({"reduce_sum", [](Rng& r) {
                 Var a = normal_leaf({2, 3, 4}, r);
                 const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, 2)(r);
                 return relative_error({a}, [&] { return reduce_sum(a, axis); }, r);
               }});
  p.push_back({"mean", [](Rng& r) {
                 Var a = normal_leaf({3, 4}, r);
                 return relative_error({a}, [&] { return mean(a, 1, true); }, r);
               }});
  p.push_back({"clamp", [](Rng& r) {
                 // Values are redrawn until they sit clear of the kinks.
                 Var a = normal_leaf({6}, r);
                 std::normal_distribution<double> g(0.0, 1.0);
                 for (double& v : a->values) {
                   while (std::abs(v - 0.0) < 1e-2 || std::abs(v - 1.5) < 1e-2) v = g(r);
                 }
                 return relative_error({a}, [&] { return clamp(a, 0.0, 1.5); }, r);
               }});
  p.push_back({"concat", [](Rng& r) {
                 Var a = normal_leaf({2, 3}, r), b = normal_leaf({2, 2}, r);
                 return relative_error({a, b}, [&] { return concat(a, b, 1); }, r);
               }});
  p.push_back({"slice", [](Rng& r) {
                 Var a = normal_leaf({4, 3}, r);
                 return relative_error({a}, [&] { return slice(a, 0, 1, 3); }, r);
               }});
  p.push_back({"reshape/permute", [](Rng& r) {
                 Var a = normal_leaf({2, 3, 4}, r);
                 return relative_error(
                     {a}, [&] { return permute(reshape(a, Shape{6, 4}), {1, 0}); }, r);
               }});
  p.push_back({"linear", [](Rng& r) {
                 Var x = normal_leaf({3, 5}, r), w = normal_leaf({5, 4}, r), b = normal_leaf({4}, r);
                 return relative_error({x, w, b}, [&] { return linear(x, w, b); }, r);
               }});
  p.push_back({"batch_norm", [](Rng& r) {
                 Var x = normal_leaf({2, 3, 4}, r), g = normal_leaf({4}, r), b = normal_leaf({4}, r);
                 BatchNormState st;
                 BatchNormOptions o;
                 o.channel_axis = 2;
                 return relative_error({x, g, b}, [&] { return batch_norm(x, g, b, st, o); }, r);
               }});
  p.push_back({"gather_neighbors", [](Rng& r) {
                 Var x = normal_leaf({2, 4, 3}, r);
                 const std::vector<std::vector<long>> table = {{0, 1, -1}, {1, 2, 0}, {3, -1, 2}, {3, 3, 1}};
                 return relative_error({x}, [&] { return gather_neighbors(x, table); }, r);
               }});
  p.push_back({"cross_entropy", [](Rng& r) {
                 Var z = normal_leaf({4, 3}, r);
                 const std::vector<int> y = {0, 2, 1, 2};
                 return relative_error({z}, [&] { return cross_entropy(z, y); }, r);
               }});
  return p;
}

void criterion_gradients() {
  Timer timer;
  Rng rng(2024);
  double worst = 0.0;
  std::string worst_name;
  std::size_t instances = 0;
  for (const Primitive& p : primitives()) {
    for (int i = 0; i < 100; ++i, ++instances) {
      const double e = p.run(rng);
      if (e > worst) {
        worst = e;
        worst_name = p.name;
      }
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "gradients: max relative error %.2e (%s) over %zu instances, limit 1e-4, %.1f s",
                worst, worst_name.c_str(), instances, timer.seconds());
  report("1", worst < 1e-4 && timer.seconds() < 60, buf);
}

// ---------------------------------------------------------------------------

void criterion_epsilon() {
  Timer timer;
  LifConfig cfg;  // tau 2, v_th 1
  double worst = 0.0;
  double worst_window = 0.0;
  std::size_t inside = 0;
  for (const EpsilonProbe& p : epsilon_probes(10000, cfg, 1.0, 77)) {
    worst = std::max({worst, std::abs(p.closed_baseline - p.measured_baseline),
                      std::abs(p.closed_feedback - p.measured_feedback)});
    if (p.in_window) {
      ++inside;
      worst_window = std::max(worst_window, std::abs(p.measured_feedback - 1.0));
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "epsilon: 10000 states (%zu in window), max |closed - autodiff| %.1e, "
                "in-window feedback |eps - 1| %.1e, limit 1e-12, %.2f s",
                inside, worst, worst_window, timer.seconds());
  report("2", worst <= 1e-12 && worst_window <= 1e-12 && timer.seconds() < 60, buf);
}

void criterion_bounds() {
  Timer timer;
  const std::vector<BoundReport> grid = bound_grid(100000, 5);
  std::size_t violations = 0;
  double two_point_gap = 0.0;
  std::size_t two_point_rows = 0;
  double det_gap = 0.0, det_gap_tight = 0.0;
  std::size_t det_rows = 0, det_within = 0;
  for (const BoundReport& r : grid) {
    violations += r.violation();
    if (r.law == BoundLaw::two_point && r.applicable) {
      two_point_gap = std::max(two_point_gap, std::abs(r.empirical - r.bound) / r.bound);
      ++two_point_rows;
    }
    if (r.law == BoundLaw::deterministic && r.f <= clamp_variance_breakpoint(r.a, r.b)) {
      const double gap = std::abs(r.empirical - r.bound) / r.bound;
      det_gap = std::max(det_gap, gap);
      det_gap_tight = std::max(det_gap_tight, std::abs(r.empirical - r.tight) / r.tight);
      det_within += gap < 0.02;
      ++det_rows;
    }
  }
  const double secs = timer.seconds();
  char buf[256];
  std::snprintf(buf, sizeof buf, "bound: %zu violations beyond 3 sigma over %zu grid rows, %.1f s",
                violations, grid.size(), secs);
  report("3a", violations == 0 && secs < 300, buf);
  std::snprintf(buf, sizeof buf,
                "bound: two-point law (f >= breakpoint) within 2%% of the bound, worst %.2f%% "
                "over %zu rows",
                100 * two_point_gap, two_point_rows);
  report("3b", two_point_rows > 0 && two_point_gap < 0.02, buf);
  std::snprintf(buf, sizeof buf,
                "bound: M = a (f <= breakpoint) within 2%% of the bound in %zu/%zu rows, worst "
                "%.1f%% (gap to a^2 f(1-f) %.2f%%)",
                det_within, det_rows, 100 * det_gap, 100 * det_gap_tight);
  report("3c", det_rows > 0 && det_within == det_rows, buf);
}

void criterion_moments() {
  Timer timer;
  double e_gap = 0, v_gap = 0, rho = 0, pooled = 0;
  std::uint64_t seed = 41;
  for (double f : {0.05, 0.1}) {
    const PmMoments m = pm_moments(f, 1.5, 0.0, 1024, 100000, seed++);
    e_gap = std::max(e_gap, std::abs(m.mc_e_ratio - m.e_ratio) / m.e_ratio);
    v_gap = std::max(v_gap, std::abs(m.mc_var_ratio - m.var_ratio) / m.var_ratio);
    rho = std::max(rho, m.corr_mean_abs);
    pooled = std::max(pooled, std::abs(m.corr_pooled));
  }
  const double secs = timer.seconds();
  report("4a", e_gap < 0.1 && secs < 120,
         fmt("moments: E(Y)/E(X) within 10%%, worst %.2f%%", 100 * e_gap));
  report("4b", v_gap < 0.1 && secs < 120,
         fmt("moments: Var(Y)/Var(X) within 10%%, worst %.2f%%", 100 * v_gap));
  report("4c", rho < 0.02,
         fmt("moments: per-channel mean |corr(M, X_c)| = %.4f, limit 0.02 (pooled %.1e)", rho, pooled));
}

void criterion_attention_variance() {
  Timer timer;
  const std::size_t n = 16, d = 16;
  const double f = 0.3;
  const VarianceSample q = attention_variance_mc(VarianceKind::qkta, f, f, f, n, d, 100000, 8);
  const double q_closed = attention_variance(VarianceKind::qkta, f, f, f, n, d);
  const VarianceSample s = attention_variance_mc(VarianceKind::ssa, f, f, f, n, d, 100000, 9);
  const double s_closed = attention_variance(VarianceKind::ssa, f, f, f, n, d);
  const double s_exact = ssa_variance_exact(f, f, f, n, d);
  const double secs = timer.seconds();
  const double q_gap = std::abs(q.variance - q_closed) / q_closed;
  const double s_gap = std::abs(s.variance - s_closed) / s_closed;
  char buf[256];
  std::snprintf(buf, sizeof buf, "variance: QKTA empirical %.4f vs d f(1-f) = %.4f (%.2f%%, limit 5%%)",
                q.variance, q_closed, 100 * q_gap);
  report("5a", q_gap < 0.05 && secs < 120, buf);
  std::snprintf(buf, sizeof buf,
                "variance: SSA empirical %.3f vs closed form %.3f (%.1f%%, limit 5%%); with "
                "covariances %.3f (%.2f%%)",
                s.variance, s_closed, 100 * s_gap, s_exact,
                100 * std::abs(s.variance - s_exact) / s_exact);
  report("5b", s_gap < 0.05 && secs < 120, buf);
}

ModelConfig small_model(bool topdown, std::uint64_t seed) {
  ModelConfig c;
  c.grid_h = c.grid_w = 4;
  c.embed_c = 16;
  c.depth = 2;
  c.mlp_ratio = 2;
  c.topdown = topdown;
  c.seed = seed;
  return c;
}

Var random_input(const ModelConfig& c, std::size_t batch, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.5);
  std::vector<double> v(c.T * batch * c.tokens() * c.in_channels);
  for (double& x : v) x = g(rng);
  return make_tensor(Shape{c.T, batch, c.tokens(), c.in_channels}, std::move(v));
}

void criterion_baseline_equivalence() {
  TdFormer full(small_model(true, 3));
  TdFormer backbone(small_model(false, 3));
  ChainOptions off;
  off.feedback = false;
  Rng rng(11);
  std::size_t identical = 0;
  NoGradScope ng;
  for (int i = 0; i < 100; ++i) {
    const Var x = random_input(full.config(), 4, rng);
    RunContext a, b;
    const ChainResult ra = run_subnet_chain(full, x, full.config().schedule(), a, off);
    const ChainResult rb = run_subnet_chain(backbone, x, backbone.config().schedule(), b);
    bool same = ra.logits.size() == rb.logits.size();
    for (std::size_t k = 0; same && k < ra.logits.size(); ++k) {
      same = ra.logits[k]->values == rb.logits[k]->values;
    }
    identical += same;
  }
  report("6", identical == 100,
         fmt("baseline equivalence: feedback-off logits bit-identical to the backbone on %.0f/100 inputs",
             static_cast<double>(identical)));
}

Experiment temporal_xor() {
  Experiment e;
  ModelConfig& m = e.model;
  m.T = 4;
  m.n_sub = 2;
  m.alphas = {0.25, 0.75};
  m.grid_h = m.grid_w = 4;
  m.embed_c = 16;
  m.depth = 1;
  m.mlp_ratio = 2;
  DatasetSpec& d = e.data;
  d.kind = DatasetKind::temporal_xor;
  d.samples = 512;
  d.T = 4;
  d.grid_h = d.grid_w = 4;
  d.noise = 0.3;
  d.seed = 100;
  e.test_samples = 256;
  e.train.epochs = 40;
  e.train.batch_size = 32;
  e.train.lr = 1e-2;
  return e;
}

std::vector<ArmResult> on_arms;

void criterion_temporal() {
  Timer timer;
  const Experiment e = temporal_xor();
  double acc_on = 0, acc_off = 0, mi_on = 0, mi_off = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ArmResult on = run_arm(e, true, seed);
    const ArmResult off = run_arm(e, false, seed);
    std::printf("     seed %llu: acc on %.3f off %.3f, MI on %.5f off %.5f\n",
                static_cast<unsigned long long>(seed), on.test_accuracy, off.test_accuracy,
                on.mi_off_diagonal, off.mi_off_diagonal);
    acc_on += on.test_accuracy / 3;
    acc_off += off.test_accuracy / 3;
    mi_on += on.mi_off_diagonal / 3;
    mi_off += off.mi_off_diagonal / 3;
    on_arms.push_back(on);
  }
  const double secs = timer.seconds();
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "temporal-xor, 3 seeds: mean test accuracy on %.3f > off %.3f, %.0f s", acc_on,
                acc_off, secs);
  report("7a", acc_on > acc_off && secs < 900, buf);
  std::snprintf(buf, sizeof buf,
                "temporal-xor, 3 seeds: mean off-diagonal MI on %.5f > off %.5f bits", mi_on, mi_off);
  report("7b", mi_on > mi_off && secs < 900, buf);
}

void criterion_gradient_flow() {
  LifConfig cfg;
  const JacobianProbe j = temporal_jacobian(cfg, 4, 8, 21);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "gradient flow: all units in window %s, membrane-only |dH_T/dH_1| max baseline %.1e, "
                "with feedback %.3e (> 1e-8)",
                j.all_in_window ? "yes" : "no", j.max_abs_baseline, j.max_abs_feedback);
  report("8", j.all_in_window && j.max_abs_baseline == 0.0 && j.max_abs_feedback > 1e-8, buf);
}

void criterion_energy() {
  // Forced-rate pass: one layer, 1e6 MACs per step, 5% input spikes.
  const std::size_t T = 4, N = 10, K = 100, P = 1000;
  Rng rng(1);
  ParameterStore store;
  const SpikingLinear layer = SpikingLinear::create(store, "fc", K, P, LifConfig{}, rng);
  std::vector<double> bits(T * N * K, 0.0);
  std::vector<std::size_t> order(bits.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < bits.size() / 20; ++i) bits[order[i]] = 1.0;
  OpCounter counter;
  {
    CountingScope scope(counter);
    NoGradScope ng;
    layer.current(make_tensor(Shape{T, 1, N, K}, bits), NormMode::train);
  }
  const double predicted = sop(0.05, T, static_cast<double>(N * K * P));
  const double counted = counter.by_label().at("fc").accumulates;
  report("9a", std::abs(counted - predicted) / predicted < 0.01,
         fmt("energy: counted accumulates %.0f vs f_r T FLOPs = %.0f (limit 1%%)", counted, predicted));

  double worst = 0.0;
  for (const ArmResult& a : on_arms) worst = std::max(worst, a.energy.tdac_share());
  const EnergyLedger& e0 = on_arms.empty() ? EnergyLedger{} : on_arms.front().energy;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "energy: top-down share of total %.2f%% (worst of %zu trained models; seed 0 "
                "%.0f + %.0f pJ/sample), limit 5%%",
                100 * worst, on_arms.size(), e0.baseline_pj, e0.tdac_pj);
  report("9b", !on_arms.empty() && worst > 0.0 && worst < 0.05, buf);
}

std::string serialize(const TrainReport& r) {
  std::ostringstream o;
  for (const EpochStats& e : r.epochs) {
    o << e.epoch << "," << format_double(e.lr) << "," << format_double(e.loss) << ","
      << format_double(e.train_accuracy) << "," << format_double(e.test_accuracy);
    for (double s : e.stage_losses) o << "," << format_double(s);
    for (const auto& [k, v] : e.firing_rates) o << "," << k << "=" << format_double(v);
    o << "\n";
  }
  return o.str();
}

void criterion_determinism() {
  Experiment e = temporal_xor();
  e.train.epochs = 3;
  e.data.samples = 128;
  auto run = [&](TdFormer& model) {
    const Dataset tr = synth_dataset(e.data);
    DatasetSpec ts = e.data;
    ts.split = 1;
    const Dataset te = synth_dataset(ts);
    return serialize(train(model, tr, &te, e.train));
  };
  TdFormer m1(e.model), m2(e.model);
  const std::string r1 = run(m1);
  const std::string r2 = run(m2);
  report("10a", !r1.empty() && r1 == r2,
         fmt("determinism: two fixed-seed training reports byte-identical (%.0f bytes)",
             static_cast<double>(r1.size())));

  const std::string path = "acceptance_checkpoint.json";
  save_checkpoint(m1, path);
  auto loaded = load_checkpoint(path);
  std::remove(path.c_str());
  Rng rng(3);
  const Var x = random_input(m1.config(), 8, rng);
  NoGradScope ng;
  RunContext a, b;
  a.mode = b.mode = NormMode::eval;
  const ChainResult ra = run_subnet_chain(m1, x, m1.config().schedule(), a);
  const ChainResult rb = run_subnet_chain(*loaded, x, loaded->config().schedule(), b);
  bool same = ra.logits.size() == rb.logits.size();
  for (std::size_t k = 0; same && k < ra.logits.size(); ++k) {
    same = ra.logits[k]->values == rb.logits[k]->values;
  }
  report("10b", same, "determinism: checkpoint save -> load -> forward bit-identical");
}

}  // namespace

int main() {
  set_precision(Precision::f64);
  criterion_gradients();
  criterion_epsilon();
  criterion_bounds();
  criterion_moments();
  criterion_attention_variance();
  criterion_baseline_equivalence();
  criterion_temporal();
  criterion_gradient_flow();
  criterion_energy();
  criterion_determinism();
  std::printf("%d failed\n", failures);
  return failures ? 1 : 0;
}
