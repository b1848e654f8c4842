// tdformer: train, analyze and compare from a key-value config.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "tdformer/experiments.hpp"

using namespace tdformer;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int precision = 64;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key-value config file")->required();
  cmd->add_option("--seed", c.seed, "overrides the config's top-level seed");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--precision", c.precision, "32 or 64 bit arithmetic")
      ->check(CLI::IsMember({32, 64}))
      ->capture_default_str();
}

struct Run {
  ExperimentConfig ec;
  std::uint64_t seed = 0;
  Common common;
};

Run prepare(const Common& c, bool require_alphas) {
  Run r;
  r.common = c;
  r.ec = load_experiment(KeyValues::load(c.config), require_alphas);
  r.seed = c.seed.value_or(r.ec.seed);
  set_precision(c.precision == 32 ? Precision::f32 : Precision::f64);
  fs::create_directories(c.out);
  return r;
}

std::string num(double v) { return format_double(v); }

// CSV with a commented provenance header.
class Csv {
 public:
  Csv(const Run& run, const std::string& name, const std::string& kind,
      const std::vector<std::pair<std::string, std::string>>& meta = {})
      : path_((fs::path(run.common.out) / name).string()), f_(path_) {
    if (!f_) throw ConfigError("cannot write " + path_);
    f_ << "# tdformer " << kind << "\n";
    f_ << "# config_hash=" << run.ec.config_hash << "\n";
    f_ << "# seed=" << run.seed << "\n";
    f_ << "# precision=" << run.common.precision << "\n";
    for (const auto& [k, v] : meta) f_ << "# " << k << "=" << v << "\n";
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) f_ << (i ? "," : "") << cells[i];
    f_ << "\n";
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream f_;
};

DatasetSpec split_spec(const Experiment& e, std::uint64_t seed, std::uint64_t split) {
  DatasetSpec ds = e.data;
  ds.seed = e.data.seed + seed;
  ds.split = split;
  if (split == 1) ds.samples = e.test_samples;
  return ds;
}

int cmd_train(const Common& c) {
  Run run = prepare(c, true);
  const Experiment& e = run.ec.experiment;
  ModelConfig mc = e.model;
  mc.seed = run.seed;
  TrainConfig tc = e.train;
  tc.seed = run.seed;
  const Dataset train_set = synth_dataset(split_spec(e, run.seed, 0));
  const Dataset test_set = synth_dataset(split_spec(e, run.seed, 1));
  TdFormer model(mc);
  const std::vector<double> alphas = mc.schedule().alphas;

  Csv report(run, "train_report.csv", "train");
  report.row({"epoch", "lr", "loss", "train_accuracy", "test_accuracy"});
  Csv stages(run, "stage_losses.csv", "train");
  stages.row({"epoch", "stage", "alpha", "loss"});
  Csv rates(run, "firing_rates.csv", "train");
  rates.row({"epoch", "module", "rate"});
  const TrainReport rep = train(model, train_set, &test_set, tc, {}, [&](const EpochStats& s) {
    report.row({std::to_string(s.epoch), num(s.lr), num(s.loss), num(s.train_accuracy),
                num(s.test_accuracy)});
    for (std::size_t k = 0; k < s.stage_losses.size(); ++k) {
      stages.row({std::to_string(s.epoch), std::to_string(k), num(alphas[k]), num(s.stage_losses[k])});
    }
    for (const auto& [module, r] : s.firing_rates) rates.row({std::to_string(s.epoch), module, num(r)});
    std::printf("epoch %zu loss %.4f train %.3f test %.3f\n", s.epoch, s.loss, s.train_accuracy,
                s.test_accuracy);
  });
  const std::string ckpt = (fs::path(c.out) / "checkpoint.json").string();
  save_checkpoint(model, ckpt);
  std::printf("wrote %s, %s (%.1f s)\n", report.path().c_str(), ckpt.c_str(), rep.wall_seconds);
  return 0;
}

int analyze_bounds(const Run& run) {
  const std::vector<BoundReport> grid = bound_grid(run.ec.analysis.bound_samples, run.seed);
  Csv csv(run, "bounds.csv", "analyze bounds",
          {{"samples", std::to_string(run.ec.analysis.bound_samples)}, {"tolerance", "3 sigma"}});
  csv.row({"a", "b", "f", "law", "applicable", "p", "bound", "tight", "empirical", "sigma",
           "margin", "violation"});
  std::size_t violations = 0;
  for (const BoundReport& r : grid) {
    violations += r.violation();
    csv.row({num(r.a), num(r.b), num(r.f), to_string(r.law), r.applicable ? "1" : "0",
             r.applicable ? num(r.p) : "", num(r.bound), num(r.tight),
             r.applicable ? num(r.empirical) : "", r.applicable ? num(r.sigma) : "",
             r.applicable ? num(r.margin) : "", r.violation() ? "1" : "0"});
  }
  std::printf("%zu grid rows, %zu violations -> %s\n", grid.size(), violations, csv.path().c_str());
  return 0;
}

int analyze_moments(const Run& run) {
  const AnalysisSettings& a = run.ec.analysis;
  Csv csv(run, "moments.csv", "analyze moments",
          {{"channels", std::to_string(a.moment_channels)},
           {"samples", std::to_string(a.moment_samples)},
           {"weights", "N(0,1), zero-sum, unit L2 norm"}});
  csv.row({"f", "a", "b", "e_ratio", "mc_e_ratio", "var_ratio", "mc_var_ratio", "corr_mean_abs",
           "corr_max_abs", "corr_pooled", "in_regime", "note"});
  std::uint64_t k = 0;
  for (double f : a.moment_rates) {
    const PmMoments m = pm_moments(f, a.moment_a, a.moment_b, a.moment_channels, a.moment_samples,
                                   run.seed + 31 * k++);
    csv.row({num(f), num(m.a), num(m.b), num(m.e_ratio), num(m.mc_e_ratio), num(m.var_ratio),
             num(m.mc_var_ratio), num(m.corr_mean_abs), num(m.corr_max_abs), num(m.corr_pooled),
             m.in_regime ? "1" : "0", m.regime_note});
    if (!m.in_regime) std::fprintf(stderr, "warning: f=%g outside regime: %s\n", f, m.regime_note.c_str());
  }
  Csv var(run, "attention_variance.csv", "analyze moments",
          {{"samples", std::to_string(a.variance_samples)}});
  var.row({"kind", "rate", "N", "d", "closed_form", "exact", "empirical", "sigma"});
  const double fr = a.variance_rate;
  for (VarianceKind kind : {VarianceKind::qkta, VarianceKind::ssa}) {
    const VarianceSample s = attention_variance_mc(kind, fr, fr, fr, a.variance_n, a.variance_d,
                                                   a.variance_samples, run.seed + 101);
    const double closed = attention_variance(kind, fr, fr, fr, a.variance_n, a.variance_d);
    const double exact = kind == VarianceKind::ssa
                             ? ssa_variance_exact(fr, fr, fr, a.variance_n, a.variance_d)
                             : closed;
    var.row({to_string(kind), num(fr), std::to_string(a.variance_n), std::to_string(a.variance_d),
             num(closed), num(exact), num(s.variance), num(s.sigma)});
  }
  std::printf("wrote %s, %s\n", csv.path().c_str(), var.path().c_str());
  return 0;
}

int analyze_epsilon(const Run& run) {
  const LifConfig& lif = run.ec.experiment.model.lif;
  const double dphi = run.ec.analysis.dphi_ds;
  Csv csv(run, "epsilon.csv", "analyze epsilon",
          {{"tau", num(lif.tau)}, {"v_th", num(lif.v_th)}, {"dphi_ds", num(dphi)},
           {"recursion", "soft reset"}});
  csv.row({"h", "in_window", "closed_baseline", "measured_baseline", "closed_feedback",
           "measured_feedback", "max_abs_diff"});
  double worst = 0.0;
  for (const EpsilonProbe& p : epsilon_probes(run.ec.analysis.epsilon_probes, lif, dphi, run.seed)) {
    const double d = std::max(std::abs(p.closed_baseline - p.measured_baseline),
                              std::abs(p.closed_feedback - p.measured_feedback));
    worst = std::max(worst, d);
    csv.row({num(p.h), p.in_window ? "1" : "0", num(p.closed_baseline), num(p.measured_baseline),
             num(p.closed_feedback), num(p.measured_feedback), num(d)});
  }
  const JacobianProbe j = temporal_jacobian(lif, run.ec.experiment.model.T, 8, run.seed);
  Csv jac(run, "jacobian.csv", "analyze epsilon");
  jac.row({"steps", "units", "all_in_window", "max_abs_baseline", "max_abs_feedback"});
  jac.row({std::to_string(j.steps), std::to_string(j.units), j.all_in_window ? "1" : "0",
           num(j.max_abs_baseline), num(j.max_abs_feedback)});
  std::printf("max |closed - measured| = %.3g -> %s\n", worst, csv.path().c_str());
  return 0;
}

std::unique_ptr<TdFormer> need_checkpoint(const std::string& path, const char* kind) {
  if (path.empty()) throw ConfigError(std::string("analyze ") + kind + " requires --checkpoint");
  return load_checkpoint(path);
}

Dataset checkpoint_data(const Run& run, const TdFormer& model) {
  const Dataset test = synth_dataset(split_spec(run.ec.experiment, run.seed, 1));
  const ModelConfig& mc = model.config();
  if (test.T != mc.T || test.tokens != mc.tokens() || test.channels != mc.in_channels) {
    throw ConfigError("config data does not match the checkpoint's model shape");
  }
  return test;
}

int analyze_mi(const Run& run, const std::string& checkpoint) {
  auto model = need_checkpoint(checkpoint, "mi");
  const Dataset test = checkpoint_data(run, *model);
  const SpikeTensor features =
      collect_features(*model, test, run.ec.analysis.mi_samples, run.ec.experiment.train.batch_size);
  const MiMatrix mi = mi_matrix(features, run.ec.experiment.mi_units, run.seed);
  Csv csv(run, "mi.csv", "analyze mi",
          {{"estimator", mi.estimator}, {"bins", "2"}, {"samples", std::to_string(mi.samples)},
           {"units", std::to_string(mi.units)},
           {"degenerate_units", std::to_string(mi.degenerate_units)},
           {"features", "final block output H, all segments"}});
  csv.row({"t1", "t2", "mi_bits"});
  for (std::size_t i = 0; i < mi.T; ++i) {
    for (std::size_t j = 0; j < mi.T; ++j) csv.row({std::to_string(i), std::to_string(j), num(mi.at(i, j))});
  }
  const std::string svg = (fs::path(run.common.out) / "mi.svg").string();
  std::ofstream(svg) << mi_svg(mi, "MI across time steps (bits), config " + run.ec.config_hash);
  if (mi.degenerate_units) {
    std::fprintf(stderr, "warning: %zu of %zu units are constant at some step\n",
                 mi.degenerate_units, mi.units);
  }
  std::printf("mean off-diagonal MI %.5f bits -> %s, %s\n", mi.mean_off_diagonal(),
              csv.path().c_str(), svg.c_str());
  return 0;
}

void write_energy_rows(Csv& csv, const EnergyLedger& e, const std::string& prefix) {
  for (const EnergyRow& r : e.rows) {
    csv.row({prefix + r.label, r.tdac ? "tdac" : "baseline", r.dense ? "mac" : "ac", num(r.macs),
             num(2.0 * r.macs), num(r.input_rate), num(r.sop), num(r.accumulates),
             num(r.elementwise), num(r.energy_pj)});
  }
}

int analyze_energy(const Run& run, const std::string& checkpoint) {
  auto model = need_checkpoint(checkpoint, "energy");
  const Dataset test = checkpoint_data(run, *model);
  const EnergyLedger e = measure_energy(*model, test, run.ec.experiment.train.batch_size,
                                        run.ec.analysis.energy);
  Csv csv(run, "energy.csv", "analyze energy",
          {{"e_mac_pj", num(e.constants.e_mac_pj)}, {"e_ac_pj", num(e.constants.e_ac_pj)},
           {"flops", "2 per MAC"}, {"per", "sample"}});
  csv.row({"label", "group", "pricing", "macs", "flops", "input_rate", "sop", "accumulates",
           "elementwise", "energy_pj"});
  write_energy_rows(csv, e, "");
  Csv total(run, "energy_summary.csv", "analyze energy");
  total.row({"baseline_pj", "tdac_pj", "total_pj", "tdac_share"});
  total.row({num(e.baseline_pj), num(e.tdac_pj), num(e.total_pj()), num(e.tdac_share())});
  std::printf("total %.4g pJ/sample, top-down share %.4f -> %s\n", e.total_pj(), e.tdac_share(),
              csv.path().c_str());
  return 0;
}

struct MeanSign {
  double mean_a = 0, mean_b = 0, mean_delta = 0;
  int positive = 0, negative = 0, zero = 0;
};

MeanSign summarize(const std::vector<double>& a, const std::vector<double>& b) {
  MeanSign s;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s.mean_a += a[i] / n;
    s.mean_b += b[i] / n;
    s.mean_delta += d / n;
    (d > 0 ? s.positive : d < 0 ? s.negative : s.zero) += 1;
  }
  return s;
}

int cmd_compare(const Common& c, const std::vector<std::uint64_t>& seeds,
                const std::vector<std::string>& arms) {
  Run run = prepare(c, true);
  if (seeds.size() < 2) throw ConfigError("compare needs at least 2 seeds");
  if (arms.size() != 2) throw ConfigError("compare takes exactly two arms (on, off)");
  bool feedback[2];
  for (int i = 0; i < 2; ++i) {
    if (arms[i] != "on" && arms[i] != "off") throw ConfigError("arm must be 'on' or 'off', got " + arms[i]);
    feedback[i] = arms[i] == "on";
  }
  const std::string a = arms[0], b = arms[1];
  Csv paired(run, "compare.csv", "compare", {{"arm_a", a}, {"arm_b", b}});
  paired.row({"seed", "acc_a", "acc_b", "delta_acc", "mi_a", "mi_b", "delta_mi"});
  Csv energy(run, "compare_energy.csv", "compare");
  energy.row({"seed", "arm", "baseline_pj", "tdac_pj", "total_pj", "tdac_share"});
  std::vector<double> acc[2], mi[2];
  for (std::uint64_t seed : seeds) {
    ArmResult r[2];
    for (int i = 0; i < 2; ++i) {
      r[i] = run_arm(run.ec.experiment, feedback[i], seed);
      acc[i].push_back(r[i].test_accuracy);
      mi[i].push_back(r[i].mi_off_diagonal);
      energy.row({std::to_string(seed), arms[i], num(r[i].energy.baseline_pj),
                  num(r[i].energy.tdac_pj), num(r[i].energy.total_pj()),
                  num(r[i].energy.tdac_share())});
    }
    paired.row({std::to_string(seed), num(r[0].test_accuracy), num(r[1].test_accuracy),
                num(r[0].test_accuracy - r[1].test_accuracy), num(r[0].mi_off_diagonal),
                num(r[1].mi_off_diagonal), num(r[0].mi_off_diagonal - r[1].mi_off_diagonal)});
    std::printf("seed %llu: acc %s %.3f / %s %.3f, mi %.5f / %.5f\n",
                static_cast<unsigned long long>(seed), a.c_str(), r[0].test_accuracy, b.c_str(),
                r[1].test_accuracy, r[0].mi_off_diagonal, r[1].mi_off_diagonal);
  }
  Csv summary(run, "compare_summary.csv", "compare", {{"arm_a", a}, {"arm_b", b}});
  summary.row({"metric", "mean_a", "mean_b", "mean_delta", "positive", "negative", "zero",
               "direction"});
  const std::pair<const char*, MeanSign> rows[] = {{"test_accuracy", summarize(acc[0], acc[1])},
                                                   {"mi_off_diagonal", summarize(mi[0], mi[1])}};
  for (const auto& [metric, s] : rows) {
    const std::string dir = s.mean_delta > 0 ? a + ">" + b : s.mean_delta < 0 ? a + "<" + b : "equal";
    summary.row({metric, num(s.mean_a), num(s.mean_b), num(s.mean_delta), std::to_string(s.positive),
                 std::to_string(s.negative), std::to_string(s.zero), dir});
    std::printf("%s: mean delta %+.4f (%d+ %d- %d=), %s\n", metric, s.mean_delta, s.positive,
                s.negative, s.zero, dir.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking transformer training and analysis"};
  app.require_subcommand(1);

  Common train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write reports");
  add_common(train_cmd, train_opts);

  Common analyze_opts;
  std::string kind;
  std::string checkpoint;
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "run one analysis");
  analyze_cmd->add_option("kind", kind, "bounds | moments | epsilon | mi | energy")
      ->required()
      ->check(CLI::IsMember({"bounds", "moments", "epsilon", "mi", "energy"}));
  analyze_cmd->add_option("--checkpoint", checkpoint, "checkpoint for mi and energy");
  add_common(analyze_cmd, analyze_opts);

  Common compare_opts;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::string> arms{"on", "off"};
  CLI::App* compare_cmd = app.add_subcommand("compare", "paired feedback on/off experiment");
  add_common(compare_cmd, compare_opts);
  compare_cmd->add_option("--seeds", seeds, "comma-separated seeds")->delimiter(',');
  compare_cmd->add_option("--arms", arms, "two arms from {on, off}")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_opts);
    if (*compare_cmd) return cmd_compare(compare_opts, seeds, arms);
    Run run = prepare(analyze_opts, false);
    if (kind == "bounds") return analyze_bounds(run);
    if (kind == "moments") return analyze_moments(run);
    if (kind == "epsilon") return analyze_epsilon(run);
    if (kind == "mi") return analyze_mi(run, checkpoint);
    return analyze_energy(run, checkpoint);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
