#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <memory>
#include <optional>
#include <numeric>

#include "tdformer/config.hpp"
#include "tdformer/experiments.hpp"

namespace py = pybind11;
using namespace tdformer;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Shape shape_of(const Array& a) {
  std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  return Shape(std::move(dims));
}

Var to_var(const Array& a) {
  return make_tensor(shape_of(a), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Var& v) {
  Array out(v->shape.dims());
  std::copy(v->values.begin(), v->values.end(), out.mutable_data());
  return out;
}

LifConfig lif_config(double tau, double v_th, double v_reset, const std::string& reset) {
  LifConfig cfg;
  cfg.tau = tau;
  cfg.v_th = v_th;
  cfg.v_reset = v_reset;
  if (reset == "hard") cfg.reset = ResetMode::hard;
  else if (reset == "soft") cfg.reset = ResetMode::soft;
  else throw ConfigError("reset must be 'hard' or 'soft', got '" + reset + "'");
  cfg.validate();
  return cfg;
}

py::dict bound_dict(const BoundReport& r) {
  py::dict d;
  d["a"] = r.a;
  d["b"] = r.b;
  d["f"] = r.f;
  d["law"] = to_string(r.law);
  d["applicable"] = r.applicable;
  d["p"] = r.p;
  d["bound"] = r.bound;
  d["tight"] = r.tight;
  d["empirical"] = r.empirical;
  d["sigma"] = r.sigma;
  d["margin"] = r.margin;
  d["samples"] = r.samples;
  d["violation"] = r.violation();
  return d;
}

py::dict energy_dict(const EnergyLedger& e) {
  py::list rows;
  for (const EnergyRow& r : e.rows) {
    py::dict d;
    d["label"] = r.label;
    d["tdac"] = r.tdac;
    d["dense"] = r.dense;
    d["macs"] = r.macs;
    d["input_rate"] = r.input_rate;
    d["sop"] = r.sop;
    d["accumulates"] = r.accumulates;
    d["elementwise"] = r.elementwise;
    d["energy_pj"] = r.energy_pj;
    rows.append(d);
  }
  py::dict out;
  out["rows"] = rows;
  out["baseline_pj"] = e.baseline_pj;
  out["tdac_pj"] = e.tdac_pj;
  out["total_pj"] = e.total_pj();
  out["tdac_share"] = e.tdac_share();
  return out;
}

Dataset dataset_from(const TdFormer& model, const Array& x, const py::array_t<int>& y) {
  if (x.ndim() != 4) throw DimensionError("x must be [S, T, N, C]");
  const auto& mc = model.config();
  Dataset d;
  d.T = static_cast<std::size_t>(x.shape(1));
  d.tokens = static_cast<std::size_t>(x.shape(2));
  d.channels = static_cast<std::size_t>(x.shape(3));
  d.classes = mc.classes;
  if (d.T != mc.T || d.tokens != mc.grid_h * mc.grid_w || d.channels != mc.in_channels) {
    throw DimensionError("x is [S, " + std::to_string(d.T) + ", " + std::to_string(d.tokens) +
                         ", " + std::to_string(d.channels) + "] but the model expects [S, " +
                         std::to_string(mc.T) + ", " + std::to_string(mc.grid_h * mc.grid_w) +
                         ", " + std::to_string(mc.in_channels) + "]");
  }
  d.x.assign(x.data(), x.data() + x.size());
  const auto labels = y.unchecked<1>();
  if (static_cast<py::ssize_t>(labels.shape(0)) != x.shape(0)) {
    throw DimensionError("y needs one label per sample");
  }
  for (py::ssize_t i = 0; i < labels.shape(0); ++i) d.y.push_back(labels(i));
  return d;
}

py::tuple dataset_arrays(const Dataset& d) {
  Array x({d.size(), d.T, d.tokens, d.channels});
  std::copy(d.x.begin(), d.x.end(), x.mutable_data());
  py::array_t<int> y(static_cast<py::ssize_t>(d.size()));
  std::copy(d.y.begin(), d.y.end(), y.mutable_data());
  return py::make_tuple(x, y);
}

DatasetSpec split_spec(const Experiment& e, std::uint64_t seed, std::uint64_t split) {
  DatasetSpec ds = e.data;
  ds.seed = e.data.seed + seed;
  ds.split = split;
  if (split == 1) ds.samples = e.test_samples;
  return ds;
}

py::array_t<int> no_labels(const Array& x) {
  py::array_t<int> y(x.ndim() > 0 ? x.shape(0) : 0);
  std::fill(y.mutable_data(), y.mutable_data() + y.size(), 0);
  return y;
}

struct Model {
  std::unique_ptr<TdFormer> net;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the tdformer library";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("set_precision", [](int bits) {
    if (bits != 32 && bits != 64) throw ConfigError("precision must be 32 or 64");
    set_precision(bits == 32 ? Precision::f32 : Precision::f64);
  });

  m.def(
      "run_lif",
      [](const Array& inputs, double tau, double v_th, double v_reset, const std::string& reset) {
        const LifSequence s = run_sequence(to_var(inputs), lif_config(tau, v_th, v_reset, reset));
        return to_array(s.spikes.node());
      },
      py::arg("inputs"), py::arg("tau") = 2.0, py::arg("v_th") = 1.0, py::arg("v_reset") = 0.0,
      py::arg("reset") = "hard", "Spikes of a LIF population driven by inputs[t, ...].");

  m.def("clamp_variance_breakpoint", &clamp_variance_breakpoint, py::arg("a"), py::arg("b"));
  m.def("clamp_variance_bound", &clamp_variance_bound, py::arg("a"), py::arg("b"), py::arg("f"));
  m.def("clamp_variance_tight", &clamp_variance_tight, py::arg("a"), py::arg("b"), py::arg("f"));
  m.def(
      "verify_bound_mc",
      [](double a, double b, double f, const std::string& law, std::size_t samples,
         std::uint64_t seed) {
        return bound_dict(verify_bound_mc(a, b, f, parse_bound_law(law), samples, seed));
      },
      py::arg("a"), py::arg("b"), py::arg("f"), py::arg("law") = "uniform",
      py::arg("samples") = 100000, py::arg("seed") = 0);
  m.def(
      "bound_grid",
      [](std::size_t samples, std::uint64_t seed) {
        py::list out;
        for (const BoundReport& r : bound_grid(samples, seed)) out.append(bound_dict(r));
        return out;
      },
      py::arg("samples") = 100000, py::arg("seed") = 0);

  m.def(
      "attention_variance",
      [](const std::string& kind, double fq, double fk, double fv, std::size_t n, std::size_t d) {
        return attention_variance(parse_variance_kind(kind), fq, fk, fv, n, d);
      },
      py::arg("kind"), py::arg("fq"), py::arg("fk"), py::arg("fv"), py::arg("n"), py::arg("d"));
  m.def("ssa_variance_exact", &ssa_variance_exact, py::arg("fq"), py::arg("fk"), py::arg("fv"),
        py::arg("n"), py::arg("d"));
  m.def(
      "attention_variance_mc",
      [](const std::string& kind, double fq, double fk, double fv, std::size_t n, std::size_t d,
         std::size_t samples, std::uint64_t seed) {
        const VarianceSample s =
            attention_variance_mc(parse_variance_kind(kind), fq, fk, fv, n, d, samples, seed);
        py::dict out;
        out["mean"] = s.mean;
        out["variance"] = s.variance;
        out["sigma"] = s.sigma;
        out["samples"] = s.samples;
        return out;
      },
      py::arg("kind"), py::arg("fq"), py::arg("fk"), py::arg("fv"), py::arg("n"), py::arg("d"),
      py::arg("samples") = 100000, py::arg("seed") = 0);

  m.def("pm_e_ratio", &pm_e_ratio, py::arg("f"));
  m.def("pm_var_ratio", &pm_var_ratio, py::arg("f"));
  m.def(
      "pm_moments",
      [](double f, double a, double b, std::size_t channels, std::size_t samples,
         std::uint64_t seed) {
        const PmMoments r = pm_moments(f, a, b, channels, samples, seed);
        py::dict out;
        out["f"] = r.f;
        out["a"] = r.a;
        out["b"] = r.b;
        out["channels"] = r.channels;
        out["samples"] = r.samples;
        out["e_ratio"] = r.e_ratio;
        out["var_ratio"] = r.var_ratio;
        out["mc_e_ratio"] = r.mc_e_ratio;
        out["mc_var_ratio"] = r.mc_var_ratio;
        out["weight_sum"] = r.weight_sum;
        out["corr_mean_abs"] = r.corr_mean_abs;
        out["corr_max_abs"] = r.corr_max_abs;
        out["corr_pooled"] = r.corr_pooled;
        out["in_regime"] = r.in_regime;
        out["regime_note"] = r.regime_note;
        return out;
      },
      py::arg("f"), py::arg("a") = 1.5, py::arg("b") = 0.0, py::arg("channels") = 1024,
      py::arg("samples") = 100000, py::arg("seed") = 0);

  m.def(
      "epsilon_baseline",
      [](double h, double tau, double v_th) {
        return epsilon_baseline(h, lif_config(tau, v_th, 0.0, "soft"));
      },
      py::arg("h"), py::arg("tau") = 2.0, py::arg("v_th") = 1.0);
  m.def(
      "epsilon_feedback",
      [](double h, double dphi_ds, double tau, double v_th) {
        return epsilon_feedback(h, lif_config(tau, v_th, 0.0, "soft"), dphi_ds);
      },
      py::arg("h"), py::arg("dphi_ds") = 1.0, py::arg("tau") = 2.0, py::arg("v_th") = 1.0);
  m.def(
      "measure_epsilon",
      [](double h, double dphi_ds, double tau, double v_th) {
        return measure_epsilon(h, lif_config(tau, v_th, 0.0, "soft"), dphi_ds);
      },
      py::arg("h"), py::arg("dphi_ds") = 1.0, py::arg("tau") = 2.0, py::arg("v_th") = 1.0);
  m.def(
      "temporal_jacobian",
      [](std::size_t steps, std::size_t units, std::uint64_t seed, double tau, double v_th) {
        const JacobianProbe j =
            temporal_jacobian(lif_config(tau, v_th, 0.0, "soft"), steps, units, seed);
        py::dict out;
        out["steps"] = j.steps;
        out["units"] = j.units;
        out["all_in_window"] = j.all_in_window;
        out["max_abs_baseline"] = j.max_abs_baseline;
        out["max_abs_feedback"] = j.max_abs_feedback;
        return out;
      },
      py::arg("steps") = 8, py::arg("units") = 8, py::arg("seed") = 0, py::arg("tau") = 2.0,
      py::arg("v_th") = 1.0);

  m.def(
      "mi_matrix",
      [](const Array& features, std::size_t units, std::uint64_t seed) {
        if (features.ndim() != 4) throw DimensionError("features must be [T, B, N, C]");
        const MiMatrix mi = mi_matrix(SpikeTensor(to_var(features)), units, seed);
        Array values({mi.T, mi.T});
        std::copy(mi.values.begin(), mi.values.end(), values.mutable_data());
        py::dict meta;
        meta["samples"] = mi.samples;
        meta["units"] = mi.units;
        meta["degenerate_units"] = mi.degenerate_units;
        meta["estimator"] = mi.estimator;
        meta["mean_off_diagonal"] = mi.mean_off_diagonal();
        return py::make_tuple(values, meta);
      },
      py::arg("features"), py::arg("units") = 0, py::arg("seed") = 0,
      "Returns (T x T matrix in bits, metadata).");
  m.def(
      "mi_svg",
      [](const Array& values, const std::string& title) {
        if (values.ndim() != 2 || values.shape(0) != values.shape(1)) {
          throw DimensionError("MI matrix must be square");
        }
        MiMatrix mi;
        mi.T = static_cast<std::size_t>(values.shape(0));
        mi.values.assign(values.data(), values.data() + values.size());
        return mi_svg(mi, title);
      },
      py::arg("values"), py::arg("title") = "");

  m.def("sop", &sop, py::arg("rate"), py::arg("steps"), py::arg("flops"));

  m.def(
      "load_experiment",
      [](const std::string& text, bool require_alphas) {
        const ExperimentConfig ec = load_experiment(KeyValues::parse(text), require_alphas);
        py::dict out;
        out["seed"] = ec.seed;
        out["config_hash"] = ec.config_hash;
        out["T"] = ec.experiment.model.T;
        out["segments"] = ec.experiment.model.schedule().alphas.size();
        out["alphas"] = ec.experiment.model.schedule().alphas;
        out["topdown"] = ec.experiment.model.topdown;
        out["dataset"] = to_string(ec.experiment.data.kind);
        out["train_samples"] = ec.experiment.data.samples;
        out["test_samples"] = ec.experiment.test_samples;
        out["epochs"] = ec.experiment.train.epochs;
        return out;
      },
      py::arg("text"), py::arg("require_alphas") = true,
      "Validates a key-value config and returns a summary.");

  m.def(
      "synth_dataset",
      [](const std::string& text, std::uint64_t seed, std::uint64_t split) {
        const ExperimentConfig ec = load_experiment(KeyValues::parse(text), false);
        return dataset_arrays(synth_dataset(split_spec(ec.experiment, seed, split)));
      },
      py::arg("text"), py::arg("seed") = 0, py::arg("split") = 0,
      "Returns (x [S, T, N, C], y [S]). Split 0 trains, split 1 tests.");

  m.def(
      "run_arm",
      [](const std::string& text, bool feedback, std::uint64_t seed) {
        const ExperimentConfig ec = load_experiment(KeyValues::parse(text), true);
        ArmResult r;
        {
          py::gil_scoped_release release;
          r = run_arm(ec.experiment, feedback, seed);
        }
        py::dict out;
        out["seed"] = r.seed;
        out["test_accuracy"] = r.test_accuracy;
        out["train_accuracy"] = r.train_accuracy;
        out["mi_off_diagonal"] = r.mi_off_diagonal;
        out["energy"] = energy_dict(r.energy);
        return out;
      },
      py::arg("text"), py::arg("feedback") = true, py::arg("seed") = 0);

  py::class_<Model>(m, "Model")
      .def_static(
          "from_config",
          [](const std::string& text, std::optional<std::uint64_t> seed) {
            const ExperimentConfig ec = load_experiment(KeyValues::parse(text), false);
            ModelConfig mc = ec.experiment.model;
            mc.seed = seed.value_or(ec.seed);
            return Model{std::make_unique<TdFormer>(mc)};
          },
          py::arg("text"), py::arg("seed") = py::none())
      .def_static("load", [](const std::string& path) { return Model{load_checkpoint(path)}; })
      .def("save", [](const Model& m, const std::string& path) { save_checkpoint(*m.net, path); })
      .def_property_readonly("topdown", [](const Model& m) { return m.net->has_topdown(); })
      .def_property_readonly("parameter_count",
                             [](const Model& m) { return m.net->store().parameter_count(); })
      .def(
          "train",
          [](Model& m, const std::string& text, std::optional<std::uint64_t> seed) {
            const ExperimentConfig ec = load_experiment(KeyValues::parse(text), true);
            const std::uint64_t s = seed.value_or(ec.seed);
            TrainConfig tc = ec.experiment.train;
            tc.seed = s;
            const Dataset train_set = synth_dataset(split_spec(ec.experiment, s, 0));
            const Dataset test_set = synth_dataset(split_spec(ec.experiment, s, 1));
            TrainReport rep;
            {
              py::gil_scoped_release release;
              rep = train(*m.net, train_set, &test_set, tc);
            }
            py::list history;
            for (const EpochStats& e : rep.epochs) {
              py::dict d;
              d["epoch"] = e.epoch;
              d["lr"] = e.lr;
              d["loss"] = e.loss;
              d["stage_losses"] = e.stage_losses;
              d["train_accuracy"] = e.train_accuracy;
              d["test_accuracy"] = e.test_accuracy;
              d["firing_rates"] = e.firing_rates;
              history.append(d);
            }
            return history;
          },
          py::arg("text"), py::arg("seed") = py::none(),
          "Trains on the config's synthetic task; returns per-epoch stats.")
      .def(
          "evaluate",
          [](const Model& m, const Array& x, const py::array_t<int>& y, std::size_t batch_size) {
            return evaluate(*m.net, dataset_from(*m.net, x, y), batch_size).accuracy;
          },
          py::arg("x"), py::arg("y"), py::arg("batch_size") = 32)
      .def(
          "features",
          [](const Model& m, const Array& x, std::size_t batch_size) {
            const Dataset d = dataset_from(*m.net, x, no_labels(x));
            return to_array(collect_features(*m.net, d, 0, batch_size).node());
          },
          py::arg("x"), py::arg("batch_size") = 32,
          "Final-block spikes of every segment, [T, S, N, C].")
      .def(
          "energy",
          [](const Model& m, const Array& x, double e_mac_pj, double e_ac_pj) {
            const Dataset d = dataset_from(*m.net, x, no_labels(x));
            return energy_dict(measure_energy(*m.net, d, 0, EnergyConstants{e_mac_pj, e_ac_pj}));
          },
          py::arg("x"), py::arg("e_mac_pj") = 4.6, py::arg("e_ac_pj") = 0.9);
}
