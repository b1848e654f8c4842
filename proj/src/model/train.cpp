#include <chrono>
#include <cmath>
#include <numeric>

#include "tdformer/model.hpp"

namespace tdformer {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (optimizer != "adamw" && optimizer != "sgd") {
    throw ConfigError("train.optimizer must be adamw or sgd, got '" + optimizer + "'");
  }
  if (!(lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv, const std::string& p) {
  TrainConfig c;
  c.epochs = static_cast<std::size_t>(kv.get_int(p + "epochs", static_cast<long>(c.epochs)));
  c.batch_size =
      static_cast<std::size_t>(kv.get_int(p + "batch_size", static_cast<long>(c.batch_size)));
  c.optimizer = kv.get_string(p + "optimizer", c.optimizer);
  c.lr = kv.get_double(p + "lr", c.lr);
  c.weight_decay = kv.get_double(p + "weight_decay", c.weight_decay);
  c.momentum = kv.get_double(p + "momentum", c.momentum);
  c.cosine = kv.get_bool(p + "cosine", c.cosine);
  c.seed = static_cast<std::uint64_t>(kv.get_int(p + "seed", static_cast<long>(c.seed)));
  return c;
}

void TrainConfig::write_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "epochs", std::to_string(epochs));
  kv.set(p + "batch_size", std::to_string(batch_size));
  kv.set(p + "optimizer", optimizer);
  kv.set(p + "lr", format_double(lr));
  kv.set(p + "weight_decay", format_double(weight_decay));
  kv.set(p + "momentum", format_double(momentum));
  kv.set(p + "cosine", cosine ? "true" : "false");
  kv.set(p + "seed", std::to_string(seed));
}

namespace {

class Optimizer {
 public:
  Optimizer(const ParameterStore& store, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& [name, p] : store.parameters()) {
      params_.push_back(p);
      // Decay applies to weight matrices only.
      decay_.push_back(p->shape.rank() == 2);
      m_.emplace_back(p->values.size(), 0.0);
      v_.emplace_back(p->values.size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Node& p = *params_[k];
      if (p.grad.empty()) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      const double wd = decay_[k] ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double g = p.grad[i];
        if (cfg_.optimizer == "adamw") {
          m[i] = b1 * m[i] + (1 - b1) * g;
          v[i] = b2 * v[i] + (1 - b2) * g * g;
          p.values[i] -= lr * wd * p.values[i];
          p.values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        } else {
          m[i] = cfg_.momentum * m[i] + g + wd * p.values[i];
          p.values[i] -= lr * m[i];
        }
      }
      if (precision() == Precision::f32) {
        for (double& x : p.values) x = static_cast<double>(static_cast<float>(x));
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Var> params_;
  std::vector<bool> decay_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

void merge_rates(std::map<std::string, std::pair<double, double>>& into,
                 const std::map<std::string, std::pair<double, double>>& from) {
  for (const auto& [k, v] : from) {
    into[k].first += v.first;
    into[k].second += v.second;
  }
}

std::map<std::string, double> to_rates(const std::map<std::string, std::pair<double, double>>& m) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : m) out[k] = v.second > 0 ? v.first / v.second : 0.0;
  return out;
}

}  // namespace

TrainReport train(TdFormer& model, const Dataset& train_set, const Dataset* test_set,
                  const TrainConfig& cfg, const ChainOptions& options,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  if (train_set.T != mc.T || train_set.tokens != mc.tokens() ||
      train_set.channels != mc.in_channels || train_set.classes != mc.classes) {
    throw ConfigError("dataset shape does not match the model configuration");
  }
  const auto start = std::chrono::steady_clock::now();
  const SubnetSchedule schedule = mc.schedule();
  Optimizer opt(model.store(), cfg);
  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch * cfg.epochs);
  std::size_t step = 0;
  TrainReport report;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(cfg.seed * 1000003ull + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::vector<double> stage_sum(schedule.size(), 0.0);
    std::size_t correct = 0;
    std::map<std::string, std::pair<double, double>> spikes;
    double lr = cfg.lr;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Var x = train_set.batch(idx);
      std::vector<int> y = train_set.labels(idx);
      RunContext ctx;
      ctx.mode = NormMode::train;
      ctx.persist_membrane = mc.persist_membrane;
      ChainResult r = run_subnet_chain(model, x, schedule, ctx, options);
      std::vector<double> stage;
      Var loss = tdformer_loss(r.logits, y, schedule.alphas, &stage);
      if (!std::isfinite(loss->item())) {
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step));
      }
      model.store().zero_grad();
      backward(loss);
      lr = cfg.cosine ? cfg.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps))
                      : cfg.lr;
      opt.step(lr);
      ++step;
      for (std::size_t k = 0; k < stage.size(); ++k) {
        stage_sum[k] += stage[k] * static_cast<double>(idx.size());
      }
      std::vector<int> pred = predict(r);
      for (std::size_t k = 0; k < y.size(); ++k) correct += pred[k] == y[k];
      merge_rates(spikes, ctx.spikes);
    }
    EpochStats e;
    e.epoch = epoch;
    e.lr = lr;
    for (double s : stage_sum) e.stage_losses.push_back(s / static_cast<double>(n));
    e.loss = combine_stage_losses(e.stage_losses, schedule.alphas);
    e.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    e.firing_rates = to_rates(spikes);
    if (test_set) e.test_accuracy = evaluate(model, *test_set, cfg.batch_size, options).accuracy;
    if (on_epoch) on_epoch(e);
    report.epochs.push_back(std::move(e));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

EvalResult evaluate(const TdFormer& model, const Dataset& data, std::size_t batch_size,
                    const ChainOptions& options) {
  NoGradScope no_grad;
  const ModelConfig& mc = model.config();
  const SubnetSchedule schedule = mc.schedule();
  bool initialized = true;
  for (const auto& [name, st] : model.store().bn_states()) initialized &= st.initialized;
  // An untrained model has no running statistics; fall back to batch statistics.
  // Running stats are restored afterwards so evaluation never mutates the model.
  std::map<std::string, BatchNormState> saved;
  if (!initialized) saved = model.store().bn_states();
  EvalResult out;
  std::vector<double> stage_sum(schedule.size(), 0.0);
  std::size_t correct = 0;
  std::map<std::string, std::pair<double, double>> spikes;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    RunContext ctx;
    ctx.mode = initialized ? NormMode::eval : NormMode::train;
    ctx.persist_membrane = mc.persist_membrane;
    ChainResult r = run_subnet_chain(model, data.batch(idx), schedule, ctx, options);
    std::vector<int> y = data.labels(idx);
    std::vector<double> stage;
    tdformer_loss(r.logits, y, schedule.alphas, &stage);
    for (std::size_t k = 0; k < stage.size(); ++k) {
      stage_sum[k] += stage[k] * static_cast<double>(idx.size());
    }
    std::vector<int> pred = predict(r);
    for (std::size_t k = 0; k < y.size(); ++k) correct += pred[k] == y[k];
    merge_rates(spikes, ctx.spikes);
  }
  if (!initialized) const_cast<TdFormer&>(model).store().bn_states() = saved;
  for (double s : stage_sum) out.stage_losses.push_back(s / static_cast<double>(data.size()));
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  out.firing_rates = to_rates(spikes);
  return out;
}

}  // namespace tdformer
