#include <random>

#include "tdformer/model.hpp"

namespace tdformer {

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "static") return DatasetKind::static_patterns;
  if (name == "temporal-xor") return DatasetKind::temporal_xor;
  if (name == "rate-coded") return DatasetKind::rate_coded;
  throw ConfigError("unknown dataset kind '" + name + "' (static|temporal-xor|rate-coded)");
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::static_patterns: return "static";
    case DatasetKind::temporal_xor: return "temporal-xor";
    case DatasetKind::rate_coded: return "rate-coded";
  }
  return "?";
}

void DatasetSpec::validate() const {
  if (samples == 0 || T == 0 || grid_h == 0 || grid_w == 0 || channels == 0 || classes < 2) {
    throw ConfigError("dataset sizes must be positive (classes >= 2)");
  }
  if (kind == DatasetKind::temporal_xor) {
    if (classes != 2) throw ConfigError("temporal-xor has exactly 2 classes");
    if (segments < 2 || T % segments != 0) {
      throw ConfigError("temporal-xor needs segments >= 2 dividing T");
    }
  }
  if (kind == DatasetKind::rate_coded && !rates.empty()) {
    if (rates.size() != classes) throw ConfigError("data.rates needs one rate per class");
    for (double r : rates) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("data.rates entries must lie in [0, 1]");
    }
  }
  if (!(noise >= 0.0)) throw ConfigError("data.noise must be non-negative");
}

DatasetSpec DatasetSpec::from_kv(const KeyValues& kv, const std::string& p) {
  DatasetSpec d;
  d.kind = parse_dataset_kind(kv.get_string(p + "kind", to_string(d.kind)));
  d.samples = static_cast<std::size_t>(kv.get_int(p + "samples", static_cast<long>(d.samples)));
  d.T = static_cast<std::size_t>(kv.get_int(p + "T", static_cast<long>(d.T)));
  d.grid_h = static_cast<std::size_t>(kv.get_int(p + "grid_h", static_cast<long>(d.grid_h)));
  d.grid_w = static_cast<std::size_t>(kv.get_int(p + "grid_w", static_cast<long>(d.grid_w)));
  d.channels =
      static_cast<std::size_t>(kv.get_int(p + "channels", static_cast<long>(d.channels)));
  d.classes = static_cast<std::size_t>(kv.get_int(p + "classes", static_cast<long>(d.classes)));
  d.segments =
      static_cast<std::size_t>(kv.get_int(p + "segments", static_cast<long>(d.segments)));
  d.noise = kv.get_double(p + "noise", d.noise);
  d.rates = kv.get_doubles(p + "rates", {});
  d.seed = static_cast<std::uint64_t>(kv.get_int(p + "seed", static_cast<long>(d.seed)));
  d.split = static_cast<std::uint64_t>(kv.get_int(p + "split", static_cast<long>(d.split)));
  return d;
}

void DatasetSpec::write_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "kind", to_string(kind));
  kv.set(p + "samples", std::to_string(samples));
  kv.set(p + "T", std::to_string(T));
  kv.set(p + "grid_h", std::to_string(grid_h));
  kv.set(p + "grid_w", std::to_string(grid_w));
  kv.set(p + "channels", std::to_string(channels));
  kv.set(p + "classes", std::to_string(classes));
  kv.set(p + "segments", std::to_string(segments));
  kv.set(p + "noise", format_double(noise));
  if (!rates.empty()) kv.set(p + "rates", join_doubles(rates));
  kv.set(p + "seed", std::to_string(seed));
  kv.set(p + "split", std::to_string(split));
}

Dataset synth_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset d;
  d.T = spec.T;
  d.tokens = spec.grid_h * spec.grid_w;
  d.channels = spec.channels;
  d.classes = spec.classes;
  const std::size_t frame = d.tokens * d.channels;
  d.x.assign(spec.samples * spec.T * frame, 0.0);
  d.y.assign(spec.samples, 0);

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  const std::size_t templates =
      spec.kind == DatasetKind::temporal_xor ? 2 : spec.classes;
  std::vector<std::vector<double>> tmpl(templates, std::vector<double>(frame));
  Rng template_rng(spec.seed);
  for (auto& t : tmpl)
    for (double& v : t) v = coin(template_rng) ? 1.0 : -1.0;
  Rng rng(spec.seed * 0x100000001b3ull + 0x51ed27 + spec.split);
  std::vector<double> rates = spec.rates;
  if (rates.empty()) {
    for (std::size_t k = 0; k < spec.classes; ++k) {
      rates.push_back(0.1 + 0.3 * static_cast<double>(k) / static_cast<double>(spec.classes - 1));
    }
  }
  std::uniform_int_distribution<int> label(0, static_cast<int>(spec.classes) - 1);

  for (std::size_t s = 0; s < spec.samples; ++s) {
    double* out = d.x.data() + s * spec.T * frame;
    switch (spec.kind) {
      case DatasetKind::static_patterns: {
        const int y = label(rng);
        d.y[s] = y;
        std::vector<double> img(frame);
        for (std::size_t i = 0; i < frame; ++i) img[i] = tmpl[y][i] + spec.noise * gauss(rng);
        for (std::size_t t = 0; t < spec.T; ++t) std::copy(img.begin(), img.end(), out + t * frame);
        break;
      }
      case DatasetKind::temporal_xor: {
        const std::size_t len = spec.T / spec.segments;
        int parity = 0;
        for (std::size_t g = 0; g < spec.segments; ++g) {
          const int bit = coin(rng) ? 1 : 0;
          parity ^= bit;
          for (std::size_t t = g * len; t < (g + 1) * len; ++t)
            for (std::size_t i = 0; i < frame; ++i)
              out[t * frame + i] = tmpl[bit][i] + spec.noise * gauss(rng);
        }
        d.y[s] = parity;
        break;
      }
      case DatasetKind::rate_coded: {
        const int y = label(rng);
        d.y[s] = y;
        std::bernoulli_distribution fire(rates[y]);
        for (std::size_t i = 0; i < spec.T * frame; ++i) out[i] = fire(rng) ? 1.0 : 0.0;
        break;
      }
    }
  }
  return d;
}

Var Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t frame = tokens * channels;
  const std::size_t b = indices.size();
  std::vector<double> v(T * b * frame);
  for (std::size_t j = 0; j < b; ++j) {
    if (indices[j] >= size()) throw DimensionError("dataset index out of range");
    const double* src = x.data() + indices[j] * T * frame;
    for (std::size_t t = 0; t < T; ++t) {
      std::copy_n(src + t * frame, frame, v.data() + (t * b + j) * frame);
    }
  }
  return make_tensor(Shape{T, b, tokens, channels}, std::move(v));
}

std::vector<int> Dataset::labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(y.at(i));
  return out;
}

}  // namespace tdformer
