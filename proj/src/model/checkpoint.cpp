#include <fstream>

#include <json.hpp>

#include "tdformer/model.hpp"

namespace tdformer {

namespace {
constexpr const char* kFormat = "tdformer-checkpoint";
constexpr int kVersion = 1;
}  // namespace

void save_checkpoint(const TdFormer& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  KeyValues kv;
  model.config().write_kv(kv);
  j["config"] = kv.entries();
  j["config_hash"] = hex64(fnv1a(kv.canonical()));
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, p] : model.store().parameters()) {
    params.push_back({{"name", name}, {"shape", p->shape.dims()}, {"values", p->values}});
  }
  j["parameters"] = std::move(params);
  nlohmann::json bn = nlohmann::json::object();
  for (const auto& [name, st] : model.store().bn_states()) {
    bn[name] = {{"initialized", st.initialized},
                {"running_mean", st.running_mean},
                {"running_var", st.running_var}};
  }
  j["batch_norm"] = std::move(bn);
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write checkpoint " + path);
  f << j.dump(1) << "\n";
}

std::unique_ptr<TdFormer> load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read checkpoint " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != kFormat) throw ConfigError(path + " is not a tdformer checkpoint");
  if (j.value("version", 0) != kVersion) {
    throw ConfigError("unsupported checkpoint version in " + path);
  }
  KeyValues kv;
  for (const auto& [k, v] : j.at("config").items()) kv.set(k, v.get<std::string>());
  auto model = std::make_unique<TdFormer>(ModelConfig::from_kv(kv));
  ParameterStore& store = model->store();
  const auto& params = j.at("parameters");
  if (params.size() != store.parameters().size()) {
    throw ConfigError("checkpoint parameter count does not match its config");
  }
  for (const auto& entry : params) {
    const std::string name = entry.at("name").get<std::string>();
    Var p = store.find(name);
    if (!p) throw ConfigError("checkpoint has unknown parameter " + name);
    auto values = entry.at("values").get<std::vector<double>>();
    if (entry.at("shape").get<std::vector<std::size_t>>() != p->shape.dims() ||
        values.size() != p->values.size()) {
      throw ConfigError("checkpoint parameter " + name + " has the wrong shape");
    }
    p->values = std::move(values);
  }
  for (auto& [name, st] : store.bn_states()) {
    const auto& e = j.at("batch_norm").at(name);
    st.initialized = e.at("initialized").get<bool>();
    st.running_mean = e.at("running_mean").get<std::vector<double>>();
    st.running_var = e.at("running_var").get<std::vector<double>>();
  }
  return model;
}

}  // namespace tdformer
