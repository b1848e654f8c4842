#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tdformer/config.hpp"
#include "tdformer/errors.hpp"

namespace tdformer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || trim(text.substr(pos)) != "" || !std::isfinite(v)) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.values_.count(key)) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    kv.values_[key] = value;
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

const std::string* KeyValues::lookup(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = lookup(key);
  return v ? *v : fallback;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  const std::string* v = lookup(key);
  return v ? to_double(key, *v) : fallback;
}

long KeyValues::get_int(const std::string& key, long fallback) const {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  const double d = to_double(key, *v);
  if (d != std::floor(d)) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + *v + "'");
  }
  return static_cast<long>(d);
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + *v + "'");
}

std::vector<double> KeyValues::get_doubles(const std::string& key,
                                           const std::vector<double>& fallback) const {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::string item;
  std::istringstream in(*v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("config key '" + key + "': empty list entry");
    out.push_back(to_double(key, item));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string KeyValues::require_string(const std::string& key) const {
  const std::string* v = lookup(key);
  if (!v) throw ConfigError("missing required config key '" + key + "'");
  return *v;
}

std::vector<double> KeyValues::require_doubles(const std::string& key) const {
  if (!has(key)) throw ConfigError("missing required config key '" + key + "'");
  return get_doubles(key, {});
}

std::vector<std::string> KeyValues::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!used_.count(k)) out.push_back(k);
  }
  return out;
}

std::string KeyValues::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace tdformer
