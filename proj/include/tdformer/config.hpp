#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace tdformer {

// Flat `key = value` text with `#` comments. Keys are unique.
class KeyValues {
 public:
  KeyValues() = default;
  static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  // The typed getters mark keys as consumed; `require_*` throws a
  // ConfigError naming the key when it is absent.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;
  std::string require_string(const std::string& key) const;
  std::vector<double> require_doubles(const std::string& key) const;

  // Keys present in the file but never read.
  std::vector<std::string> unused() const;

  // Canonical "key=value\n" lines in key order.
  std::string canonical() const;

 private:
  const std::string* lookup(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

// 64-bit FNV-1a, printed as 16 hex digits.
std::uint64_t fnv1a(const std::string& data);
std::string hex64(std::uint64_t v);

std::string format_double(double v);
std::string join_doubles(const std::vector<double>& v);

}  // namespace tdformer
