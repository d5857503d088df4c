#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace detrame::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plain-text `key = value` configuration with `#` comments and `[section]`
/// headers. Keys are addressed as "section.key"; keys before any header have
/// no prefix.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& key) const;

  std::string get_str(const std::string& key) const;  // throws when missing
  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  long long get_int64(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Whitespace-separated list values, e.g. `hidden = 16 16`.
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;

  void set(const std::string& key, const std::string& value);

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace detrame::config
