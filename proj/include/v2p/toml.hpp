#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace v2p::toml {

// Minimal TOML reader covering the subset the config files use:
// [section] / [section.sub] headers, key = value lines, `#` comments,
// values of type bool, integer, float, "string", and flat arrays thereof.
// Keys are addressed as dotted paths: "train.lr".
class Table {
 public:
  using Value = std::variant<bool, std::int64_t, double, std::string,
                             std::vector<bool>, std::vector<std::int64_t>,
                             std::vector<double>, std::vector<std::string>>;

  static Table parse_file(const std::filesystem::path& path);
  static Table parse_string(const std::string& text,
                            const std::string& origin = "<string>");

  bool has(const std::string& key) const;

  bool get_bool(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;  // accepts integers
  std::string get_string(const std::string& key) const;
  std::vector<std::int64_t> get_int_array(const std::string& key) const;
  std::vector<double> get_double_array(const std::string& key) const;
  std::vector<std::string> get_string_array(const std::string& key) const;

  bool get_bool_or(const std::string& key, bool fallback) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  double get_double_or(const std::string& key, double fallback) const;
  std::string get_string_or(const std::string& key,
                            const std::string& fallback) const;

  // Every get_* marks its key consumed; call after loading a config to
  // reject misspelled keys.
  void require_all_consumed() const;

  std::vector<std::string> keys() const;

 private:
  const Value& lookup(const std::string& key) const;

  std::string origin_;
  std::map<std::string, Value> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace v2p::toml
