#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tunnelcrack {

// Plain-text `key = value` configuration.
//
//   # comment
//   growth_rate = 32
//   block_sizes = 6,12,32,32
//
// Keys are unique; insertion order is preserved when dumping. Lists are
// comma separated; booleans are true/false.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  std::string dump() const;
  void save(const std::filesystem::path& path) const;

  bool has(const std::string& key) const;
  void set(const std::string& key, std::string value);
  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  std::string get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  // Throws ValueError naming the first key outside `known`.
  void require_known(const std::set<std::string>& known) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string join_ints(const std::vector<std::int64_t>& values);
std::string format_double(double value);

}  // namespace tunnelcrack
