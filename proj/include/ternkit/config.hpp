#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace ternkit {

// Reads a JSON config tree by dotted path. Type problems are collected
// rather than thrown so that finish() can list every bad field at once,
// including keys nobody asked for.
class ConfigReader {
 public:
  explicit ConfigReader(nlohmann::json root);
  static ConfigReader from_file(const std::string& path);

  std::size_t get_size(const std::string& path, std::size_t fallback);
  std::uint64_t get_u64(const std::string& path, std::uint64_t fallback);
  double get_double(const std::string& path, double fallback);
  bool get_bool(const std::string& path, bool fallback);
  std::string get_string(const std::string& path, const std::string& fallback);
  std::set<std::string> get_string_set(const std::string& path, const std::set<std::string>& fallback);

  std::string require_string(const std::string& path);
  std::optional<std::string> optional_string(const std::string& path);

  // Type errors, missing required fields and unknown keys, in that order.
  std::vector<std::string> problems() const;
  // Throws ConfigError when problems() is not empty.
  void finish() const;

 private:
  const nlohmann::json* find(const std::string& path);
  void unknown_keys(const nlohmann::json& node, const std::string& prefix, std::vector<std::string>& out) const;

  nlohmann::json root_;
  std::set<std::string> seen_;
  std::vector<std::string> errors_;
};

}  // namespace ternkit
