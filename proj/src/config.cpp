#include "ternkit/config.hpp"

#include <fstream>
#include <sstream>

#include "ternkit/error.hpp"

namespace ternkit {

ConfigReader::ConfigReader(nlohmann::json root) : root_(std::move(root)) {
  if (!root_.is_object()) throw ConfigError({"<root>: expected a JSON object"});
}

ConfigReader ConfigReader::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError({path + ": not valid JSON"});
  return ConfigReader(std::move(j));
}

const nlohmann::json* ConfigReader::find(const std::string& path) {
  seen_.insert(path);
  const nlohmann::json* node = &root_;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object()) return nullptr;
    auto it = node->find(key);
    if (it == node->end()) return nullptr;
    node = &*it;
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

std::size_t ConfigReader::get_size(const std::string& path, std::size_t fallback) {
  return static_cast<std::size_t>(get_u64(path, fallback));
}

std::uint64_t ConfigReader::get_u64(const std::string& path, std::uint64_t fallback) {
  const nlohmann::json* j = find(path);
  if (j == nullptr) return fallback;
  if (!j->is_number_unsigned()) {
    errors_.push_back(path + ": expected a non-negative integer");
    return fallback;
  }
  return j->get<std::uint64_t>();
}

double ConfigReader::get_double(const std::string& path, double fallback) {
  const nlohmann::json* j = find(path);
  if (j == nullptr) return fallback;
  if (!j->is_number()) {
    errors_.push_back(path + ": expected a number");
    return fallback;
  }
  return j->get<double>();
}

bool ConfigReader::get_bool(const std::string& path, bool fallback) {
  const nlohmann::json* j = find(path);
  if (j == nullptr) return fallback;
  if (!j->is_boolean()) {
    errors_.push_back(path + ": expected true or false");
    return fallback;
  }
  return j->get<bool>();
}

std::string ConfigReader::get_string(const std::string& path, const std::string& fallback) {
  const nlohmann::json* j = find(path);
  if (j == nullptr) return fallback;
  if (!j->is_string()) {
    errors_.push_back(path + ": expected a string");
    return fallback;
  }
  return j->get<std::string>();
}

std::set<std::string> ConfigReader::get_string_set(const std::string& path, const std::set<std::string>& fallback) {
  const nlohmann::json* j = find(path);
  if (j == nullptr) return fallback;
  bool ok = j->is_array();
  std::set<std::string> out;
  if (ok) {
    for (const auto& e : *j) {
      ok &= e.is_string();
      if (e.is_string()) out.insert(e.get<std::string>());
    }
  }
  if (ok) return out;
  errors_.push_back(path + ": expected an array of strings");
  return fallback;
}

std::string ConfigReader::require_string(const std::string& path) {
  const nlohmann::json* j = find(path);
  if (j == nullptr) {
    errors_.push_back(path + ": required field is missing");
    return {};
  }
  if (!j->is_string()) {
    errors_.push_back(path + ": expected a string");
    return {};
  }
  return j->get<std::string>();
}

std::optional<std::string> ConfigReader::optional_string(const std::string& path) {
  const nlohmann::json* j = find(path);
  if (j == nullptr || j->is_null()) return std::nullopt;
  if (!j->is_string()) {
    errors_.push_back(path + ": expected a string");
    return std::nullopt;
  }
  return j->get<std::string>();
}

void ConfigReader::unknown_keys(const nlohmann::json& node, const std::string& prefix,
                                std::vector<std::string>& out) const {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (seen_.contains(path)) continue;
    const bool is_section = [&] {
      for (const auto& s : seen_)
        if (s.rfind(path + ".", 0) == 0) return true;
      return false;
    }();
    if (!is_section)
      out.push_back(path + ": unknown field");
    else if (!it->is_object())
      out.push_back(path + ": expected an object");
    else
      unknown_keys(*it, path, out);
  }
}

std::vector<std::string> ConfigReader::problems() const {
  std::vector<std::string> out = errors_;
  unknown_keys(root_, "", out);
  return out;
}

void ConfigReader::finish() const {
  auto p = problems();
  if (!p.empty()) throw ConfigError(std::move(p));
}

}  // namespace ternkit
