#include "angdiff/config.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace angdiff {

namespace {

bool same_kind(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array() || v.is_string();
  return def.type() == v.type();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

nlohmann::json global_defaults() {
  return {{"seed", 0}, {"out_dir", "out"}, {"precision_mode", "exact"}, {"delta_max", 1.0 / 128.0}};
}

ExperimentConfig::ExperimentConfig(std::string command, nlohmann::json defaults)
    : command_(std::move(command)), values_(global_defaults()) {
  for (auto it = defaults.begin(); it != defaults.end(); ++it) values_[it.key()] = it.value();
}

void ExperimentConfig::set_value(const std::string& key, nlohmann::json value,
                                 const std::string& origin) {
  if (!values_.contains(key)) {
    throw std::invalid_argument(origin + ": unknown key '" + key + "' for command " + command_);
  }
  const auto& def = values_[key];
  if (!same_kind(def, value)) {
    throw std::invalid_argument(origin + ": key '" + key + "' expects " + def.type_name() +
                                ", got " + value.type_name());
  }
  if (def.is_number_float()) value = value.get<double>();
  values_[key] = std::move(value);
}

void ExperimentConfig::merge(const nlohmann::json& obj, const std::string& origin) {
  if (!obj.is_object()) throw std::invalid_argument(origin + ": config must be a flat JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (it.value().is_object()) {
      throw std::invalid_argument(origin + ": nested object under '" + it.key() + "'");
    }
    set_value(it.key(), it.value(), origin);
  }
}

void ExperimentConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
  if (v.is_discarded() || (values_.contains(key) && values_[key].is_string() && !v.is_string())) {
    v = raw;
  }
  set_value(key, std::move(v), "--set");
}

std::int64_t ExperimentConfig::get_int(const std::string& key) const {
  return values_.at(key).get<std::int64_t>();
}

std::uint64_t ExperimentConfig::get_seed() const {
  const auto s = get_int("seed");
  if (s < 0) throw std::invalid_argument("seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

double ExperimentConfig::get_double(const std::string& key) const {
  return values_.at(key).get<double>();
}

bool ExperimentConfig::get_bool(const std::string& key) const { return values_.at(key).get<bool>(); }

std::string ExperimentConfig::get_string(const std::string& key) const {
  return values_.at(key).get<std::string>();
}

std::vector<double> ExperimentConfig::get_doubles(const std::string& key) const {
  const auto& v = values_.at(key);
  std::vector<double> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(e.get<double>());
  } else {
    for (const auto& s : split_commas(v.get<std::string>())) {
      std::size_t used = 0;
      const double d = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("key '" + key + "': bad number '" + s + "'");
      out.push_back(d);
    }
  }
  return out;
}

std::vector<std::string> ExperimentConfig::get_strings(const std::string& key) const {
  const auto& v = values_.at(key);
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(e.get<std::string>());
  } else {
    out = split_commas(v.get<std::string>());
  }
  return out;
}

std::vector<int> ExperimentConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (double d : get_doubles(key)) {
    if (d != static_cast<int>(d)) throw std::invalid_argument("key '" + key + "' expects integers");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::hash() const {
  nlohmann::json v = values_;
  v.erase("out_dir");
  const nlohmann::json doc = {{"command", command_}, {"config", v}};
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(doc.dump())));
  return buf;
}

nlohmann::json ExperimentConfig::echo() const {
  return {{"command", command_}, {"config", values_}, {"config_hash", hash()}};
}

}  // namespace angdiff
