#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace angdiff {

// Flat key/value experiment settings. Every key must appear in the command's
// defaults; a value's JSON type must match the default's (integers are
// accepted where a float is expected).
class ExperimentConfig {
 public:
  ExperimentConfig(std::string command, nlohmann::json defaults);

  const std::string& command() const { return command_; }
  const nlohmann::json& values() const { return values_; }

  // Merges a flat JSON object; unknown keys are rejected.
  void merge(const nlohmann::json& obj, const std::string& origin);
  // "key=value"; the value is parsed as JSON when possible, else taken as a string.
  void set(const std::string& assignment);
  void set_value(const std::string& key, nlohmann::json value, const std::string& origin);

  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_seed() const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  // Comma-separated list or JSON array of numbers.
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  // FNV-1a 64 over the canonical (sorted-key) dump, excluding out_dir, as 16
  // hex digits.
  std::string hash() const;
  nlohmann::json echo() const;

 private:
  std::string command_;
  nlohmann::json values_;
};

std::uint64_t fnv1a64(const std::string& bytes);

// Keys every command accepts.
nlohmann::json global_defaults();

}  // namespace angdiff
