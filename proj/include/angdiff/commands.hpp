#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "angdiff/config.hpp"

namespace angdiff {

std::vector<std::string> command_names();

// Every key a command accepts, with its default value.
nlohmann::json command_defaults(const std::string& command);

// Defaults, then the JSON file at config_path, then each key=value in
// `sets`, then the explicit seed/out_dir flags.
ExperimentConfig make_config(const std::string& command, const std::optional<std::string>& config_path,
                             const std::vector<std::string>& sets,
                             const std::optional<std::int64_t>& seed,
                             const std::optional<std::string>& out_dir);

// Runs the command, writing its outputs and a config echo (config.json) into
// out_dir. Returns a short summary (also written as summary.json).
nlohmann::json run_command(const ExperimentConfig& cfg);

}  // namespace angdiff
