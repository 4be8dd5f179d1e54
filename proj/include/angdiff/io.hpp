#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "angdiff/argen.hpp"
#include "angdiff/common.hpp"
#include "angdiff/head.hpp"

namespace angdiff {

// "%.17g": enough digits to round-trip a double.
std::string format_double(double v);

// Checkpoint file: one JSON header line, then every tensor as little-endian
// float32 values in header order. Loading widens back to double, so a
// reloaded model equals the float32-rounded original.
struct Checkpoint {
  nlohmann::json header;  // {format, kind, step, config, tensors: [{name, count}]}
  std::vector<std::pair<std::string, Vec>> tensors;

  const Vec& tensor(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

Checkpoint head_checkpoint(const HeadParams& hp, long step, const nlohmann::json& extra = {});
HeadParams head_from_checkpoint(const Checkpoint& ck);

// `ema`, when given, is stored alongside so training can resume.
Checkpoint argen_checkpoint(const ArgenModel& m, long step, const nlohmann::json& extra = {},
                            const ArgenModel* ema = nullptr);
ArgenModel argen_from_checkpoint(const Checkpoint& ck, bool ema = false);
bool checkpoint_has_ema(const Checkpoint& ck);

// Rows (step, t_bucket, mse); t_bucket -1 aggregates every step.
void write_loss_curve_csv(std::ostream& os, const std::vector<LossCurveRow>& rows);
void write_ratio_curve_csv(std::ostream& os, const std::vector<RatioCurveRow>& rows);

// Rows (grid_id, position, component, value) in position order.
void write_grids_csv(std::ostream& os, const std::vector<TokenGrid>& grids);
nlohmann::json grid_manifest(const std::vector<TokenGrid>& grids, std::uint64_t seed,
                             const std::string& config_hash);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace angdiff
