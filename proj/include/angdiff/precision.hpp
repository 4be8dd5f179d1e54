#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"

#include "angdiff/common.hpp"
#include "angdiff/rng.hpp"
#include "angdiff/schedule.hpp"

namespace angdiff {

enum class PrecisionMode { exact, bf16_round, fixed_delta, uniform_delta };

std::string to_string(PrecisionMode mode);
PrecisionMode precision_mode_from_string(std::string_view name);

// bfloat16 unit spacing bound.
inline constexpr double kBf16Delta = 1.0 / 128.0;

// How a model output is corrupted by low-precision storage.
//
//   exact:         untouched
//   bf16-round:    rounded to the nearest bfloat16
//   fixed-delta:   u * (1 + s * delta_max), s = +-1 per component
//   uniform-delta: u * (1 + d), d ~ U(-delta_max, delta_max) per component
struct PrecisionModel {
  PrecisionMode mode = PrecisionMode::exact;
  double delta_max = kBf16Delta;
  std::uint64_t seed = 0;

  bool multiplicative() const {
    return mode == PrecisionMode::fixed_delta || mode == PrecisionMode::uniform_delta;
  }

  nlohmann::json to_json() const;
  static PrecisionModel from_json(const nlohmann::json& j);
};

void validate(const PrecisionModel& pm);

// Round-to-nearest-even onto the bfloat16 grid (8 exponent bits, 7 stored
// mantissa bits), returned as a double. Infinities and NaN pass through;
// values beyond the largest finite bfloat16 round to infinity.
double round_bf16(double x);
Vec round_bf16(ConstSpan x);
void round_bf16_inplace(Span x);

// Applies the precision model to u. Stochastic modes draw from `rng`, one
// draw per component per call.
Vec inject(const PrecisionModel& pm, ConstSpan u, Rng& rng);

// In-place variant. When `factors` is non-null it receives the per-component
// multiplier that was applied (1 for exact and bf16-round), which is what a
// straight-through backward pass needs.
void inject_inplace(const PrecisionModel& pm, Span u, Rng& rng, Vec* factors = nullptr);

// |sqrt(1 - ab_to) - sqrt(ab_to / ab_from) sqrt(1 - ab_from)| * delta: the
// std of the error an eps-prediction model adds over one DDIM step when its
// output is scaled by (1 + delta) and eps_theta has unit variance.
double eps_pred_step_error_std(const Schedule& s, int t_from, int t_to, double delta);

// delta^2 / alpha_bar_t: the v-space loss overhead an eps-prediction model
// carries from output corruption.
double theoretical_vloss_overhead(const Schedule& s, int t, double delta);

// eps_theta * delta / cos(phi_t): the v-space error equivalent to corrupting
// an eps-prediction output by (1 + delta).
Vec equiv_vpred_error(const Schedule& s, int t, ConstSpan eps_theta, double delta);

}  // namespace angdiff
