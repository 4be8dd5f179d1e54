#include "angdiff/precision.hpp"

#include <cmath>
#include <limits>

namespace angdiff {

std::string to_string(PrecisionMode mode) {
  switch (mode) {
    case PrecisionMode::exact:
      return "exact";
    case PrecisionMode::bf16_round:
      return "bf16-round";
    case PrecisionMode::fixed_delta:
      return "fixed-delta";
    case PrecisionMode::uniform_delta:
      return "uniform-delta";
  }
  return "unknown";
}

PrecisionMode precision_mode_from_string(std::string_view name) {
  if (name == "exact") return PrecisionMode::exact;
  if (name == "bf16-round" || name == "bf16") return PrecisionMode::bf16_round;
  if (name == "fixed-delta") return PrecisionMode::fixed_delta;
  if (name == "uniform-delta") return PrecisionMode::uniform_delta;
  throw std::invalid_argument("unknown precision mode: " + std::string(name));
}

void validate(const PrecisionModel& pm) {
  require(pm.delta_max > 0.0 && pm.delta_max < 1.0, "precision: delta_max must lie in (0, 1)");
}

nlohmann::json PrecisionModel::to_json() const {
  return {{"mode", to_string(mode)}, {"delta_max", delta_max}, {"seed", seed}};
}

PrecisionModel PrecisionModel::from_json(const nlohmann::json& j) {
  PrecisionModel pm;
  pm.mode = precision_mode_from_string(j.at("mode").get<std::string>());
  pm.delta_max = j.value("delta_max", kBf16Delta);
  pm.seed = j.value("seed", std::uint64_t{0});
  validate(pm);
  return pm;
}

double round_bf16(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  constexpr int kMantissaBits = 8;  // including the implicit bit
  constexpr int kMinExponent = -126;
  // Largest finite bfloat16: (2 - 2^-7) * 2^127.
  const double max_finite = std::ldexp(2.0 - std::ldexp(1.0, -7), 127);

  int e = 0;
  (void)std::frexp(x, &e);  // |x| in [2^(e-1), 2^e)
  const int unit_exp = std::max(e - 1, kMinExponent) - (kMantissaBits - 1);
  // Scaling by a power of two is exact; nearbyint rounds half to even.
  const double q = std::nearbyint(std::ldexp(x, -unit_exp));
  const double r = std::ldexp(q, unit_exp);
  if (std::abs(r) > max_finite) return std::copysign(std::numeric_limits<double>::infinity(), x);
  return r;
}

Vec round_bf16(ConstSpan x) {
  Vec out(x.begin(), x.end());
  round_bf16_inplace(out);
  return out;
}

void round_bf16_inplace(Span x) {
  for (auto& v : x) v = round_bf16(v);
}

void inject_inplace(const PrecisionModel& pm, Span u, Rng& rng, Vec* factors) {
  if (factors) factors->assign(u.size(), 1.0);
  switch (pm.mode) {
    case PrecisionMode::exact:
      return;
    case PrecisionMode::bf16_round:
      round_bf16_inplace(u);
      return;
    case PrecisionMode::fixed_delta:
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double f = 1.0 + ((rng.next_u64() >> 63) ? pm.delta_max : -pm.delta_max);
        u[i] *= f;
        if (factors) (*factors)[i] = f;
      }
      return;
    case PrecisionMode::uniform_delta:
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double f = 1.0 + rng.uniform(-pm.delta_max, pm.delta_max);
        u[i] *= f;
        if (factors) (*factors)[i] = f;
      }
      return;
  }
}

Vec inject(const PrecisionModel& pm, ConstSpan u, Rng& rng) {
  Vec out(u.begin(), u.end());
  inject_inplace(pm, out, rng);
  return out;
}

double eps_pred_step_error_std(const Schedule& s, int t_from, int t_to, double delta) {
  require(t_to <= t_from, "eps_pred_step_error_std: t_to must not exceed t_from");
  using ld = long double;
  const ld a_from = s.alpha_bar(t_from);
  const ld a_to = s.alpha_bar(t_to);
  const ld coeff = std::sqrt(1.0L - a_to) - std::sqrt(a_to) / std::sqrt(a_from) * std::sqrt(1.0L - a_from);
  return static_cast<double>(std::abs(coeff)) * delta;
}

double theoretical_vloss_overhead(const Schedule& s, int t, double delta) {
  using ld = long double;
  const ld d = delta;
  return static_cast<double>(d * d / static_cast<ld>(s.alpha_bar(t)));
}

Vec equiv_vpred_error(const Schedule& s, int t, ConstSpan eps_theta, double delta) {
  using ld = long double;
  const ld k = static_cast<ld>(delta) / std::sqrt(static_cast<ld>(s.alpha_bar(t)));
  Vec out(eps_theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(eps_theta[i] * k);
  return out;
}

}  // namespace angdiff
