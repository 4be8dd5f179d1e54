#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

#include "angdiff/common.hpp"
#include "angdiff/schedule.hpp"

namespace angdiff {

enum class ParamKind { eps, x, v, custom };

std::string to_string(ParamKind kind);
ParamKind param_kind_from_string(std::string_view name);

// Recovery of (x, eps) divides by sin(psi_t - phi_t); below this magnitude a
// parameterization is rejected as ill-posed.
inline constexpr double kIllPosedFloor = 1e-6;

// Trig terms of a parameterization at one step. `denom` is sin(psi_t - phi_t).
struct ParamAngles {
  double cos_phi;
  double sin_phi;
  double cos_psi;
  double sin_psi;
  double denom;
  double scale;
};

// Prediction target u_t = r_t cos(psi_t) x + r_t sin(psi_t) eps.
//
//   eps:    psi_t = pi/2
//   x:      psi_t = 0
//   v:      psi_t = phi_t + pi/2, so u_t = cos(phi_t) eps - sin(phi_t) x
//   custom: psi_t = phi_t + psi_offset
//
// r_t is a constant `scale` for every kind.
struct Parameterization {
  ParamKind kind = ParamKind::v;
  double psi_offset = 0.0;
  double scale = 1.0;

  static Parameterization eps_pred() { return {ParamKind::eps, 0.0, 1.0}; }
  static Parameterization x_pred() { return {ParamKind::x, 0.0, 1.0}; }
  static Parameterization v_pred() { return {ParamKind::v, 0.0, 1.0}; }
  static Parameterization custom(double psi_offset, double scale = 1.0) {
    return {ParamKind::custom, psi_offset, scale};
  }
  static Parameterization from_kind(ParamKind kind);

  ParamAngles angles(const Schedule& s, int t) const;
  double psi(const Schedule& s, int t) const;

  nlohmann::json to_json() const;
  static Parameterization from_json(const nlohmann::json& j);
};

// Throws if |sin(psi_t - phi_t)| < kIllPosedFloor or the scale is not positive.
void check_well_posed(const Parameterization& p, const Schedule& s, int t);

struct TargetVector {
  Vec values;
  int step = 0;
  ParamKind kind = ParamKind::v;
};

TargetVector target(const Parameterization& p, const Schedule& s, int t, ConstSpan x, ConstSpan eps);

struct Recovered {
  Vec x;
  Vec eps;
};

// Inverts (forward_diffuse, target): given x_t and u_t, returns (x, eps).
Recovered recover_x_eps(const Parameterization& p, const Schedule& s, int t, ConstSpan x_t,
                        ConstSpan u);

// Re-expresses a model output under another parameterization.
Vec convert(const Parameterization& from, const Parameterization& to, const Schedule& s, int t,
            ConstSpan x_t, ConstSpan u_from);

}  // namespace angdiff
