#include "angdiff/param.hpp"

#include <cmath>
#include <numbers>

namespace angdiff {

std::string to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::eps:
      return "eps";
    case ParamKind::x:
      return "x";
    case ParamKind::v:
      return "v";
    case ParamKind::custom:
      return "custom";
  }
  return "unknown";
}

ParamKind param_kind_from_string(std::string_view name) {
  if (name == "eps" || name == "eps-pred") return ParamKind::eps;
  if (name == "x" || name == "x-pred") return ParamKind::x;
  if (name == "v" || name == "v-pred") return ParamKind::v;
  if (name == "custom") return ParamKind::custom;
  throw std::invalid_argument("unknown parameterization kind: " + std::string(name));
}

Parameterization Parameterization::from_kind(ParamKind kind) {
  switch (kind) {
    case ParamKind::eps:
      return eps_pred();
    case ParamKind::x:
      return x_pred();
    case ParamKind::v:
      return v_pred();
    case ParamKind::custom:
      break;
  }
  throw std::invalid_argument("from_kind: custom parameterization needs an explicit offset");
}

ParamAngles Parameterization::angles(const Schedule& s, int t) const {
  ParamAngles a{};
  a.cos_phi = s.cos_phase(t);
  a.sin_phi = s.sin_phase(t);
  a.scale = scale;
  switch (kind) {
    case ParamKind::eps:
      a.cos_psi = 0.0;
      a.sin_psi = 1.0;
      break;
    case ParamKind::x:
      a.cos_psi = 1.0;
      a.sin_psi = 0.0;
      break;
    case ParamKind::v:
      a.cos_psi = -a.sin_phi;
      a.sin_psi = a.cos_phi;
      break;
    case ParamKind::custom: {
      const double co = std::cos(psi_offset);
      const double so = std::sin(psi_offset);
      a.cos_psi = a.cos_phi * co - a.sin_phi * so;
      a.sin_psi = a.sin_phi * co + a.cos_phi * so;
      break;
    }
  }
  // sin(psi - phi) from the same products the DDIM step uses for
  // sin(phi - psi), so the two are exact negatives.
  a.denom = a.sin_psi * a.cos_phi - a.cos_psi * a.sin_phi;
  return a;
}

double Parameterization::psi(const Schedule& s, int t) const {
  const auto a = angles(s, t);
  return std::atan2(a.sin_psi, a.cos_psi);
}

nlohmann::json Parameterization::to_json() const {
  nlohmann::json j{{"kind", to_string(kind)}};
  if (kind == ParamKind::custom) j["psi_offset"] = psi_offset;
  if (scale != 1.0) j["r"] = scale;
  return j;
}

Parameterization Parameterization::from_json(const nlohmann::json& j) {
  Parameterization p;
  p.kind = param_kind_from_string(j.at("kind").get<std::string>());
  if (p.kind == ParamKind::custom) p.psi_offset = j.at("psi_offset").get<double>();
  p.scale = j.value("r", 1.0);
  require(p.scale > 0.0, "parameterization: r must be positive");
  return p;
}

namespace {

ParamAngles well_posed_angles(const Parameterization& p, const Schedule& s, int t) {
  require(p.scale > 0.0 && std::isfinite(p.scale), "parameterization: r must be positive");
  auto a = p.angles(s, t);
  if (!(std::abs(a.denom) >= kIllPosedFloor)) {
    throw std::domain_error("parameterization " + to_string(p.kind) + " is ill-posed at t=" +
                            std::to_string(t) + ": |sin(psi - phi)| = " +
                            std::to_string(std::abs(a.denom)));
  }
  return a;
}

}  // namespace

void check_well_posed(const Parameterization& p, const Schedule& s, int t) {
  (void)well_posed_angles(p, s, t);
}

TargetVector target(const Parameterization& p, const Schedule& s, int t, ConstSpan x,
                    ConstSpan eps) {
  require_same_size(x, eps, "target");
  require(t >= 1 && t <= s.steps(), "target: t must lie in [1, T]");
  const auto a = well_posed_angles(p, s, t);
  const double cx = a.scale * a.cos_psi;
  const double ce = a.scale * a.sin_psi;
  TargetVector out{Vec(x.size()), t, p.kind};
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = cx * x[i] + ce * eps[i];
  return out;
}

Recovered recover_x_eps(const Parameterization& p, const Schedule& s, int t, ConstSpan x_t,
                        ConstSpan u) {
  require_same_size(x_t, u, "recover_x_eps");
  const auto a = well_posed_angles(p, s, t);
  Recovered r{Vec(x_t.size()), Vec(x_t.size())};
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double un = u[i] / a.scale;
    r.x[i] = (a.sin_psi * x_t[i] - a.sin_phi * un) / a.denom;
    r.eps[i] = -(a.cos_psi * x_t[i] - a.cos_phi * un) / a.denom;
  }
  return r;
}

Vec convert(const Parameterization& from, const Parameterization& to, const Schedule& s, int t,
            ConstSpan x_t, ConstSpan u_from) {
  require_same_size(x_t, u_from, "convert");
  check_well_posed(to, s, t);
  if (from.kind == to.kind && from.psi_offset == to.psi_offset && from.scale == to.scale) {
    check_well_posed(from, s, t);
    return Vec(u_from.begin(), u_from.end());
  }
  const auto r = recover_x_eps(from, s, t, x_t, u_from);
  const auto a = to.angles(s, t);
  Vec out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.scale * (a.cos_psi * r.x[i] + a.sin_psi * r.eps[i]);
  }
  return out;
}

}  // namespace angdiff
