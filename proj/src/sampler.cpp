#include "angdiff/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace angdiff {

std::string to_string(GuidanceSpace space) { return space == GuidanceSpace::v ? "v" : "eps"; }

GuidanceSpace guidance_space_from_string(std::string_view name) {
  if (name == "v" || name == "v-space") return GuidanceSpace::v;
  if (name == "eps" || name == "eps-space") return GuidanceSpace::eps;
  throw std::invalid_argument("unknown guidance space: " + std::string(name));
}

std::string to_string(SamplerKind kind) { return kind == SamplerKind::ddim ? "ddim" : "ddpm"; }

SamplerKind sampler_kind_from_string(std::string_view name) {
  if (name == "ddim") return SamplerKind::ddim;
  if (name == "ddpm") return SamplerKind::ddpm;
  throw std::invalid_argument("unknown sampler kind: " + std::string(name));
}

std::string to_string(StepSpacing spacing) {
  return spacing == StepSpacing::uniform_t ? "uniform-t" : "uniform-phase";
}

StepSpacing step_spacing_from_string(std::string_view name) {
  if (name == "uniform-t") return StepSpacing::uniform_t;
  if (name == "uniform-phase") return StepSpacing::uniform_phase;
  throw std::invalid_argument("unknown step spacing: " + std::string(name));
}

Vec ddim_step_general(const Parameterization& p, const Schedule& s, int t_from, int t_to,
                      ConstSpan x_t, ConstSpan u, const PrecisionModel& pm, Rng& rng) {
  require_same_size(x_t, u, "ddim_step_general");
  require(t_to <= t_from, "ddim_step_general: t_to must not exceed t_from");
  check_well_posed(p, s, t_from);
  const auto a = p.angles(s, t_from);
  const double cos_to = s.cos_phase(t_to);
  const double sin_to = s.sin_phase(t_to);
  // sin(phi_to - phi_from) and sin(phi_to - psi) by angle subtraction.
  const double sin_step = sin_to * a.cos_phi - cos_to * a.sin_phi;
  const double sin_to_psi = sin_to * a.cos_psi - cos_to * a.sin_psi;
  const double coef_u = sin_step / a.denom / a.scale;
  const double coef_x = -sin_to_psi / a.denom;

  Vec corrupted = inject(pm, u, rng);
  Vec out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coef_u * corrupted[i] + coef_x * x_t[i];
  return out;
}

PosteriorCoefficients ddpm_posterior(const Schedule& s, int t_from, int t_to) {
  require(t_from >= 1, "ddpm_step: t must be >= 1");
  require(t_to >= 0 && t_to < t_from, "ddpm_step: t_to must lie in [0, t_from)");
  const double a_from = s.alpha_bar(t_from);
  const double a_to = s.alpha_bar(t_to);
  const double alpha_step = a_from / a_to;
  const double beta = 1.0 - alpha_step;
  PosteriorCoefficients c{};
  c.coef_x0 = std::sqrt(a_to) * beta / (1.0 - a_from);
  c.coef_xt = std::sqrt(alpha_step) * (1.0 - a_to) / (1.0 - a_from);
  c.variance = beta * (1.0 - a_to) / (1.0 - a_from);
  return c;
}

Vec ddpm_step(const Parameterization& p, const Schedule& s, int t_from, int t_to, ConstSpan x_t,
              ConstSpan u, ConstSpan noise, const PrecisionModel& pm, bool high_precision_cast,
              Rng& rng) {
  require_same_size(x_t, u, "ddpm_step");
  require_same_size(x_t, noise, "ddpm_step noise");
  const auto post = ddpm_posterior(s, t_from, t_to);
  const Vec corrupted = inject(pm, u, rng);
  Vec out(x_t.size());

  if (!high_precision_cast && pm.mode == PrecisionMode::bf16_round) {
    // Every intermediate stays on the bfloat16 grid.
    check_well_posed(p, s, t_from);
    const auto a = p.angles(s, t_from);
    const auto r = [](double v) { return round_bf16(v); };
    const double sin_psi = r(a.sin_psi);
    const double sin_phi = r(a.sin_phi);
    const double denom = r(a.denom);
    const double inv_scale = r(1.0 / a.scale);
    const double cx0 = r(post.coef_x0);
    const double cxt = r(post.coef_xt);
    const double sd = r(std::sqrt(post.variance));
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double xt = r(x_t[i]);
      const double un = r(corrupted[i] * inv_scale);
      const double x_hat = r(r(r(sin_psi * xt) - r(sin_phi * un)) / denom);
      const double mean = r(r(cx0 * x_hat) + r(cxt * xt));
      out[i] = r(mean + r(sd * r(noise[i])));
    }
    return out;
  }

  const auto est = recover_x_eps(p, s, t_from, x_t, corrupted);
  const double sd = std::sqrt(post.variance);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = post.coef_x0 * est.x[i] + post.coef_xt * x_t[i];
    if (t_to > 0) out[i] += sd * noise[i];
  }
  return out;
}

TargetVector cfg_combine(const GuidanceConfig& g, const TargetVector& cond,
                         const TargetVector& uncond) {
  require(std::isfinite(g.omega), "cfg_combine: omega must be finite");
  require(cond.kind == uncond.kind, "cfg_combine: parameterization kind mismatch");
  require(cond.step == uncond.step, "cfg_combine: step mismatch");
  require_same_size(cond.values, uncond.values, "cfg_combine");
  // The endpoints return a branch unchanged rather than its rounded blend.
  if (g.omega == 1.0) return cond;
  if (g.omega == 0.0) return uncond;
  TargetVector out{Vec(cond.values.size()), cond.step, cond.kind};
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = uncond.values[i] + g.omega * (cond.values[i] - uncond.values[i]);
  }
  return out;
}

Vec guided_output(const GuidanceConfig& g, const Parameterization& p, const Schedule& s, int t,
                  ConstSpan x_t, ConstSpan cond, ConstSpan uncond) {
  if (g.omega == 1.0) return Vec(cond.begin(), cond.end());
  if (g.omega == 0.0) return Vec(uncond.begin(), uncond.end());
  const Parameterization space =
      g.space == GuidanceSpace::v ? Parameterization::v_pred() : Parameterization::eps_pred();
  TargetVector c{convert(p, space, s, t, x_t, cond), t, space.kind};
  TargetVector u{convert(p, space, s, t, x_t, uncond), t, space.kind};
  const auto combined = cfg_combine(g, c, u);
  return convert(space, p, s, t, x_t, combined.values);
}

std::vector<int> make_step_list(const Schedule& s, int steps, StepSpacing spacing) {
  require(steps >= 1, "make_step_list: steps must be >= 1");
  const int T = s.steps();
  std::vector<int> list;
  list.reserve(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) {
    const double frac = 1.0 - static_cast<double>(i) / steps;
    int t = 0;
    if (spacing == StepSpacing::uniform_t) {
      t = static_cast<int>(std::lround(frac * T));
    } else {
      // Step whose phase is closest to the target angle.
      const double target_phase = frac * s.phase(T);
      int lo = 0, hi = T;
      while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        (s.phase(mid) < target_phase ? lo : hi) = mid;
      }
      t = std::abs(s.phase(lo) - target_phase) <= std::abs(s.phase(hi) - target_phase) ? lo : hi;
    }
    if (list.empty() || t < list.back()) list.push_back(t);
  }
  if (list.back() != 0) list.push_back(0);
  return list;
}

namespace {

void check_step_list(const std::vector<int>& steps, const Schedule& s) {
  require(steps.size() >= 2, "sample_trajectory: step list needs at least two entries");
  require(steps.front() == s.steps(), "sample_trajectory: step list must start at T");
  require(steps.back() == 0, "sample_trajectory: step list must end at 0");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    require(steps[i] < steps[i - 1], "sample_trajectory: step list must be strictly decreasing");
  }
}

}  // namespace

Trajectory sample_trajectory(const Denoiser& model, const Schedule& s, const Parameterization& p,
                             const std::vector<int>& step_list, ConstSpan init_noise,
                             const SamplerConfig& cfg, const std::optional<GuidanceConfig>& guidance,
                             const PrecisionModel& pm, Rng& rng) {
  check_step_list(step_list, s);
  const PrecisionModel exact{};
  Trajectory traj;
  traj.step_list = step_list;
  traj.states.reserve(step_list.size());
  traj.states.emplace_back(init_noise.begin(), init_noise.end());

  for (std::size_t i = 0; i + 1 < step_list.size(); ++i) {
    const int t_from = step_list[i];
    const int t_to = step_list[i + 1];
    const Vec& x_t = traj.states.back();

    Vec u;
    const PrecisionModel* step_pm = &pm;
    if (guidance) {
      Vec cond = model(t_from, x_t, Branch::conditional);
      Vec uncond = model(t_from, x_t, Branch::unconditional);
      require(cond.size() == x_t.size() && uncond.size() == x_t.size(),
              "sample_trajectory: model output dimension mismatch");
      inject_inplace(pm, cond, rng);
      inject_inplace(pm, uncond, rng);
      u = guided_output(*guidance, p, s, t_from, x_t, cond, uncond);
      step_pm = &exact;
    } else {
      u = model(t_from, x_t, Branch::conditional);
      require(u.size() == x_t.size(), "sample_trajectory: model output dimension mismatch");
    }

    Vec next;
    if (cfg.kind == SamplerKind::ddim) {
      next = ddim_step_general(p, s, t_from, t_to, x_t, u, *step_pm, rng);
    } else {
      Vec noise(x_t.size(), 0.0);
      if (t_to > 0) rng.fill_normal(noise);
      next = ddpm_step(p, s, t_from, t_to, x_t, u, noise, *step_pm, cfg.high_precision_cast, rng);
    }
    for (double v : next) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("sample_trajectory: non-finite state at t=" +
                                 std::to_string(t_to));
      }
    }
    traj.states.push_back(std::move(next));
  }
  return traj;
}

void write_trajectories_csv(std::ostream& os, const std::vector<Trajectory>& trajectories) {
  os << "traj_id,t,component_index,value\n";
  char buf[64];
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    const auto& tr = trajectories[id];
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
      for (std::size_t c = 0; c < tr.states[k].size(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", tr.states[k][c]);
        os << id << ',' << tr.step_list[k] << ',' << c << ',' << buf << '\n';
      }
    }
  }
}

}  // namespace angdiff
