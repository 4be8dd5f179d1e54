#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "angdiff/common.hpp"
#include "angdiff/param.hpp"
#include "angdiff/precision.hpp"
#include "angdiff/rng.hpp"
#include "angdiff/schedule.hpp"

namespace angdiff {

enum class GuidanceSpace { v, eps };

std::string to_string(GuidanceSpace space);
GuidanceSpace guidance_space_from_string(std::string_view name);

struct GuidanceConfig {
  double omega = 1.0;
  GuidanceSpace space = GuidanceSpace::v;
};

enum class SamplerKind { ddim, ddpm };
enum class StepSpacing { uniform_t, uniform_phase };

std::string to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(std::string_view name);
std::string to_string(StepSpacing spacing);
StepSpacing step_spacing_from_string(std::string_view name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::ddpm;
  int steps = 100;
  StepSpacing spacing = StepSpacing::uniform_t;
  // Cast the (rounded) model output up before the DDPM posterior. When false
  // and the precision model rounds to bf16, the posterior arithmetic is
  // rounded as well.
  bool high_precision_cast = true;
};

enum class Branch { conditional, unconditional };

// (t, x_t, branch) -> model output under the sampler's parameterization.
// x_t may hold several tokens back to back; every sampler formula is
// elementwise, so a batch is just a longer vector.
using Denoiser = std::function<Vec(int t, ConstSpan x_t, Branch branch)>;

struct Trajectory {
  std::vector<int> step_list;
  std::vector<Vec> states;

  const Vec& final_state() const { return states.back(); }
};

// One deterministic DDIM step from t_from to t_to <= t_from under any
// parameterization:
//
//   x_to = [sin(phi_to - phi_from) u~/r - sin(phi_to - psi) x_t] / sin(psi - phi_from)
//
// where u~ = inject(pm, u).
Vec ddim_step_general(const Parameterization& p, const Schedule& s, int t_from, int t_to,
                      ConstSpan x_t, ConstSpan u, const PrecisionModel& pm, Rng& rng);

// Ancestral step from t_from to t_to < t_from driven by the (x, eps) estimate
// recovered from the model output. Adds `noise` scaled by the posterior std;
// the step into t_to = 0 has zero variance.
Vec ddpm_step(const Parameterization& p, const Schedule& s, int t_from, int t_to, ConstSpan x_t,
              ConstSpan u, ConstSpan noise, const PrecisionModel& pm, bool high_precision_cast,
              Rng& rng);

struct PosteriorCoefficients {
  double coef_x0;
  double coef_xt;
  double variance;
};

PosteriorCoefficients ddpm_posterior(const Schedule& s, int t_from, int t_to);

// uncond + omega (cond - uncond) on matching outputs.
TargetVector cfg_combine(const GuidanceConfig& g, const TargetVector& cond,
                         const TargetVector& uncond);

// Guided model output in the parameterization of the inputs. For eps-space
// guidance both branches are converted to eps, combined, and converted back.
Vec guided_output(const GuidanceConfig& g, const Parameterization& p, const Schedule& s, int t,
                  ConstSpan x_t, ConstSpan cond, ConstSpan uncond);

// Strictly decreasing list from T to 0 with about `steps` intervals.
std::vector<int> make_step_list(const Schedule& s, int steps, StepSpacing spacing);

// Runs the configured sampler over `step_list`, recording every state. With
// guidance, each branch output is corrupted by `pm` before combination, and
// the combination itself runs at full precision.
Trajectory sample_trajectory(const Denoiser& model, const Schedule& s, const Parameterization& p,
                             const std::vector<int>& step_list, ConstSpan init_noise,
                             const SamplerConfig& cfg, const std::optional<GuidanceConfig>& guidance,
                             const PrecisionModel& pm, Rng& rng);

// CSV rows (traj_id, t, component_index, value), with header.
void write_trajectories_csv(std::ostream& os, const std::vector<Trajectory>& trajectories);

}  // namespace angdiff
