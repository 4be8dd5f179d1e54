#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "angdiff/argen.hpp"
#include "angdiff/head.hpp"
#include "angdiff/param.hpp"
#include "angdiff/precision.hpp"
#include "angdiff/sampler.hpp"
#include "angdiff/schedule.hpp"
#include "angdiff/toyspace.hpp"

namespace angdiff {

// ---- injected-error sweep ---------------------------------------------------

enum class SweepModel { truth, bayes };  // exact target, or Gaussian-mixture posterior mean

struct ErrorSweepSettings {
  std::vector<Parameterization> params;
  std::vector<int> ts;
  int samples = 100000;  // tokens per (t, parameterization)
  int step = 10;         // DDIM step t -> max(t - step, 0) for the step-error columns
  PrecisionModel precision;
  SweepModel model = SweepModel::truth;
  std::uint64_t seed = 0;
};

struct ErrorSweepRow {
  int t = 0;
  double alpha_bar = 0.0;
  std::string param_kind;
  double psi_offset = 0.0;
  std::string mode;
  // v-space error e = v(inject(u)) - v(u): predicted and measured E[e^2].
  double theory = 0.0;
  double measured = 0.0;
  double measured_se = 0.0;
  double eps_theory = 0.0;  // delta^2 / alpha_bar
  // E[(v - v_model) e] and its standard error; zero for the exact-target model.
  double cross = 0.0;
  double cross_se = 0.0;
  // One DDIM step t -> t_to: std of the injected state error, its prediction,
  // and the measured std divided by |sin(phi_to - phi_t)|.
  int t_to = 0;
  double step_theory = 0.0;
  double step_measured = 0.0;
  double step_per_unit = 0.0;
};

// Predicted E[e^2] per unit E[(u/r)^2]: delta^2 / sin^2(psi - phi) for
// fixed-delta, a third of that for uniform-delta, 0 for exact. bf16-round
// reports the fixed-delta bound.
double predicted_vspace_error(const Parameterization& p, const Schedule& s, int t,
                              const PrecisionModel& pm);

std::vector<ErrorSweepRow> error_sweep(const Schedule& s, const ToyDataset& ds,
                                       const ErrorSweepSettings& cfg);

// ---- CFG equivalence --------------------------------------------------------

struct CfgDeviation {
  double omega = 1.0;
  std::uint64_t seed = 0;
  double max_abs_dev = 0.0;
};

// Runs the same guided sampler twice from the same noise, once combining in
// v-space and once in eps-space, with the Gaussian-mixture oracle as a
// v-prediction model; returns the largest state difference along the way.
CfgDeviation cfg_trajectory_deviation(const ToyDataset& ds, const Schedule& s, double omega,
                                      std::uint64_t seed, int tokens, const SamplerConfig& sampler,
                                      const PrecisionModel& pm);

// ---- head and argen evaluation ----------------------------------------------

struct HeadEvalSettings {
  std::vector<int> ts;
  int loss_samples = 2000;
  int sample_count = 4000;
  SamplerConfig sampler;
  int bins = 16;
  std::uint64_t seed = 0;
};

struct HeadEval {
  std::vector<int> ts;
  Vec vloss;  // v-space MSE per t under the precision model
  double hist_kl = 0.0;
  Eigen::MatrixXd samples;
};

HeadEval evaluate_head(const HeadParams& hp, const Parameterization& p, const Schedule& s,
                       const ToyDataset& ds, const PrecisionModel& pm, const HeadEvalSettings& cfg);

struct CfgSweepSettings {
  std::vector<double> omegas;
  std::vector<int> labels;  // empty: every dataset label
  int grids_per_label = 64;
  int reference_grids = 128;  // per label
  GenerateConfig generate;
  int bins = 16;
  double mmd_bandwidth = 1.0;
  int mmd_points = 0;  // 0 skips MMD
  std::uint64_t seed = 0;
};

struct CfgSweepPoint {
  double omega = 1.0;
  double hist_kl = 0.0;  // mean over labels of KL(generated || reference)
  double mmd = 0.0;
  Vec per_label_kl;
  std::vector<TokenGrid> grids;
};

struct CfgSweepResult {
  std::vector<int> labels;
  std::vector<CfgSweepPoint> points;
  double null_kl = 0.0;  // reference vs an independent reference draw
  double null_mmd = 0.0;
};

// Label-conditional sample quality across guidance scales. Every omega reuses
// the same per-label generation seeds and reference sets.
CfgSweepResult argen_cfg_sweep(const ArgenModel& model, const ToyDataset& ds, const Schedule& s,
                               const CfgSweepSettings& cfg);

// Whitened tokens of a grid set, d x (grids * n).
Eigen::MatrixXd grid_tokens(const std::vector<TokenGrid>& grids);

}  // namespace angdiff
