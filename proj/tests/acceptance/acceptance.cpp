// Acceptance checks. Each criterion prints one PASS/FAIL line; the process
// exits non-zero if any selected criterion fails.
//
//   acceptance [--criterion N]... [--workdir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "angdiff/argen.hpp"
#include "angdiff/commands.hpp"
#include "angdiff/head.hpp"
#include "angdiff/io.hpp"
#include "angdiff/param.hpp"
#include "angdiff/precision.hpp"
#include "angdiff/sampler.hpp"
#include "angdiff/schedule.hpp"
#include "angdiff/studies.hpp"
#include "angdiff/toyspace.hpp"

#ifndef ANGDIFF_CLI_PATH
#define ANGDIFF_CLI_PATH "angdiff"
#endif

using namespace angdiff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_workdir = "acceptance_work";

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string sci(double v) { return fmt("%.3g", v); }

const Schedule& cosine1000() {
  static const Schedule s = make_schedule(ScheduleKind::cosine, 1000);
  return s;
}

Parameterization random_param(Rng& rng) {
  switch (rng.uniform_int(0, 3)) {
    case 0:
      return Parameterization::eps_pred();
    case 1:
      return Parameterization::x_pred();
    case 2:
      return Parameterization::v_pred();
    default:
      return Parameterization::custom(rng.uniform(-std::numbers::pi, std::numbers::pi), rng.uniform(0.25, 4.0));
  }
}

double norm2(const Vec& a) {
  double s = 0;
  for (double v : a) s += v * v;
  return s;
}

// ---- 1 ----------------------------------------------------------------------

Outcome parameterization_roundtrip() {
  const auto& s = cosine1000();
  Rng rng(101);
  const int cases = 10000, dim = 4;
  double worst = 0.0;
  int done = 0;
  while (done < cases) {
    const auto p = random_param(rng);
    const int t = static_cast<int>(rng.uniform_int(1, s.steps()));
    if (std::abs(p.angles(s, t).denom) < 0.1) continue;
    ++done;
    const Vec x = rng.normal_vec(dim), e = rng.normal_vec(dim);
    const auto r = recover_x_eps(p, s, t, forward_diffuse(s, t, x, e), target(p, s, t, x, e).values);
    double err = 0;
    for (int i = 0; i < dim; ++i) err += (r.x[i] - x[i]) * (r.x[i] - x[i]) + (r.eps[i] - e[i]) * (r.eps[i] - e[i]);
    worst = std::max(worst, std::sqrt(err / (norm2(x) + norm2(e))));
  }
  return {worst < 1e-12, "max relative error " + sci(worst) + " over " + std::to_string(cases) + " cases (< 1e-12)"};
}

// ---- 2 ----------------------------------------------------------------------

Outcome ddim_reduction() {
  const auto& s = cosine1000();
  const PrecisionModel exact;
  Rng rng(202);
  double worst_step = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const int from = static_cast<int>(rng.uniform_int(1, s.steps()));
    const int to = static_cast<int>(rng.uniform_int(0, from - 1));
    const double xt = rng.normal(), eps = rng.normal();
    const double got = ddim_step_general(Parameterization::eps_pred(), s, from, to, Vec{xt}, Vec{eps}, exact, rng)[0];
    const long double af = s.alpha_bar(from), at = s.alpha_bar(to);
    const long double xhat = (xt - std::sqrt(1.0L - af) * eps) / std::sqrt(af);
    const long double want = std::sqrt(at) * xhat + std::sqrt(1.0L - at) * eps;
    worst_step = std::max(worst_step, static_cast<double>(std::abs(got - want) / std::max(1.0L, std::abs(want))));
  }

  // Oracle that knows the clean sample: its prediction is the exact target.
  double worst_traj = 0.0;
  const auto steps = make_step_list(s, 100, StepSpacing::uniform_t);
  SamplerConfig cfg;
  cfg.kind = SamplerKind::ddim;
  cfg.steps = 100;
  for (const auto& p : {Parameterization::eps_pred(), Parameterization::v_pred(), Parameterization::x_pred()}) {
    for (int trial = 0; trial < 200; ++trial) {
      const Vec x = rng.normal_vec(4), init = rng.normal_vec(4);
      const Denoiser oracle = [&](int t, ConstSpan x_t, Branch) {
        const double c = s.cos_phase(t), sn = s.sin_phase(t);
        Vec e(x_t.size());
        for (std::size_t i = 0; i < e.size(); ++i) e[i] = (x_t[i] - c * x[i]) / sn;
        return target(p, s, t, x, e).values;
      };
      const auto tr = sample_trajectory(oracle, s, p, steps, init, cfg, std::nullopt, exact, rng);
      for (std::size_t i = 0; i < x.size(); ++i) worst_traj = std::max(worst_traj, std::abs(tr.final_state()[i] - x[i]));
    }
  }
  return {worst_step < 1e-12 && worst_traj < 1e-9,
          "step relative error " + sci(worst_step) + " (< 1e-12); oracle trajectory end error " + sci(worst_traj) +
              " (< 1e-9)"};
}

// ---- 3, 4 -------------------------------------------------------------------

std::vector<int> strided_ts(int stride, int T) {
  std::vector<int> ts;
  for (int t = stride; t <= T; t += stride) ts.push_back(t);
  return ts;
}

Outcome error_theory() {
  const auto& s = cosine1000();
  const auto ds = ToyDataset::default_gmm2d();
  ErrorSweepSettings cfg;
  cfg.params = {Parameterization::eps_pred()};
  for (int t : strided_ts(10, s.steps())) {
    if (s.alpha_bar(t) >= 1e-4) cfg.ts.push_back(t);
  }
  cfg.samples = 100000;
  cfg.precision.mode = PrecisionMode::fixed_delta;
  cfg.precision.delta_max = 1.0 / 128;
  cfg.seed = 303;
  double worst = 0.0;
  for (const auto& r : error_sweep(s, ds, cfg)) worst = std::max(worst, std::abs(r.measured / r.eps_theory - 1.0));

  cfg.precision.mode = PrecisionMode::bf16_round;
  const auto rows = error_sweep(s, ds, cfg);
  // Least-squares slope of log E[e^2] against log alpha_bar.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    const double lx = std::log(r.alpha_bar), ly = std::log(r.measured);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {worst < 0.05 && std::abs(slope + 1.0) <= 0.1,
          "fixed-delta max relative deviation from delta^2/alpha_bar " + fmt("%.4f", worst) + " over " +
              std::to_string(rows.size()) + " t (< 0.05); bf16 log-log slope " + fmt("%.4f", slope) + " (-1 +- 0.1)"};
}

double max_rel_spread(const Vec& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double worst = 0;
  for (double x : v) worst = std::max(worst, std::abs(x / mean - 1.0));
  return worst;
}

Outcome step_error_scaling() {
  const auto& s = cosine1000();
  const auto ds = ToyDataset::default_gmm2d();
  ErrorSweepSettings cfg;
  cfg.params = {Parameterization::v_pred(), Parameterization::eps_pred()};
  cfg.ts = strided_ts(10, s.steps());
  cfg.samples = 100000;
  cfg.step = 10;
  cfg.precision.mode = PrecisionMode::fixed_delta;
  cfg.seed = 404;
  Vec v_unit, eps_scaled;
  for (const auto& r : error_sweep(s, ds, cfg)) {
    if (r.param_kind == "v") {
      v_unit.push_back(r.step_per_unit);
    } else {
      eps_scaled.push_back(r.step_per_unit * s.cos_phase(r.t));
    }
  }
  const double v_spread = max_rel_spread(v_unit), e_spread = max_rel_spread(eps_scaled);
  return {v_spread <= 0.05 && e_spread <= 0.05,
          "v per-unit-step error max deviation from its mean " + fmt("%.4f", v_spread) +
              "; eps per-unit-step error x cos(phi) max deviation " + fmt("%.4f", e_spread) + " over " +
              std::to_string(v_unit.size()) + " t (<= 0.05)"};
}

// ---- 5 ----------------------------------------------------------------------

Outcome cfg_equivalence() {
  const auto& s = cosine1000();
  const auto ds = ToyDataset::default_gmm2d(true);
  SamplerConfig sampler;
  sampler.kind = SamplerKind::ddim;
  sampler.steps = 100;
  double worst = 0;
  std::string per_omega;
  for (double omega : {0.0, 1.0, 3.0, 10.0}) {
    double w = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      w = std::max(w, cfg_trajectory_deviation(ds, s, omega, seed, 16, sampler, PrecisionModel{}).max_abs_dev);
    }
    per_omega += " omega=" + fmt("%g", omega) + ":" + sci(w);
    worst = std::max(worst, w);
  }
  return {worst < 1e-9, "max accumulated deviation" + per_omega + " (< 1e-9)"};
}

// ---- 6 ----------------------------------------------------------------------

Outcome head_gradients() {
  HeadConfig hc;
  hc.token_dim = 2;
  hc.cond_dim = 4;
  hc.width = 32;
  hc.depth = 2;
  hc.steps = 100;
  Rng rng(606);
  auto hp = HeadParams::init(hc, rng);
  // Move the zero-initialized projections off zero so every layer carries gradient.
  for (double& v : hp.data()) v += 0.1 * rng.normal();
  const int B = 6;
  Eigen::MatrixXd x(2, B), z(4, B), w(2, B);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.normal();
  const std::vector<int> t{1, 13, 50, 50, 99, 100};
  const PrecisionModel exact;
  auto objective = [&](const Eigen::MatrixXd& xx, const Eigen::MatrixXd& zz) {
    return head_forward(hp, xx, t, zz, exact).cwiseProduct(w).sum();
  };
  HeadCache cache;
  head_forward(hp, x, t, z, exact, &cache);
  const auto g = head_backward(hp, cache, w);

  const double h = 1e-5;
  auto rel = [](double a, double f) { return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6}); };
  const auto& L = hp.layout();
  std::vector<std::pair<std::string, Slot>> slots{{"time_embed", L.time_embed}, {"cond_w", L.cond_w},
                                                  {"cond_b", L.cond_b},         {"in_w", L.in_w},
                                                  {"in_b", L.in_b},             {"out_w", L.out_w},
                                                  {"out_b", L.out_b}};
  for (std::size_t b = 0; b < L.blocks.size(); ++b) {
    const auto& bl = L.blocks[b];
    const std::string p = "block" + std::to_string(b) + ".";
    for (auto [n, sl] : {std::pair{"ada_w", bl.ada_w}, {"ada_b", bl.ada_b}, {"lin1_w", bl.lin1_w},
                         {"lin1_b", bl.lin1_b}, {"lin2_w", bl.lin2_w}, {"lin2_b", bl.lin2_b}}) {
      slots.emplace_back(p + n, sl);
    }
  }
  double worst = 0;
  std::string worst_name;
  for (const auto& [name, sl] : slots) {
    for (std::size_t i = sl.offset; i < sl.offset + sl.size(); ++i) {
      const double keep = hp.data()[i];
      hp.data()[i] = keep + h;
      const double up = objective(x, z);
      hp.data()[i] = keep - h;
      const double dn = objective(x, z);
      hp.data()[i] = keep;
      const double r = rel(g.params[i], (up - dn) / (2 * h));
      if (r > worst) {
        worst = r;
        worst_name = name;
      }
    }
  }
  auto input_check = [&](Eigen::MatrixXd& m, const Eigen::MatrixXd& grad, bool is_x, const char* name) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double keep = m(i);
      m(i) = keep + h;
      const double up = is_x ? objective(m, z) : objective(x, m);
      m(i) = keep - h;
      const double dn = is_x ? objective(m, z) : objective(x, m);
      m(i) = keep;
      const double r = rel(grad(i), (up - dn) / (2 * h));
      if (r > worst) {
        worst = r;
        worst_name = name;
      }
    }
  };
  Eigen::MatrixXd xc = x, zc = z;
  input_check(xc, g.x_t, true, "x_t");
  input_check(zc, g.z, false, "z");
  return {worst < 1e-4, "max relative error " + sci(worst) + " (worst tensor " + worst_name + ", h = 1e-5, < 1e-4)"};
}

// ---- 7 ----------------------------------------------------------------------

// Paired head runs; sizes keep all ten runs within the runtime budget on one core.
const std::vector<std::string> kHeadRunSettings{
    "dataset=gmm2d",       "precision_mode=fixed-delta", "delta_max=0.0078125", "width=64",
    "depth=3",             "steps=12000",                "batch=64",            "lr=0.001",
    "warmup=200",          "ema=0.999",                  "log_every=1000",      "eval_params=ema",
    "eval_t_stride=10",    "eval_samples=500",           "sample_count=4000",   "sampler=ddim",
    "sample_steps=100",    "bins=16"};

struct HeadRun {
  double hist_kl = 0;
  double top_decile_vloss = 0;
};

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

HeadRun run_head(const std::string& param, std::uint64_t seed) {
  const fs::path out = g_workdir / ("c7_" + param + "_" + std::to_string(seed));
  fs::remove_all(out);
  auto sets = kHeadRunSettings;
  sets.push_back("param=" + param);
  const auto cfg = make_config("train-head", std::nullopt, sets, static_cast<std::int64_t>(seed), out.string());
  const auto summary = run_command(cfg);
  HeadRun r;
  r.hist_kl = summary.at("hist_kl").get<double>();
  const int T = static_cast<int>(cfg.get_int("T"));
  double sum = 0;
  int n = 0;
  for (const auto& row : read_csv_rows(out / "vloss_by_t.csv")) {
    if (std::stoi(row[0]) > T - T / 10) {
      sum += std::stod(row[2]);
      ++n;
    }
  }
  r.top_decile_vloss = sum / n;
  return r;
}

Outcome vpred_vs_epspred() {
  int loss_wins = 0, kl_wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto v = run_head("v", seed), e = run_head("eps", seed);
    loss_wins += e.top_decile_vloss > v.top_decile_vloss;
    kl_wins += v.hist_kl <= e.hist_kl;
    detail += " [seed " + std::to_string(seed) + ": top-decile vloss v " + sci(v.top_decile_vloss) + " eps " +
              sci(e.top_decile_vloss) + ", hist_kl v " + fmt("%.4f", v.hist_kl) + " eps " +
              fmt("%.4f", e.hist_kl) + "]";
  }
  return {loss_wins >= 4 && kl_wins >= 4, "(a) eps top-decile v-space loss above v in " + std::to_string(loss_wins) +
                                              "/5 seeds; (b) v hist_kl <= eps in " + std::to_string(kl_wins) +
                                              "/5 seeds (need >= 4 each)" + detail};
}

// ---- 8 ----------------------------------------------------------------------

Outcome mask_statistics() {
  Rng rng(808);
  const int draws = 100000;
  double sum = 0, lo = 2, hi = -1;
  for (int i = 0; i < draws; ++i) {
    const double r = draw_mask_ratio(MaskSchedule::stage1(), rng);
    sum += r;
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  const double mean = sum / draws;
  // Support is [0.7, 1]: nothing outside, and both ends are approached.
  const bool support = lo >= 0.7 && hi <= 1.0 && lo - 0.7 < 1e-3 && 1.0 - hi < 1e-3;
  int zero_masked = 0, min_count = 1 << 30;
  for (int n : {1, 4, 16}) {
    for (int i = 0; i < draws; ++i) {
      const auto m = draw_mask(MaskSchedule::stage2(), n, rng);
      const int c = static_cast<int>(std::count(m.begin(), m.end(), 1));
      zero_masked += c == 0;
      min_count = std::min(min_count, c);
    }
  }
  return {mean >= 0.845 && mean <= 0.855 && support && zero_masked == 0,
          "stage-1 mean ratio " + fmt("%.5f", mean) + " in [0.845, 0.855], range [" + fmt("%.6f", lo) + ", " +
              fmt("%.6f", hi) + "]; stage-2 draws with zero masked tokens: " + std::to_string(zero_masked) +
              " of " + std::to_string(3 * draws)};
}

// ---- 9 ----------------------------------------------------------------------

Outcome ema_closed_form() {
  HeadConfig hc;
  hc.width = 16;
  hc.depth = 1;
  hc.steps = 10;
  Rng rng(909);
  const auto live = HeadParams::init(hc, rng);
  auto start = HeadParams::init(hc, rng);
  for (double& v : start.data()) v += rng.normal();
  double worst = 0;
  for (double m : {0.9, 0.999, 0.9999}) {
    EmaState e{start, m};
    for (int n = 1; n <= 5000; ++n) {
      ema_update(e, live);
      if (n % 1000 != 0 && n != 1) continue;
      const long double mn = std::pow(static_cast<long double>(m), n);
      for (std::size_t i = 0; i < live.data().size(); ++i) {
        const long double want = mn * start.data()[i] + (1.0L - mn) * live.data()[i];
        worst = std::max(worst, static_cast<double>(std::abs(e.shadow.data()[i] - want)));
      }
    }
  }
  return {worst < 1e-10, "max deviation from m^n s0 + (1 - m^n) live " + sci(worst) + " (< 1e-10)"};
}

// ---- 10 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + ANGDIFF_CLI_PATH + "\" " + args + " > /dev/null";
  return std::system(cmd.c_str());
}

Outcome cli_determinism() {
  const fs::path base = g_workdir / "c10";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path argen_ckpt = base / "train-argen_a" / "final.ckpt";
  const std::vector<std::pair<std::string, std::string>> runs{
      {"error-sweep", "--set samples=5000 --set t_stride=50"},
      {"ddim-verify", "--set samples=500"},
      {"cfg-check", "--set seeds=3"},
      {"train-head", "--set steps=200 --set width=32 --set depth=2 --set batch=64 --set log_every=50 "
                     "--set eval_samples=200 --set eval_t_stride=100 --set sample_count=1000 --set sample_steps=20"},
      {"train-argen", "--set stage1_steps=20 --set stage2_steps=20 --set cond_width=32 --set cond_dim=32 "
                      "--set cond_layers=1 --set head_width=32 --set head_depth=2 --set batch_grids=8 --set log_every=10"},
      {"sample-eval", "--set checkpoint=" + argen_ckpt.string() +
                          " --set omegas=1,3 --set eval_labels=0,1 --set grids_per_label=63 --set reference_grids=63 "
                          "--set sample_steps=10 --set mmd_points=100"},
  };
  int identical = 0, compared = 0;
  std::string mismatches;
  for (const auto& [command, sets] : runs) {
    for (const char* tag : {"a", "b"}) {
      const fs::path out = base / (command + "_" + tag);
      const int rc = run_cli(command + " --seed 7 --out " + out.string() + " " + sets);
      if (rc != 0) return {false, command + " exited with status " + std::to_string(rc)};
    }
    // Primary outputs: every CSV plus the JSON reports; config.json differs
    // only by out_dir and is excluded.
    for (const auto& entry : fs::directory_iterator(base / (command + "_a"))) {
      const auto name = entry.path().filename().string();
      if (name == "config.json") continue;
      if (!(name.ends_with(".csv") || name.ends_with(".json"))) continue;
      ++compared;
      if (slurp(entry.path()) == slurp(base / (command + "_b") / name)) {
        ++identical;
      } else {
        mismatches += " " + command + "/" + name;
      }
    }
  }
  return {compared > 0 && identical == compared,
          std::to_string(identical) + "/" + std::to_string(compared) + " output files byte-identical across reruns of " +
              std::to_string(runs.size()) + " commands" + (mismatches.empty() ? "" : "; differing:" + mismatches)};
}

// ---- 11 ---------------------------------------------------------------------

const std::vector<std::string> kArgenTrainSettings{
    "dataset=correlated-grid", "grid_n=16",     "grid_modes=8",      "cond_width=48",  "cond_layers=1",
    "cond_dim=48",             "ffn_mult=2",    "head_width=64",     "head_depth=2",   "stage1_steps=1500",
    "stage2_steps=1500",       "stage1_K=1",    "stage2_K=4",        "batch_grids=16", "uncond_prob=0.1",
    "lr=0.001",                "warmup=100",    "ema=0.999",         "log_every=500"};
const std::vector<std::string> kArgenEvalSettings{
    "use_ema=true",      "omegas=1,1.5,2,3,5,10", "guidance_space=v", "eval_labels=0,2,4,6",
    "grids_per_label=64", "reference_grids=128",  "tokens_per_step=4", "sampler=ddpm",
    "sample_steps=50",   "bins=16",               "mmd_points=0"};

Outcome cfg_sweep() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const fs::path train = g_workdir / ("c11_train_" + std::to_string(seed));
    const fs::path eval = g_workdir / ("c11_eval_" + std::to_string(seed));
    fs::remove_all(train);
    fs::remove_all(eval);
    run_command(make_config("train-argen", std::nullopt, kArgenTrainSettings, static_cast<std::int64_t>(seed),
                            train.string()));
    auto sets = kArgenEvalSettings;
    sets.push_back("checkpoint=" + (train / "final.ckpt").string());
    const auto summary =
        run_command(make_config("sample-eval", std::nullopt, sets, static_cast<std::int64_t>(seed), eval.string()));
    double at_one = NAN, best = INFINITY, best_omega = NAN;
    for (const auto& p : summary.at("points")) {
      const double w = p.at("omega").get<double>(), kl = p.at("hist_kl").get<double>();
      if (w == 1.0) at_one = kl;
      if (w > 1.0 && w <= 10.0 && kl < best) {
        best = kl;
        best_omega = w;
      }
    }
    wins += best < at_one;
    detail += " [seed " + std::to_string(seed) + ": omega=1 " + fmt("%.4f", at_one) + ", best omega=" +
              fmt("%g", best_omega) + " " + fmt("%.4f", best) + "]";
  }
  return {wins >= 4, "best guided hist_kl below omega=1 in " + std::to_string(wins) + "/5 seeds (need >= 4)" + detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"angdiff acceptance checks"};
  std::vector<int> selected;
  std::string workdir = g_workdir.string();
  app.add_option("--criterion", selected, "criterion number (repeatable; default all)")->check(CLI::Range(1, 11));
  app.add_option("--workdir", workdir, "scratch directory for command outputs");
  CLI11_PARSE(app, argc, argv);
  g_workdir = workdir;
  fs::create_directories(g_workdir);

  const std::vector<Criterion> all{
      {1, "parameterization round-trip", parameterization_roundtrip},
      {2, "general DDIM reduction", ddim_reduction},
      {3, "numerical-error theory", error_theory},
      {4, "per-unit-step error scaling", step_error_scaling},
      {5, "CFG equivalence", cfg_equivalence},
      {6, "head gradient check", head_gradients},
      {7, "v-pred vs eps-pred heads", vpred_vs_epspred},
      {8, "mask-schedule statistics", mask_statistics},
      {9, "EMA closed form", ema_closed_form},
      {10, "end-to-end determinism", cli_determinism},
      {11, "CFG sweep", cfg_sweep},
  };
  const std::set<int> want(selected.begin(), selected.end());
  bool ok = true;
  for (const auto& c : all) {
    if (!want.empty() && !want.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-30s %s  %s (%.1f s)\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                secs);
    std::fflush(stdout);
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
