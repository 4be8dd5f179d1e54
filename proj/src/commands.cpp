#include "angdiff/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "angdiff/argen.hpp"
#include "angdiff/head.hpp"
#include "angdiff/io.hpp"
#include "angdiff/studies.hpp"

namespace angdiff {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, nlohmann::json>& defaults_table() {
  static const std::map<std::string, nlohmann::json> table = {
      {"error-sweep",
       {{"schedule", "cosine"},
        {"T", 1000},
        {"params", "eps,v,x"},
        {"psi_offsets", ""},
        {"t_stride", 10},
        {"samples", 100000},
        {"step", 10},
        {"model", "true"},
        {"precision_mode", "fixed-delta"}}},
      {"ddim-verify",
       {{"schedule", "cosine"},
        {"T", 1000},
        {"samples", 10000},
        {"dim", 4},
        {"steps", 100},
        {"min_denominator", 0.1}}},
      {"cfg-check",
       {{"schedule", "cosine"},
        {"T", 1000},
        {"omegas", "0,1,3,10"},
        {"seeds", 20},
        {"tokens", 16},
        {"steps", 100},
        {"sampler", "ddim"},
        {"report_bf16", true}}},
      {"train-head",
       {{"dataset", "gmm2d"},
        {"param", "v"},
        {"psi_offset", 0.0},
        {"width", 128},
        {"depth", 4},
        {"T", 1000},
        {"schedule", "cosine"},
        {"steps", 20000},
        {"batch", 256},
        {"K", 1},
        {"lr", 1e-3},
        {"weight_decay", 1e-4},
        {"warmup", 0},
        {"ema", 0.9999},
        {"log_every", 500},
        {"t_buckets", 10},
        {"eval_params", "ema"},
        {"eval_t_stride", 10},
        {"eval_samples", 2000},
        {"sample_count", 4000},
        {"sampler", "ddpm"},
        {"sample_steps", 100},
        {"bins", 16}}},
      {"train-argen",
       {{"dataset", "correlated-grid"},
        {"grid_n", 16},
        {"grid_modes", 8},
        {"param", "v"},
        {"cond_width", 128},
        {"cond_layers", 2},
        {"cond_dim", 128},
        {"ffn_mult", 2},
        {"head_width", 128},
        {"head_depth", 4},
        {"T", 1000},
        {"schedule", "cosine"},
        {"stage1_steps", 2000},
        {"stage2_steps", 2000},
        {"stage1_K", 1},
        {"stage2_K", 4},
        {"batch_grids", 32},
        {"uncond_prob", 0.1},
        {"lr", 1e-3},
        {"weight_decay", 1e-4},
        {"warmup", 0},
        {"ema", 0.9999},
        {"log_every", 100},
        {"t_buckets", 10},
        {"ratio_buckets", 10},
        {"resume_from", ""}}},
      {"sample-eval",
       {{"checkpoint", ""},
        {"use_ema", true},
        {"omegas", "1,1.5,2,3,5"},
        {"guidance_space", "v"},
        {"eval_labels", ""},
        {"grids_per_label", 64},
        {"reference_grids", 128},
        {"tokens_per_step", 4},
        {"sampler", "ddpm"},
        {"sample_steps", 100},
        {"high_precision_cast", true},
        {"sample_count", 4000},
        {"bins", 16},
        {"mmd_bandwidth", 1.0},
        {"mmd_points", 1000}}},
  };
  return table;
}

PrecisionModel precision_from(const ExperimentConfig& cfg) {
  PrecisionModel pm;
  pm.mode = precision_mode_from_string(cfg.get_string("precision_mode"));
  pm.delta_max = cfg.get_double("delta_max");
  pm.seed = cfg.get_seed();
  validate(pm);
  return pm;
}

Schedule schedule_from(const ExperimentConfig& cfg) {
  const auto T = cfg.get_int("T");
  require(T >= 1, "T must be >= 1");
  return make_schedule(schedule_kind_from_string(cfg.get_string("schedule")), static_cast<int>(T));
}

Parameterization param_from(const std::string& kind, double psi_offset) {
  const ParamKind k = param_kind_from_string(kind);
  if (k == ParamKind::custom) return Parameterization::custom(psi_offset);
  return Parameterization::from_kind(k);
}

int positive_int(const ExperimentConfig& cfg, const std::string& key, int min = 1) {
  const auto v = cfg.get_int(key);
  if (v < min || v > 1'000'000'000) {
    throw std::invalid_argument("key '" + key + "' must be >= " + std::to_string(min));
  }
  return static_cast<int>(v);
}

SamplerConfig sampler_from(const ExperimentConfig& cfg, const std::string& steps_key) {
  SamplerConfig sc;
  sc.kind = sampler_kind_from_string(cfg.get_string("sampler"));
  sc.steps = positive_int(cfg, steps_key);
  if (cfg.values().contains("high_precision_cast")) sc.high_precision_cast = cfg.get_bool("high_precision_cast");
  return sc;
}

std::string csv_preamble(const ExperimentConfig& cfg) {
  return "# config_hash=" + cfg.hash() + "\n# command=" + cfg.command() + "\n";
}

class OutDir {
 public:
  explicit OutDir(const ExperimentConfig& cfg) : cfg_(cfg), dir_(cfg.get_string("out_dir")) {
    fs::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void csv(const std::string& name, const std::string& body) const {
    write_text_file(path(name), csv_preamble(cfg_) + body);
  }
  void json(const std::string& name, const nlohmann::json& j) const {
    write_text_file(path(name), j.dump(2) + "\n");
  }

 private:
  const ExperimentConfig& cfg_;
  fs::path dir_;
};

nlohmann::json suite(const std::string& name, double max_abs_err, double tol) {
  return {{"suite", name}, {"max_abs_err", max_abs_err}, {"tolerance", tol},
          {"pass", max_abs_err < tol}};
}

nlohmann::json report(const ExperimentConfig& cfg, const nlohmann::json& suites) {
  bool pass = true;
  for (const auto& s : suites) {
    if (s.at("pass").is_boolean() && !s.at("pass").get<bool>()) pass = false;
  }
  return {{"command", cfg.command()}, {"config_hash", cfg.hash()}, {"suites", suites}, {"pass", pass}};
}

// ---- error-sweep ------------------------------------------------------------

nlohmann::json cmd_error_sweep(const ExperimentConfig& cfg, const OutDir& out) {
  const Schedule s = schedule_from(cfg);
  ErrorSweepSettings st;
  for (const auto& k : cfg.get_strings("params")) {
    if (param_kind_from_string(k) != ParamKind::custom) st.params.push_back(param_from(k, 0.0));
  }
  for (double off : cfg.get_doubles("psi_offsets")) st.params.push_back(Parameterization::custom(off));
  require(!st.params.empty(), "error-sweep: no parameterizations selected");
  const int stride = positive_int(cfg, "t_stride");
  for (int t = stride; t <= s.steps(); t += stride) st.ts.push_back(t);
  if (st.ts.empty() || st.ts.back() != s.steps()) st.ts.push_back(s.steps());
  st.samples = positive_int(cfg, "samples", 2);
  st.step = positive_int(cfg, "step");
  st.precision = precision_from(cfg);
  const std::string model = cfg.get_string("model");
  require(model == "true" || model == "bayes", "error-sweep: model must be 'true' or 'bayes'");
  st.model = model == "bayes" ? SweepModel::bayes : SweepModel::truth;
  st.seed = cfg.get_seed();

  const auto rows = error_sweep(s, ToyDataset::default_gmm2d(), st);
  std::ostringstream os;
  os << "t,alpha_bar,theory,measured,param_kind,mode,psi_offset,measured_se,eps_theory,cross,cross_se,"
        "t_to,step_theory,step_measured,step_per_unit\n";
  for (const auto& r : rows) {
    os << r.t << ',' << format_double(r.alpha_bar) << ',' << format_double(r.theory) << ','
       << format_double(r.measured) << ',' << r.param_kind << ',' << r.mode << ','
       << format_double(r.psi_offset) << ',' << format_double(r.measured_se) << ','
       << format_double(r.eps_theory) << ',' << format_double(r.cross) << ','
       << format_double(r.cross_se) << ',' << r.t_to << ',' << format_double(r.step_theory) << ','
       << format_double(r.step_measured) << ',' << format_double(r.step_per_unit) << '\n';
  }
  out.csv("error_sweep.csv", os.str());
  return {{"rows", rows.size()}, {"file", "error_sweep.csv"}};
}

// ---- ddim-verify ------------------------------------------------------------

nlohmann::json cmd_ddim_verify(const ExperimentConfig& cfg, const OutDir& out) {
  const Schedule s = schedule_from(cfg);
  const int N = positive_int(cfg, "samples");
  const int d = positive_int(cfg, "dim");
  const double min_den = cfg.get_double("min_denominator");
  const PrecisionModel exact{};
  Rng root(cfg.get_seed());
  const int T = s.steps();
  nlohmann::json suites = nlohmann::json::array();

  {  // recovery of (x, eps) from (x_t, u)
    Rng rng = root.split(1);
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
      const int t = static_cast<int>(rng.uniform_int(1, T));
      Parameterization p;
      const int which = static_cast<int>(rng.uniform_int(0, 3));
      if (which < 3) {
        p = Parameterization::from_kind(static_cast<ParamKind>(which));
        if (std::abs(p.angles(s, t).denom) < min_den) continue;
      } else {
        do {
          p = Parameterization::custom(rng.uniform(-std::numbers::pi, std::numbers::pi), rng.uniform(0.5, 2.0));
        } while (std::abs(p.angles(s, t).denom) < min_den);
      }
      const Vec x = rng.normal_vec(static_cast<std::size_t>(d));
      const Vec e = rng.normal_vec(static_cast<std::size_t>(d));
      const Vec xt = forward_diffuse(s, t, x, e);
      const auto u = target(p, s, t, x, e);
      const auto r = recover_x_eps(p, s, t, xt, u.values);
      double nx = 0, ne = 0, dx = 0, de = 0;
      for (int k = 0; k < d; ++k) {
        nx += x[k] * x[k];
        ne += e[k] * e[k];
        dx += (r.x[k] - x[k]) * (r.x[k] - x[k]);
        de += (r.eps[k] - e[k]) * (r.eps[k] - e[k]);
      }
      worst = std::max({worst, std::sqrt(dx / nx), std::sqrt(de / ne)});
    }
    auto j = suite("param_roundtrip", worst, 1e-12);
    j["measure"] = "relative";
    suites.push_back(j);
  }

  {  // psi = pi/2 general step vs the direct eps-prediction DDIM update
    Rng rng = root.split(2);
    const auto p = Parameterization::eps_pred();
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
      const int t_from = static_cast<int>(rng.uniform_int(1, T));
      const int t_to = static_cast<int>(rng.uniform_int(0, t_from - 1));
      const Vec xt = rng.normal_vec(static_cast<std::size_t>(d));
      const Vec eps = rng.normal_vec(static_cast<std::size_t>(d));
      const Vec got = ddim_step_general(p, s, t_from, t_to, xt, eps, exact, rng);
      const double ab_from = s.alpha_bar(t_from), ab_to = s.alpha_bar(t_to);
      for (int k = 0; k < d; ++k) {
        const double ref = std::sqrt(ab_to) * (xt[k] - std::sqrt(1 - ab_from) * eps[k]) / std::sqrt(ab_from) +
                           std::sqrt(1 - ab_to) * eps[k];
        worst = std::max(worst, std::abs(got[k] - ref) / std::max(1.0, std::abs(ref)));
      }
    }
    suites.push_back(suite("ddim_eps_reduction", worst, 1e-12));
  }

  {  // oracle denoiser that knows x: DDIM lands on x
    Rng rng = root.split(3);
    double worst = 0.0;
    const auto steps = make_step_list(s, positive_int(cfg, "steps"), StepSpacing::uniform_t);
    const SamplerConfig sc{SamplerKind::ddim, positive_int(cfg, "steps"), StepSpacing::uniform_t, true};
    for (auto kind : {ParamKind::eps, ParamKind::x, ParamKind::v}) {
      const auto p = Parameterization::from_kind(kind);
      for (int trial = 0; trial < 20; ++trial) {
        const Vec x = rng.normal_vec(static_cast<std::size_t>(d));
        Denoiser oracle = [&](int t, ConstSpan x_t, Branch) {
          Vec e(x_t.size());
          const double c = s.cos_phase(t), sn = s.sin_phase(t);
          for (std::size_t k = 0; k < e.size(); ++k) e[k] = (x_t[k] - c * x[k]) / sn;
          return target(p, s, t, x, e).values;
        };
        const Vec init = rng.normal_vec(static_cast<std::size_t>(d));
        const auto traj = sample_trajectory(oracle, s, p, steps, init, sc, std::nullopt, exact, rng);
        for (int k = 0; k < d; ++k) worst = std::max(worst, std::abs(traj.final_state()[k] - x[k]));
      }
    }
    suites.push_back(suite("oracle_trajectory", worst, 1e-9));
  }

  {  // convert(p, p) is the identity
    Rng rng = root.split(4);
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
      const int t = static_cast<int>(rng.uniform_int(1, T));
      const auto p = Parameterization::from_kind(static_cast<ParamKind>(rng.uniform_int(0, 2)));
      if (std::abs(p.angles(s, t).denom) < min_den) continue;
      const Vec xt = rng.normal_vec(static_cast<std::size_t>(d));
      const Vec u = rng.normal_vec(static_cast<std::size_t>(d));
      const Vec back = convert(p, p, s, t, xt, u);
      for (int k = 0; k < d; ++k) worst = std::max(worst, std::abs(back[k] - u[k]));
    }
    suites.push_back(suite("identity_convert", worst, 1e-15));
  }

  {  // fixed-delta step error vs |sin(dphi) / sin(psi - phi)| delta |u / r|
    Rng rng = root.split(5);
    PrecisionModel pm;
    pm.mode = PrecisionMode::fixed_delta;
    pm.delta_max = cfg.get_double("delta_max");
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
      const int t_from = static_cast<int>(rng.uniform_int(1, T));
      const int t_to = static_cast<int>(rng.uniform_int(0, t_from - 1));
      Parameterization p = Parameterization::custom(rng.uniform(-std::numbers::pi, std::numbers::pi), rng.uniform(0.5, 2.0));
      if (std::abs(p.angles(s, t_from).denom) < min_den) continue;
      const Vec xt = rng.normal_vec(static_cast<std::size_t>(d));
      const Vec u = rng.normal_vec(static_cast<std::size_t>(d));
      const Vec a = ddim_step_general(p, s, t_from, t_to, xt, u, pm, rng);
      const Vec b = ddim_step_general(p, s, t_from, t_to, xt, u, exact, rng);
      const auto ang = p.angles(s, t_from);
      const double coef = std::abs(std::sin(s.phase(t_to) - s.phase(t_from)) / ang.denom) * pm.delta_max;
      for (int k = 0; k < d; ++k) {
        worst = std::max(worst, std::abs(std::abs(a[k] - b[k]) - coef * std::abs(u[k] / ang.scale)));
      }
    }
    suites.push_back(suite("error_decomposition", worst, 1e-10));
  }

  const auto rep = report(cfg, suites);
  out.json("ddim_verify.json", rep);
  return rep;
}

// ---- cfg-check --------------------------------------------------------------

nlohmann::json cmd_cfg_check(const ExperimentConfig& cfg, const OutDir& out) {
  const Schedule s = schedule_from(cfg);
  const auto omegas = cfg.get_doubles("omegas");
  require(!omegas.empty(), "cfg-check: empty omega list");
  const int seeds = positive_int(cfg, "seeds");
  const int tokens = positive_int(cfg, "tokens");
  SamplerConfig sc = sampler_from(cfg, "steps");
  const auto ds = ToyDataset::default_gmm2d(true);
  const PrecisionModel pm = precision_from(cfg);
  const std::uint64_t root = cfg.get_seed();

  nlohmann::json suites = nlohmann::json::array();
  std::ostringstream os;
  os << "omega,seed,mode,max_abs_dev\n";
  auto run = [&](const PrecisionModel& mode_pm, bool asserted) {
    for (double omega : omegas) {
      double worst = 0.0;
      for (int k = 0; k < seeds; ++k) {
        const auto seed = stream_seed(root, static_cast<std::uint64_t>(k));
        const auto dev = cfg_trajectory_deviation(ds, s, omega, seed, tokens, sc, mode_pm);
        worst = std::max(worst, dev.max_abs_dev);
        os << format_double(omega) << ',' << k << ',' << to_string(mode_pm.mode) << ','
           << format_double(dev.max_abs_dev) << '\n';
      }
      auto j = suite("cfg_equivalence_" + to_string(mode_pm.mode) + "_omega_" + format_double(omega),
                     worst, 1e-9);
      j["omega"] = omega;
      j["mode"] = to_string(mode_pm.mode);
      if (!asserted) {
        j["pass"] = nullptr;
        j.erase("tolerance");
      }
      suites.push_back(j);
    }
  };
  run(pm, pm.mode == PrecisionMode::exact);
  if (cfg.get_bool("report_bf16") && pm.mode != PrecisionMode::bf16_round) {
    PrecisionModel bf = pm;
    bf.mode = PrecisionMode::bf16_round;
    run(bf, false);
  }
  out.csv("cfg_check.csv", os.str());
  const auto rep = report(cfg, suites);
  out.json("cfg_check.json", rep);
  return rep;
}

// ---- train-head -------------------------------------------------------------

ToyDataset head_dataset(const std::string& name) {
  switch (dataset_kind_from_string(name)) {
    case DatasetKind::gmm2d:
      return ToyDataset::default_gmm2d();
    case DatasetKind::checkerboard:
      return ToyDataset::checkerboard();
    case DatasetKind::correlated_grid:
      break;
  }
  throw std::invalid_argument("train-head: dataset must be gmm2d or checkerboard");
}

nlohmann::json cmd_train_head(const ExperimentConfig& cfg, const OutDir& out) {
  const auto ds = head_dataset(cfg.get_string("dataset"));
  HeadTrainConfig tc;
  tc.head.token_dim = ds.dim();
  tc.head.cond_dim = 0;
  tc.head.width = positive_int(cfg, "width");
  tc.head.depth = positive_int(cfg, "depth", 0);
  tc.head.steps = positive_int(cfg, "T");
  tc.param = param_from(cfg.get_string("param"), cfg.get_double("psi_offset"));
  tc.schedule_kind = schedule_kind_from_string(cfg.get_string("schedule"));
  tc.steps = positive_int(cfg, "steps");
  tc.batch = positive_int(cfg, "batch");
  tc.timestep_samples = positive_int(cfg, "K");
  tc.optimizer.lr = cfg.get_double("lr");
  tc.optimizer.weight_decay = cfg.get_double("weight_decay");
  tc.optimizer.warmup_steps = positive_int(cfg, "warmup", 0);
  tc.ema_momentum = cfg.get_double("ema");
  tc.log_every = positive_int(cfg, "log_every");
  tc.t_buckets = positive_int(cfg, "t_buckets");
  tc.precision = precision_from(cfg);
  tc.seed = cfg.get_seed();
  const std::string eval_params = cfg.get_string("eval_params");
  require(eval_params == "ema" || eval_params == "live", "train-head: eval_params must be ema or live");

  const auto res = train_head(tc, ds);
  const Schedule s = make_schedule(tc.schedule_kind, tc.head.steps);

  std::ostringstream curve;
  write_loss_curve_csv(curve, res.curve);
  out.csv("loss_curve.csv", curve.str());

  const nlohmann::json extra = {{"dataset", ds.manifest()},
                                {"param", tc.param.to_json()},
                                {"schedule", to_string(tc.schedule_kind)}};
  write_checkpoint(out.path("head_live.ckpt"), head_checkpoint(res.params, tc.steps, extra));
  write_checkpoint(out.path("head_ema.ckpt"), head_checkpoint(res.ema.shadow, tc.steps, extra));

  HeadEvalSettings es;
  for (int t = positive_int(cfg, "eval_t_stride"); t <= s.steps(); t += positive_int(cfg, "eval_t_stride")) {
    es.ts.push_back(t);
  }
  if (es.ts.empty() || es.ts.back() != s.steps()) es.ts.push_back(s.steps());
  es.loss_samples = positive_int(cfg, "eval_samples");
  es.sample_count = positive_int(cfg, "sample_count");
  es.sampler = sampler_from(cfg, "sample_steps");
  es.bins = positive_int(cfg, "bins", 8);
  es.seed = stream_seed(tc.seed, streams::kEval);
  const HeadParams& eval_hp = eval_params == "ema" ? res.ema.shadow : res.params;
  const auto ev = evaluate_head(eval_hp, tc.param, s, ds, tc.precision, es);

  std::ostringstream vl;
  vl << "t,alpha_bar,vloss\n";
  for (std::size_t i = 0; i < ev.ts.size(); ++i) {
    vl << ev.ts[i] << ',' << format_double(s.alpha_bar(ev.ts[i])) << ',' << format_double(ev.vloss[i]) << '\n';
  }
  out.csv("vloss_by_t.csv", vl.str());

  std::ostringstream sm;
  sm << "sample_id,component,value\n";
  for (Eigen::Index j = 0; j < ev.samples.cols(); ++j) {
    for (Eigen::Index c = 0; c < ev.samples.rows(); ++c) {
      sm << j << ',' << c << ',' << format_double(ev.samples(c, j)) << '\n';
    }
  }
  out.csv("samples.csv", sm.str());

  double final_loss = 0.0;
  for (const auto& r : res.curve) {
    if (r.t_bucket == -1) final_loss = r.mse;
  }
  const nlohmann::json metrics = {{"command", cfg.command()},
                                  {"config_hash", cfg.hash()},
                                  {"final_train_mse", final_loss},
                                  {"hist_kl", ev.hist_kl},
                                  {"eval_params", eval_params}};
  out.json("metrics.json", metrics);
  return metrics;
}

// ---- train-argen ------------------------------------------------------------

nlohmann::json cmd_train_argen(const ExperimentConfig& cfg, const OutDir& out) {
  require(dataset_kind_from_string(cfg.get_string("dataset")) == DatasetKind::correlated_grid,
          "train-argen: dataset must be correlated-grid");
  CorrelatedGridSpec gs;
  gs.n = positive_int(cfg, "grid_n");
  gs.modes = positive_int(cfg, "grid_modes");
  const auto ds = ToyDataset::correlated_grid(gs);

  ArgenTrainConfig tc;
  tc.conditioner.token_dim = ds.dim();
  tc.conditioner.positions = gs.n;
  tc.conditioner.num_labels = ds.num_labels();
  tc.conditioner.width = positive_int(cfg, "cond_width");
  tc.conditioner.layers = positive_int(cfg, "cond_layers", 0);
  tc.conditioner.cond_dim = positive_int(cfg, "cond_dim");
  tc.conditioner.ffn_mult = positive_int(cfg, "ffn_mult");
  tc.head.token_dim = ds.dim();
  tc.head.cond_dim = tc.conditioner.cond_dim;
  tc.head.width = positive_int(cfg, "head_width");
  tc.head.depth = positive_int(cfg, "head_depth", 0);
  tc.head.steps = positive_int(cfg, "T");
  tc.param = param_from(cfg.get_string("param"), 0.0);
  tc.schedule_kind = schedule_kind_from_string(cfg.get_string("schedule"));
  tc.stage1 = {MaskSchedule::stage1(), positive_int(cfg, "stage1_steps", 0), positive_int(cfg, "stage1_K")};
  tc.stage2 = {MaskSchedule::stage2(), positive_int(cfg, "stage2_steps", 0), positive_int(cfg, "stage2_K")};
  tc.batch_grids = positive_int(cfg, "batch_grids");
  tc.uncond_prob = cfg.get_double("uncond_prob");
  tc.optimizer.lr = cfg.get_double("lr");
  tc.optimizer.weight_decay = cfg.get_double("weight_decay");
  tc.optimizer.warmup_steps = positive_int(cfg, "warmup", 0);
  tc.ema_momentum = cfg.get_double("ema");
  tc.log_every = positive_int(cfg, "log_every");
  tc.t_buckets = positive_int(cfg, "t_buckets");
  tc.ratio_buckets = positive_int(cfg, "ratio_buckets");
  tc.precision = precision_from(cfg);
  tc.seed = cfg.get_seed();

  const nlohmann::json extra = {{"dataset", ds.manifest()},
                                {"param", tc.param.to_json()},
                                {"schedule", to_string(tc.schedule_kind)}};
  std::vector<LossCurveRow> curve;
  std::vector<RatioCurveRow> ratio_curve;
  const std::string resume = cfg.get_string("resume_from");
  ArgenTrainResult stage2 = [&] {
    if (!resume.empty()) {
      const auto ck = read_checkpoint(resume);
      require(checkpoint_has_ema(ck), "train-argen: resume checkpoint lacks EMA weights");
      const auto live = argen_from_checkpoint(ck, false);
      const auto ema = argen_from_checkpoint(ck, true);
      require(live.head.data().size() == init_argen_model(tc).head.data().size() &&
                  live.conditioner.data().size() == init_argen_model(tc).conditioner.data().size(),
              "train-argen: resume checkpoint does not match the configured model");
      return train_argen_stage(tc, ds, tc.stage2, 2, live, ema, ck.header.at("step").get<long>());
    }
    const ArgenModel init = init_argen_model(tc);
    auto first = train_argen_stage(tc, ds, tc.stage1, 1, init, init, 0);
    write_checkpoint(out.path("stage1.ckpt"),
                     argen_checkpoint(first.live, first.steps_done, extra, &first.ema));
    curve = first.curve;
    ratio_curve = first.ratio_curve;
    return train_argen_stage(tc, ds, tc.stage2, 2, first.live, first.ema, first.steps_done);
  }();
  curve.insert(curve.end(), stage2.curve.begin(), stage2.curve.end());
  ratio_curve.insert(ratio_curve.end(), stage2.ratio_curve.begin(), stage2.ratio_curve.end());
  write_checkpoint(out.path("final.ckpt"), argen_checkpoint(stage2.live, stage2.steps_done, extra, &stage2.ema));

  std::ostringstream c1, c2;
  write_loss_curve_csv(c1, curve);
  write_ratio_curve_csv(c2, ratio_curve);
  out.csv("loss_curve.csv", c1.str());
  out.csv("ratio_curve.csv", c2.str());
  return {{"steps", stage2.steps_done}, {"checkpoint", "final.ckpt"}};
}

// ---- sample-eval ------------------------------------------------------------

nlohmann::json cmd_sample_eval(const ExperimentConfig& cfg, const OutDir& out) {
  const std::string path = cfg.get_string("checkpoint");
  require(!path.empty(), "sample-eval: checkpoint is required");
  const auto omegas = cfg.get_doubles("omegas");
  require(!omegas.empty(), "sample-eval: empty omega sweep");
  for (double w : omegas) require(std::isfinite(w) && w >= 0.0, "sample-eval: omega must be finite and >= 0");
  const auto ck = read_checkpoint(path);
  const auto& extra = ck.header.at("extra");
  const auto ds = ToyDataset::from_manifest(extra.at("dataset"));
  const auto param = Parameterization::from_json(extra.at("param"));
  const std::string kind = ck.header.at("kind").get<std::string>();
  const PrecisionModel pm = precision_from(cfg);
  const std::uint64_t seed = cfg.get_seed();
  SamplerConfig sc = sampler_from(cfg, "sample_steps");
  const int bins = positive_int(cfg, "bins", 8);

  std::ostringstream os;
  os << "omega,metric,value,seed\n";
  nlohmann::json summary = {{"command", cfg.command()}, {"config_hash", cfg.hash()}};

  if (kind == "head") {
    for (double w : omegas) require(w == 1.0, "sample-eval: an unconditional head only supports omega = 1");
    const HeadParams hp = head_from_checkpoint(ck);
    const Schedule s = make_schedule(schedule_kind_from_string(extra.at("schedule").get<std::string>()),
                                     hp.config().steps);
    const int count = positive_int(cfg, "sample_count");
    Rng root(seed);
    Rng sample_rng = root.split(streams::kSample);
    const auto samples = sample_head(hp, param, s, count, sc, pm, sample_rng);
    Rng ref_rng = root.split(streams::kReference);
    Rng null_rng = root.split(streams::kEval);
    const auto ref = sample_tokens(ds, count, ref_rng);
    const auto other = sample_tokens(ds, count, null_rng);
    const int mp = positive_int(cfg, "mmd_points", 0);
    const double bw = cfg.get_double("mmd_bandwidth");
    const double kl = hist_kl(samples, ref, bins);
    os << "1,hist_kl," << format_double(kl) << ',' << seed << '\n';
    if (mp > 0) {
      const auto n = std::min<Eigen::Index>(mp, count);
      os << "1,mmd," << format_double(mmd_rbf(samples.leftCols(n), ref.leftCols(n), bw)) << ',' << seed << '\n';
      os << "reference,mmd," << format_double(mmd_rbf(other.leftCols(n), ref.leftCols(n), bw)) << ','
         << seed << '\n';
    }
    os << "reference,hist_kl," << format_double(hist_kl(other, ref, bins)) << ',' << seed << '\n';
    summary["hist_kl"] = kl;
  } else {
    const bool use_ema = cfg.get_bool("use_ema") && checkpoint_has_ema(ck);
    const ArgenModel model = argen_from_checkpoint(ck, use_ema);
    const Schedule s = make_schedule(schedule_kind_from_string(extra.at("schedule").get<std::string>()),
                                     model.head.config().steps);
    CfgSweepSettings st;
    st.omegas = omegas;
    st.labels = cfg.get_ints("eval_labels");
    st.grids_per_label = positive_int(cfg, "grids_per_label");
    st.reference_grids = positive_int(cfg, "reference_grids");
    st.generate.n = ds.tokens_per_sample();
    st.generate.d = ds.dim();
    st.generate.guidance.space = guidance_space_from_string(cfg.get_string("guidance_space"));
    st.generate.tokens_per_step = positive_int(cfg, "tokens_per_step");
    st.generate.sampler = sc;
    st.generate.precision = pm;
    st.generate.param = param;
    st.bins = bins;
    st.mmd_bandwidth = cfg.get_double("mmd_bandwidth");
    st.mmd_points = positive_int(cfg, "mmd_points", 0);
    st.seed = seed;
    const auto res = argen_cfg_sweep(model, ds, s, st);
    nlohmann::json points = nlohmann::json::array();
    for (std::size_t i = 0; i < res.points.size(); ++i) {
      const auto& pt = res.points[i];
      const std::string w = format_double(pt.omega);
      os << w << ",hist_kl," << format_double(pt.hist_kl) << ',' << seed << '\n';
      if (st.mmd_points > 0) os << w << ",mmd," << format_double(pt.mmd) << ',' << seed << '\n';
      for (std::size_t li = 0; li < res.labels.size(); ++li) {
        os << w << ",hist_kl_label_" << res.labels[li] << ',' << format_double(pt.per_label_kl[li]) << ','
           << seed << '\n';
      }
      const std::string name = "grids_omega_" + std::to_string(i);
      std::ostringstream g;
      write_grids_csv(g, pt.grids);
      out.csv(name + ".csv", g.str());
      auto manifest = grid_manifest(pt.grids, seed, cfg.hash());
      manifest["omega"] = pt.omega;
      out.json(name + ".json", manifest);
      points.push_back({{"omega", pt.omega}, {"hist_kl", pt.hist_kl}});
    }
    os << "reference,hist_kl," << format_double(res.null_kl) << ',' << seed << '\n';
    if (st.mmd_points > 0) os << "reference,mmd," << format_double(res.null_mmd) << ',' << seed << '\n';
    summary["points"] = points;
    summary["null_hist_kl"] = res.null_kl;
  }
  out.csv("metrics.csv", os.str());
  return summary;
}

}  // namespace

std::vector<std::string> command_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : defaults_table()) names.push_back(k);
  return names;
}

nlohmann::json command_defaults(const std::string& command) {
  const auto& t = defaults_table();
  const auto it = t.find(command);
  if (it == t.end()) throw std::invalid_argument("unknown command '" + command + "'");
  ExperimentConfig c(command, it->second);
  return c.values();
}

ExperimentConfig make_config(const std::string& command, const std::optional<std::string>& config_path,
                             const std::vector<std::string>& sets,
                             const std::optional<std::int64_t>& seed,
                             const std::optional<std::string>& out_dir) {
  ExperimentConfig cfg(command, command_defaults(command));
  if (config_path) {
    const auto j = nlohmann::json::parse(read_text_file(*config_path), nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument(*config_path + ": invalid JSON");
    cfg.merge(j, *config_path);
  }
  for (const auto& s : sets) cfg.set(s);
  if (seed) cfg.set_value("seed", *seed, "--seed");
  if (out_dir) cfg.set_value("out_dir", *out_dir, "--out");
  return cfg;
}

nlohmann::json run_command(const ExperimentConfig& cfg) {
  const OutDir out(cfg);
  out.json("config.json", cfg.echo());
  nlohmann::json summary;
  const auto& c = cfg.command();
  if (c == "error-sweep") {
    summary = cmd_error_sweep(cfg, out);
  } else if (c == "ddim-verify") {
    summary = cmd_ddim_verify(cfg, out);
  } else if (c == "cfg-check") {
    summary = cmd_cfg_check(cfg, out);
  } else if (c == "train-head") {
    summary = cmd_train_head(cfg, out);
  } else if (c == "train-argen") {
    summary = cmd_train_argen(cfg, out);
  } else if (c == "sample-eval") {
    summary = cmd_sample_eval(cfg, out);
  } else {
    throw std::invalid_argument("unknown command '" + c + "'");
  }
  summary["command"] = c;
  summary["config_hash"] = cfg.hash();
  out.json("summary.json", summary);
  return summary;
}

}  // namespace angdiff
