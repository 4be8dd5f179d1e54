#include "angdiff/studies.hpp"

#include <cmath>
#include <numeric>

namespace angdiff {

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const Vec& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0};
}

double rms(ConstSpan v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Std of the multiplicative corruption per unit output magnitude.
double effective_delta(const PrecisionModel& pm) {
  switch (pm.mode) {
    case PrecisionMode::exact:
      return 0.0;
    case PrecisionMode::uniform_delta:
      return pm.delta_max / std::sqrt(3.0);
    case PrecisionMode::fixed_delta:
    case PrecisionMode::bf16_round:
      return pm.delta_max;
  }
  return 0.0;
}

ConstSpan span_of(const Eigen::MatrixXd& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace

double predicted_vspace_error(const Parameterization& p, const Schedule& s, int t,
                              const PrecisionModel& pm) {
  const auto a = p.angles(s, t);
  const double de = effective_delta(pm);
  return de * de / (a.denom * a.denom);
}

std::vector<ErrorSweepRow> error_sweep(const Schedule& s, const ToyDataset& ds,
                                       const ErrorSweepSettings& cfg) {
  require(cfg.samples >= 2, "error_sweep: need at least two samples");
  require(cfg.step >= 1, "error_sweep: step must be >= 1");
  validate(cfg.precision);
  std::optional<GmmOracle> oracle;
  if (cfg.model == SweepModel::bayes) oracle.emplace(ds, s);
  const PrecisionModel exact{};
  const Parameterization v = Parameterization::v_pred();
  const Rng root(cfg.seed);

  std::vector<ErrorSweepRow> rows;
  for (std::size_t pi = 0; pi < cfg.params.size(); ++pi) {
    const auto& p = cfg.params[pi];
    for (int t : cfg.ts) {
      require(t >= 1 && t <= s.steps(), "error_sweep: t out of range");
      check_well_posed(p, s, t);
      Rng rng = root.split(pi + 1).split(static_cast<std::uint64_t>(t));
      const Eigen::MatrixXd x = sample_tokens(ds, cfg.samples, rng);
      Eigen::MatrixXd eps(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
      const double c = s.cos_phase(t), sn = s.sin_phase(t);
      const Eigen::MatrixXd x_t = c * x + sn * eps;
      const Eigen::MatrixXd v_true = c * eps - sn * x;

      const Vec u = oracle ? oracle->predict(p, t, span_of(x_t))
                           : target(p, s, t, span_of(x), span_of(eps)).values;
      const Vec u_inj = inject(cfg.precision, u, rng);
      const Vec v_model = convert(p, v, s, t, span_of(x_t), u);
      const Vec v_inj = convert(p, v, s, t, span_of(x_t), u_inj);

      Vec e2(u.size()), cross(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double e = v_inj[i] - v_model[i];
        e2[i] = e * e;
        cross[i] = (v_true.data()[i] - v_model[i]) * e;
      }
      const auto ms = mean_se(e2);
      const auto cs = mean_se(cross);

      ErrorSweepRow r;
      r.t = t;
      r.alpha_bar = s.alpha_bar(t);
      r.param_kind = to_string(p.kind);
      r.psi_offset = p.psi_offset;
      r.mode = to_string(cfg.precision.mode);
      const auto a = p.angles(s, t);
      Vec u_over_r(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) u_over_r[i] = u[i] / a.scale;
      const double u_rms = rms(u_over_r);
      r.theory = predicted_vspace_error(p, s, t, cfg.precision);
      r.measured = ms.mean;
      r.measured_se = ms.se;
      r.eps_theory = theoretical_vloss_overhead(s, t, effective_delta(cfg.precision));
      r.cross = cs.mean;
      r.cross_se = cs.se;

      r.t_to = std::max(t - cfg.step, 0);
      const Vec x_exact = ddim_step_general(p, s, t, r.t_to, span_of(x_t), u, exact, rng);
      const Vec x_pm = ddim_step_general(p, s, t, r.t_to, span_of(x_t), u, cfg.precision, rng);
      Vec diff(x_exact.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = x_pm[i] - x_exact[i];
      const double sin_step = std::sin(s.phase(r.t_to) - s.phase(t));
      r.step_theory = std::abs(sin_step / a.denom) * effective_delta(cfg.precision) * u_rms;
      r.step_measured = rms(diff);
      r.step_per_unit = r.step_measured / std::abs(sin_step);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

CfgDeviation cfg_trajectory_deviation(const ToyDataset& ds, const Schedule& s, double omega,
                                      std::uint64_t seed, int tokens, const SamplerConfig& sampler,
                                      const PrecisionModel& pm) {
  require(ds.num_labels() > 0, "cfg check: dataset must be labeled");
  require(tokens >= 1, "cfg check: tokens must be >= 1");
  const GmmOracle oracle(ds, s);
  const int label = static_cast<int>(seed % static_cast<std::uint64_t>(ds.num_labels()));
  const Parameterization v = Parameterization::v_pred();
  Denoiser model = [&](int t, ConstSpan x_t, Branch b) {
    return oracle.predict(v, t, x_t, b == Branch::conditional ? label : -1);
  };
  const Rng root(seed);
  Rng noise_rng = root.split(streams::kSample);
  const Vec init = noise_rng.normal_vec(static_cast<std::size_t>(ds.dim()) * tokens);
  const auto steps = make_step_list(s, sampler.steps, sampler.spacing);

  Rng rng_v = root.split(streams::kInject);
  Rng rng_e = root.split(streams::kInject);
  const auto tv = sample_trajectory(model, s, v, steps, init, sampler,
                                    GuidanceConfig{omega, GuidanceSpace::v}, pm, rng_v);
  const auto te = sample_trajectory(model, s, v, steps, init, sampler,
                                    GuidanceConfig{omega, GuidanceSpace::eps}, pm, rng_e);
  CfgDeviation d{omega, seed, 0.0};
  for (std::size_t k = 0; k < tv.states.size(); ++k) {
    for (std::size_t i = 0; i < tv.states[k].size(); ++i) {
      d.max_abs_dev = std::max(d.max_abs_dev, std::abs(tv.states[k][i] - te.states[k][i]));
    }
  }
  return d;
}

HeadEval evaluate_head(const HeadParams& hp, const Parameterization& p, const Schedule& s,
                       const ToyDataset& ds, const PrecisionModel& pm, const HeadEvalSettings& cfg) {
  const Rng root(cfg.seed);
  HeadEval ev;
  ev.ts = cfg.ts;
  Rng loss_rng = root.split(streams::kEval);
  ev.vloss = vspace_loss_by_t(hp, p, s, ds, cfg.ts, cfg.loss_samples, pm, loss_rng);
  Rng sample_rng = root.split(streams::kSample);
  ev.samples = sample_head(hp, p, s, cfg.sample_count, cfg.sampler, pm, sample_rng);
  Rng ref_rng = root.split(streams::kReference);
  const Eigen::MatrixXd ref = sample_tokens(ds, cfg.sample_count, ref_rng);
  ev.hist_kl = hist_kl(ev.samples, ref, cfg.bins);
  return ev;
}

Eigen::MatrixXd grid_tokens(const std::vector<TokenGrid>& grids) {
  require(!grids.empty(), "grid_tokens: no grids");
  const int d = grids.front().d;
  Eigen::Index total = 0;
  for (const auto& g : grids) total += g.n;
  Eigen::MatrixXd out(d, total);
  Eigen::Index col = 0;
  for (const auto& g : grids) {
    out.middleCols(col, g.n) = g.values;
    col += g.n;
  }
  return out;
}

namespace {

Eigen::MatrixXd sample_tokens_with_label(const ToyDataset& ds, int grids, int label, Rng& rng) {
  const auto draws = sample_dataset_with_label(ds, grids, label, rng);
  Eigen::MatrixXd out(ds.dim(), static_cast<Eigen::Index>(grids) * ds.tokens_per_sample());
  Eigen::Index col = 0;
  for (const auto& g : draws) {
    out.middleCols(col, g.tokens.cols()) = g.tokens;
    col += g.tokens.cols();
  }
  return out;
}

double subsampled_mmd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int points, double bw) {
  const Eigen::Index na = std::min<Eigen::Index>(a.cols(), points);
  const Eigen::Index nb = std::min<Eigen::Index>(b.cols(), points);
  return mmd_rbf(a.leftCols(na), b.leftCols(nb), bw);
}

}  // namespace

CfgSweepResult argen_cfg_sweep(const ArgenModel& model, const ToyDataset& ds, const Schedule& s,
                               const CfgSweepSettings& cfg) {
  require(!cfg.omegas.empty(), "cfg sweep: empty omega list");
  require(cfg.grids_per_label >= 1 && cfg.reference_grids >= 1, "cfg sweep: grid counts must be >= 1");
  // Histogram KL is computed per label over pooled tokens.
  const int n = ds.tokens_per_sample();
  require(cfg.grids_per_label * n >= 1000 && cfg.reference_grids * n >= 1000,
          "cfg sweep: grids_per_label and reference_grids must give at least 1000 tokens per label (" +
              std::to_string((1000 + n - 1) / n) + " grids of " + std::to_string(n) + ")");
  CfgSweepResult res;
  res.labels = cfg.labels;
  if (res.labels.empty()) {
    require(ds.num_labels() > 0, "cfg sweep: dataset has no labels");
    res.labels.resize(static_cast<std::size_t>(ds.num_labels()));
    std::iota(res.labels.begin(), res.labels.end(), 0);
  }
  const Rng root(cfg.seed);
  std::vector<Eigen::MatrixXd> refs;
  for (int label : res.labels) {
    require(label >= 0 && label < ds.num_labels(), "cfg sweep: label out of range");
    Rng ref_rng = root.split(streams::kReference).split(static_cast<std::uint64_t>(label));
    refs.push_back(sample_tokens_with_label(ds, cfg.reference_grids, label, ref_rng));
  }
  {
    double kl = 0.0, mmd = 0.0;
    for (std::size_t li = 0; li < res.labels.size(); ++li) {
      Rng null_rng = root.split(streams::kEval).split(static_cast<std::uint64_t>(res.labels[li]));
      const auto other = sample_tokens_with_label(ds, cfg.grids_per_label, res.labels[li], null_rng);
      kl += hist_kl(other, refs[li], cfg.bins);
      if (cfg.mmd_points > 0) mmd += subsampled_mmd(other, refs[li], cfg.mmd_points, cfg.mmd_bandwidth);
    }
    res.null_kl = kl / static_cast<double>(res.labels.size());
    res.null_mmd = mmd / static_cast<double>(res.labels.size());
  }

  for (double omega : cfg.omegas) {
    CfgSweepPoint pt;
    pt.omega = omega;
    GenerateConfig gen = cfg.generate;
    gen.guidance.omega = omega;
    double kl = 0.0, mmd = 0.0;
    for (std::size_t li = 0; li < res.labels.size(); ++li) {
      const int label = res.labels[li];
      const std::vector<int> labels(static_cast<std::size_t>(cfg.grids_per_label), label);
      const auto seed = stream_seed(stream_seed(cfg.seed, streams::kSample), static_cast<std::uint64_t>(label));
      auto grids = generate_batch(model, s, labels, gen, seed);
      const Eigen::MatrixXd tokens = grid_tokens(grids);
      const double k = hist_kl(tokens, refs[li], cfg.bins);
      pt.per_label_kl.push_back(k);
      kl += k;
      if (cfg.mmd_points > 0) mmd += subsampled_mmd(tokens, refs[li], cfg.mmd_points, cfg.mmd_bandwidth);
      pt.grids.insert(pt.grids.end(), std::make_move_iterator(grids.begin()),
                      std::make_move_iterator(grids.end()));
    }
    pt.hist_kl = kl / static_cast<double>(res.labels.size());
    pt.mmd = mmd / static_cast<double>(res.labels.size());
    res.points.push_back(std::move(pt));
  }
  return res;
}

}  // namespace angdiff
