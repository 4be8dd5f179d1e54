#include "angdiff/head.hpp"

#include <cmath>
#include <numbers>

#include "angdiff/toyspace.hpp"
#include "nn_ops.hpp"

namespace angdiff {

nlohmann::json HeadConfig::to_json() const {
  return {{"token_dim", token_dim}, {"cond_dim", cond_dim}, {"width", width},
          {"depth", depth},         {"T", steps}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.token_dim = j.at("token_dim").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  c.width = j.at("width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.steps = j.at("T").get<int>();
  return c;
}

namespace {

Slot take(std::size_t& cursor, Eigen::Index rows, Eigen::Index cols) {
  Slot s{cursor, rows, cols};
  cursor += s.size();
  return s;
}

}  // namespace

HeadLayout::HeadLayout(const HeadConfig& cfg) {
  require(cfg.token_dim >= 1 && cfg.cond_dim >= 0 && cfg.width >= 1 && cfg.depth >= 0 &&
              cfg.steps >= 1,
          "head config: invalid shape");
  const Eigen::Index W = cfg.width;
  std::size_t c = 0;
  time_embed = take(c, W, cfg.steps + 1);
  cond_w = take(c, W, cfg.cond_dim);
  cond_b = take(c, W, 1);
  in_w = take(c, W, cfg.token_dim);
  in_b = take(c, W, 1);
  for (int i = 0; i < cfg.depth; ++i) {
    HeadBlockLayout b;
    b.ada_w = take(c, 2 * W, W);
    b.ada_b = take(c, 2 * W, 1);
    b.lin1_w = take(c, W, W);
    b.lin1_b = take(c, W, 1);
    b.lin2_w = take(c, W, W);
    b.lin2_b = take(c, W, 1);
    blocks.push_back(b);
  }
  out_w = take(c, cfg.token_dim, W);
  out_b = take(c, cfg.token_dim, 1);
  total = c;
}

HeadParams::HeadParams(HeadConfig cfg) : cfg_(cfg), layout_(cfg), data_(layout_.total, 0.0) {}

HeadParams HeadParams::init(const HeadConfig& cfg, Rng& rng) {
  HeadParams hp(cfg);
  const auto& L = hp.layout_;
  auto fill = [&](const Slot& s, double stddev) {
    auto m = hp.mat(s);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = stddev * rng.normal();
  };
  // Sinusoidal initialisation of the (learned) time embedding.
  auto te = hp.mat(L.time_embed);
  const int half = cfg.width / 2;
  for (int t = 0; t <= cfg.steps; ++t) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / std::max(half, 1));
      te(k, t) = std::cos(t * freq);
      te(k + half, t) = std::sin(t * freq);
    }
  }
  if (cfg.cond_dim > 0) fill(L.cond_w, 1.0 / std::sqrt(cfg.cond_dim));
  fill(L.in_w, 1.0 / std::sqrt(cfg.token_dim));
  for (const auto& b : L.blocks) {
    // ada_w/ada_b stay zero: every block starts with plain layer norm.
    fill(b.lin1_w, 1.0 / std::sqrt(cfg.width));
    fill(b.lin2_w, 0.5 / std::sqrt(cfg.width));
  }
  fill(L.out_w, 0.1 / std::sqrt(cfg.width));
  return hp;
}

namespace {

using nn::maybe_round;

Eigen::MatrixXd apply_silu(const Eigen::MatrixXd& x, bool linear) {
  return linear ? x : nn::silu(x);
}

}  // namespace

Eigen::MatrixXd head_forward(const HeadParams& hp, const Eigen::MatrixXd& x_t,
                             std::span<const int> t, const Eigen::MatrixXd& z,
                             const PrecisionModel& pm, HeadCache* cache) {
  const auto& cfg = hp.config();
  const auto& L = hp.layout();
  const Eigen::Index B = x_t.cols();
  const Eigen::Index W = cfg.width;
  if (x_t.rows() != cfg.token_dim || z.rows() != cfg.cond_dim || z.cols() != B ||
      static_cast<Eigen::Index>(t.size()) != B) {
    throw std::invalid_argument("head_forward: shape mismatch");
  }
  const bool rnd = pm.mode == PrecisionMode::bf16_round;
  const bool linear = cfg.nonlinearity == HeadNonlinearity::linearized;

  const auto te = hp.mat(L.time_embed);
  Eigen::MatrixXd cond_pre(W, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int tb = t[static_cast<std::size_t>(b)];
    if (tb < 0 || tb > cfg.steps) throw std::out_of_range("head_forward: step out of range");
    cond_pre.col(b) = te.col(tb);
  }
  if (cfg.cond_dim > 0) cond_pre.noalias() += hp.mat(L.cond_w) * z;
  cond_pre.colwise() += hp.mat(L.cond_b).col(0);
  maybe_round(cond_pre, rnd);
  Eigen::MatrixXd cond_emb = apply_silu(cond_pre, linear);
  maybe_round(cond_emb, rnd);

  Eigen::MatrixXd h = hp.mat(L.in_w) * x_t;
  h.colwise() += hp.mat(L.in_b).col(0);
  maybe_round(h, rnd);

  if (cache) {
    cache->x_t = x_t;
    cache->z = z;
    cache->t.assign(t.begin(), t.end());
    cache->blocks.clear();
  }

  for (const auto& bl : L.blocks) {
    HeadBlockCache bc;
    if (linear) {
      bc.normed = h;
      bc.inv_std = Eigen::RowVectorXd::Ones(B);
    } else {
      auto ln = nn::layer_norm(h);
      bc.normed = std::move(ln.normed);
      bc.inv_std = std::move(ln.inv_std);
    }
    maybe_round(bc.normed, rnd);

    bc.mod = hp.mat(bl.ada_w) * cond_emb;
    bc.mod.colwise() += hp.mat(bl.ada_b).col(0);
    maybe_round(bc.mod, rnd);
    const auto scale = bc.mod.topRows(W);
    const auto shift = bc.mod.bottomRows(W);
    bc.modulated = bc.normed.cwiseProduct((scale.array() + 1.0).matrix()) + shift;
    maybe_round(bc.modulated, rnd);

    bc.pre_act = hp.mat(bl.lin1_w) * bc.modulated;
    bc.pre_act.colwise() += hp.mat(bl.lin1_b).col(0);
    maybe_round(bc.pre_act, rnd);
    bc.act = apply_silu(bc.pre_act, linear);
    maybe_round(bc.act, rnd);

    Eigen::MatrixXd y = hp.mat(bl.lin2_w) * bc.act;
    y.colwise() += hp.mat(bl.lin2_b).col(0);
    h += y;
    maybe_round(h, rnd);
    if (cache) cache->blocks.push_back(std::move(bc));
  }

  Eigen::MatrixXd out = hp.mat(L.out_w) * h;
  out.colwise() += hp.mat(L.out_b).col(0);
  maybe_round(out, rnd);

  if (cache) {
    cache->cond_pre = std::move(cond_pre);
    cache->cond_emb = std::move(cond_emb);
    cache->hidden = std::move(h);
  }
  return out;
}

Vec head_forward(const HeadParams& hp, ConstSpan x_t, int t, ConstSpan z, const PrecisionModel& pm) {
  const auto& cfg = hp.config();
  require(static_cast<int>(x_t.size()) == cfg.token_dim, "head_forward: token dimension mismatch");
  require(static_cast<int>(z.size()) == cfg.cond_dim, "head_forward: condition dimension mismatch");
  const Eigen::MatrixXd xm = Eigen::Map<const Eigen::MatrixXd>(x_t.data(), cfg.token_dim, 1);
  const Eigen::MatrixXd zm = Eigen::Map<const Eigen::MatrixXd>(z.data(), cfg.cond_dim, 1);
  const int ts[1] = {t};
  const Eigen::MatrixXd out = head_forward(hp, xm, ts, zm, pm);
  return Vec(out.data(), out.data() + out.size());
}

HeadGrads head_backward(const HeadParams& hp, const HeadCache& cache, const Eigen::MatrixXd& dout) {
  const auto& cfg = hp.config();
  const auto& L = hp.layout();
  const Eigen::Index W = cfg.width;
  const Eigen::Index B = cache.x_t.cols();
  require(dout.rows() == cfg.token_dim && dout.cols() == B, "head_backward: shape mismatch");
  require(cache.blocks.size() == L.blocks.size(), "head_backward: stale cache");
  const bool linear = cfg.nonlinearity == HeadNonlinearity::linearized;

  HeadGrads g;
  g.params.assign(L.total, 0.0);
  auto gmat = [&](const Slot& s) {
    return Eigen::Map<Eigen::MatrixXd>(g.params.data() + s.offset, s.rows, s.cols);
  };

  gmat(L.out_w).noalias() = dout * cache.hidden.transpose();
  gmat(L.out_b) = dout.rowwise().sum();
  Eigen::MatrixXd dh = hp.mat(L.out_w).transpose() * dout;
  Eigen::MatrixXd d_cond_emb = Eigen::MatrixXd::Zero(W, B);

  for (std::size_t i = L.blocks.size(); i-- > 0;) {
    const auto& bl = L.blocks[i];
    const auto& bc = cache.blocks[i];
    gmat(bl.lin2_w).noalias() = dh * bc.act.transpose();
    gmat(bl.lin2_b) = dh.rowwise().sum();
    Eigen::MatrixXd d_pre = hp.mat(bl.lin2_w).transpose() * dh;
    if (!linear) d_pre.array() *= nn::silu_grad(bc.pre_act).array();
    gmat(bl.lin1_w).noalias() = d_pre * bc.modulated.transpose();
    gmat(bl.lin1_b) = d_pre.rowwise().sum();
    const Eigen::MatrixXd d_mod_in = hp.mat(bl.lin1_w).transpose() * d_pre;

    const auto scale = bc.mod.topRows(W);
    Eigen::MatrixXd d_mod(2 * W, B);
    d_mod.topRows(W) = d_mod_in.cwiseProduct(bc.normed);
    d_mod.bottomRows(W) = d_mod_in;
    gmat(bl.ada_w).noalias() = d_mod * cache.cond_emb.transpose();
    gmat(bl.ada_b) = d_mod.rowwise().sum();
    d_cond_emb.noalias() += hp.mat(bl.ada_w).transpose() * d_mod;

    Eigen::MatrixXd d_norm = d_mod_in.cwiseProduct((scale.array() + 1.0).matrix());
    if (linear) {
      dh += d_norm;
    } else {
      dh += nn::layer_norm_backward(d_norm, bc.normed, bc.inv_std);
    }
  }

  gmat(L.in_w).noalias() = dh * cache.x_t.transpose();
  gmat(L.in_b) = dh.rowwise().sum();
  g.x_t = hp.mat(L.in_w).transpose() * dh;

  Eigen::MatrixXd d_cond_pre = d_cond_emb;
  if (!linear) {
    d_cond_pre.array() *= nn::silu_grad(cache.cond_pre).array();
  }
  auto d_te = gmat(L.time_embed);
  for (Eigen::Index b = 0; b < B; ++b) d_te.col(cache.t[static_cast<std::size_t>(b)]) += d_cond_pre.col(b);
  gmat(L.cond_b) = d_cond_pre.rowwise().sum();
  if (cfg.cond_dim > 0) {
    gmat(L.cond_w).noalias() = d_cond_pre * cache.z.transpose();
    g.z = hp.mat(L.cond_w).transpose() * d_cond_pre;
  } else {
    g.z = Eigen::MatrixXd::Zero(0, B);
  }
  return g;
}

double mse(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets,
           Eigen::MatrixXd* d_outputs, Vec* per_column) {
  require(outputs.rows() == targets.rows() && outputs.cols() == targets.cols(),
          "mse: shape mismatch");
  require(outputs.size() > 0, "mse: empty input");
  const Eigen::MatrixXd diff = outputs - targets;
  const double n = static_cast<double>(diff.size());
  if (d_outputs) *d_outputs = diff * (2.0 / n);
  if (per_column) {
    per_column->resize(static_cast<std::size_t>(diff.cols()));
    for (Eigen::Index c = 0; c < diff.cols(); ++c) {
      (*per_column)[static_cast<std::size_t>(c)] = diff.col(c).squaredNorm() / diff.rows();
    }
  }
  return diff.squaredNorm() / n;
}

LossResult diffusion_loss(const HeadParams& hp, const Parameterization& p, const Schedule& s,
                          const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                          std::span<const int> t_samples, const Eigen::MatrixXd& eps_samples,
                          const PrecisionModel& pm, Rng& rng, bool with_grads) {
  const Eigen::Index B = x.cols();
  const auto n = static_cast<Eigen::Index>(t_samples.size());
  require(B >= 1 && n >= 1, "diffusion_loss: empty sample list");
  require(n % B == 0, "diffusion_loss: timestep count must be a multiple of the batch");
  require(eps_samples.cols() == n && eps_samples.rows() == x.rows(),
          "diffusion_loss: |t_samples| must equal |eps_samples|");
  require(z.cols() == B, "diffusion_loss: condition batch mismatch");
  const Eigen::Index K = n / B;

  Eigen::MatrixXd x_t(x.rows(), n), targets(x.rows(), n), z_rep(z.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int t = t_samples[static_cast<std::size_t>(j)];
    require(t >= 1 && t <= s.steps(), "diffusion_loss: t must lie in [1, T]");
    const auto a = p.angles(s, t);
    const auto xc = x.col(j / K);
    x_t.col(j) = a.cos_phi * xc + a.sin_phi * eps_samples.col(j);
    targets.col(j) = a.scale * (a.cos_psi * xc + a.sin_psi * eps_samples.col(j));
    z_rep.col(j) = z.col(j / K);
  }

  HeadCache cache;
  Eigen::MatrixXd out = head_forward(hp, x_t, t_samples, z_rep, pm, with_grads ? &cache : nullptr);
  Vec factors;
  inject_inplace(pm, Span(out.data(), static_cast<std::size_t>(out.size())), rng, &factors);

  LossResult r;
  Eigen::MatrixXd dout;
  r.loss = mse(out, targets, with_grads ? &dout : nullptr, &r.per_sample);
  r.t.assign(t_samples.begin(), t_samples.end());
  if (with_grads) {
    for (Eigen::Index i = 0; i < dout.size(); ++i) dout.data()[i] *= factors[static_cast<std::size_t>(i)];
    r.grads = head_backward(hp, cache, dout);
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(z.rows(), B);
    for (Eigen::Index j = 0; j < n; ++j) dz.col(j / K) += r.grads.z.col(j);
    r.grads.z = std::move(dz);
  }
  return r;
}

LossResult v_loss(const HeadParams& hp, const Schedule& s, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd& z, std::span<const int> t_samples,
                  const Eigen::MatrixXd& eps_samples, const PrecisionModel& pm, Rng& rng,
                  bool with_grads) {
  return diffusion_loss(hp, Parameterization::v_pred(), s, x, z, t_samples, eps_samples, pm, rng,
                        with_grads);
}

void ema_update(EmaState& e, const HeadParams& live) {
  require(e.shadow.data().size() == live.data().size(), "ema_update: shape mismatch");
  ema_update(e.shadow.data(), live.data(), e.momentum);
}

int t_bucket_of(int t, int T, int buckets) {
  require(buckets >= 1, "t_bucket_of: need at least one bucket");
  const int b = static_cast<int>((static_cast<long>(t - 1) * buckets) / T);
  return std::clamp(b, 0, buckets - 1);
}

HeadTrainResult train_head(const HeadTrainConfig& cfg, const ToyDataset& ds) {
  require(cfg.steps >= 1 && cfg.batch >= 1 && cfg.timestep_samples >= 1,
          "train_head: steps, batch and K must be positive");
  require(cfg.head.token_dim == ds.dim(), "train_head: head token_dim != dataset dim");
  require(cfg.log_every >= 1 && cfg.t_buckets >= 1, "train_head: invalid logging settings");
  const Schedule s = make_schedule(cfg.schedule_kind, cfg.head.steps);
  const Rng root(cfg.seed);
  Rng init_rng = root.split(streams::kInit);
  Rng data_rng = root.split(streams::kData);
  Rng train_rng = root.split(streams::kTrain);
  Rng inject_rng = root.split(streams::kInject);

  HeadTrainResult res{HeadParams::init(cfg.head, init_rng), EmaState{HeadParams(cfg.head), cfg.ema_momentum}, {}};
  res.ema.shadow = res.params;
  AdamW opt(res.params.data().size(), cfg.optimizer);

  const int B = cfg.batch;
  const int K = cfg.timestep_samples;
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(cfg.head.cond_dim, B);
  std::vector<int> ts(static_cast<std::size_t>(B) * K);
  Eigen::MatrixXd eps(ds.dim(), B * K);
  Vec bucket_sum(static_cast<std::size_t>(cfg.t_buckets), 0.0);
  std::vector<long> bucket_count(static_cast<std::size_t>(cfg.t_buckets), 0);

  for (int step = 1; step <= cfg.steps; ++step) {
    const Eigen::MatrixXd x = sample_tokens(ds, B, data_rng);
    for (auto& t : ts) t = static_cast<int>(train_rng.uniform_int(1, s.steps()));
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = train_rng.normal();

    const auto r = diffusion_loss(res.params, cfg.param, s, x, z, ts, eps, cfg.precision, inject_rng);
    if (!std::isfinite(r.loss)) {
      throw std::runtime_error("train_head: non-finite loss at step " + std::to_string(step) +
                               " (lr=" + std::to_string(opt.current_lr()) + ")");
    }
    opt.step(res.params.data(), r.grads.params);
    ema_update(res.ema, res.params);

    for (std::size_t j = 0; j < ts.size(); ++j) {
      const auto b = static_cast<std::size_t>(t_bucket_of(ts[j], s.steps(), cfg.t_buckets));
      bucket_sum[b] += r.per_sample[j];
      ++bucket_count[b];
    }
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      double all_sum = 0.0;
      long all_count = 0;
      for (int b = 0; b < cfg.t_buckets; ++b) {
        all_sum += bucket_sum[b];
        all_count += bucket_count[b];
      }
      res.curve.push_back({step, -1, all_count ? all_sum / all_count : 0.0, all_count});
      for (int b = 0; b < cfg.t_buckets; ++b) {
        res.curve.push_back(
            {step, b, bucket_count[b] ? bucket_sum[b] / bucket_count[b] : 0.0, bucket_count[b]});
      }
      std::fill(bucket_sum.begin(), bucket_sum.end(), 0.0);
      std::fill(bucket_count.begin(), bucket_count.end(), 0);
    }
  }
  return res;
}

Vec vspace_loss_by_t(const HeadParams& hp, const Parameterization& p, const Schedule& s,
                     const ToyDataset& ds, std::span<const int> ts, int samples_per_t,
                     const PrecisionModel& pm, Rng& rng) {
  require(samples_per_t >= 1, "vspace_loss_by_t: need at least one sample");
  const int d = ds.dim();
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(hp.config().cond_dim, samples_per_t);
  Vec out;
  out.reserve(ts.size());
  for (int t : ts) {
    const Eigen::MatrixXd x = sample_tokens(ds, samples_per_t, rng);
    Eigen::MatrixXd eps(d, samples_per_t);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    const auto a = p.angles(s, t);
    const Eigen::MatrixXd x_t = a.cos_phi * x + a.sin_phi * eps;
    const std::vector<int> tv(static_cast<std::size_t>(samples_per_t), t);
    Eigen::MatrixXd u = head_forward(hp, x_t, tv, z, pm);
    inject_inplace(pm, Span(u.data(), static_cast<std::size_t>(u.size())), rng);
    const Vec v_hat = convert(p, Parameterization::v_pred(), s, t,
                              ConstSpan(x_t.data(), static_cast<std::size_t>(x_t.size())),
                              ConstSpan(u.data(), static_cast<std::size_t>(u.size())));
    const Eigen::MatrixXd v_true = a.cos_phi * eps - a.sin_phi * x;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < v_true.size(); ++i) {
      const double e = v_hat[static_cast<std::size_t>(i)] - v_true.data()[i];
      sum += e * e;
    }
    out.push_back(sum / static_cast<double>(v_true.size()));
  }
  return out;
}

Eigen::MatrixXd sample_head(const HeadParams& hp, const Parameterization& p, const Schedule& s,
                            int count, const SamplerConfig& sampler, const PrecisionModel& pm,
                            Rng& rng) {
  require(count >= 1, "sample_head: count must be >= 1");
  const int d = hp.config().token_dim;
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(hp.config().cond_dim, count);
  Denoiser model = [&](int t, ConstSpan x_t, Branch) {
    const Eigen::Map<const Eigen::MatrixXd> xm(x_t.data(), d, count);
    const std::vector<int> tv(static_cast<std::size_t>(count), t);
    const Eigen::MatrixXd out = head_forward(hp, xm, tv, z, pm);
    return Vec(out.data(), out.data() + out.size());
  };
  const auto steps = make_step_list(s, sampler.steps, sampler.spacing);
  const Vec init = rng.normal_vec(static_cast<std::size_t>(d) * count);
  const auto traj = sample_trajectory(model, s, p, steps, init, sampler, std::nullopt, pm, rng);
  return Eigen::Map<const Eigen::MatrixXd>(traj.final_state().data(), d, count);
}

}  // namespace angdiff
