#include "angdiff/argen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "nn_ops.hpp"

namespace angdiff {

TokenGrid TokenGrid::all_masked(int n, int d, int label) {
  require(n >= 1 && d >= 1, "TokenGrid: n and d must be positive");
  TokenGrid g;
  g.n = n;
  g.d = d;
  g.values = Eigen::MatrixXd::Zero(d, n);
  g.mask.assign(static_cast<std::size_t>(n), 1);
  g.positions.resize(static_cast<std::size_t>(n));
  std::iota(g.positions.begin(), g.positions.end(), 0);
  g.label = label;
  return g;
}

TokenGrid TokenGrid::from_tokens(const Eigen::MatrixXd& tokens, int label) {
  TokenGrid g = all_masked(static_cast<int>(tokens.cols()), static_cast<int>(tokens.rows()), label);
  g.values = tokens;
  std::fill(g.mask.begin(), g.mask.end(), 0);
  return g;
}

void TokenGrid::validate() const {
  require(n >= 1 && d >= 1, "TokenGrid: n and d must be positive");
  require(values.rows() == d && values.cols() == n, "TokenGrid: values shape mismatch");
  require(static_cast<int>(mask.size()) == n && static_cast<int>(positions.size()) == n,
          "TokenGrid: mask/positions length mismatch");
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int p : positions) {
    require(p >= 0 && p < n && !seen[static_cast<std::size_t>(p)],
            "TokenGrid: positions must be a permutation of 0..n-1");
    seen[static_cast<std::size_t>(p)] = 1;
  }
  for (int j = 0; j < n; ++j) {
    if (mask[static_cast<std::size_t>(j)]) continue;
    require(values.col(j).allFinite(), "TokenGrid: non-finite known token");
  }
}

int TokenGrid::masked_count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<int> TokenGrid::index_of_position() const {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) idx[static_cast<std::size_t>(positions[static_cast<std::size_t>(j)])] = j;
  return idx;
}

double draw_mask_ratio(const MaskSchedule& ms, Rng& rng) {
  require(ms.lo >= 0.0 && ms.lo <= ms.hi && ms.hi <= 1.0 && ms.hi > 0.0,
          "MaskSchedule: need 0 <= lo <= hi <= 1 and hi > 0");
  // 1 - U lies in (0, 1], so the ratio lies in (lo, hi] (exactly hi when lo == hi).
  return ms.hi - (ms.hi - ms.lo) * rng.uniform();
}

std::vector<std::uint8_t> draw_mask(const MaskSchedule& ms, int n, Rng& rng, double* ratio_out) {
  require(n >= 1, "draw_mask: n must be >= 1");
  const double ratio = draw_mask_ratio(ms, rng);
  if (ratio_out) *ratio_out = ratio;
  const int count = std::clamp(static_cast<int>(std::ceil(ratio * n - 1e-12)), 1, n);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i, n - 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[j]);
    mask[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = 1;
  }
  return mask;
}

nlohmann::json ConditionerConfig::to_json() const {
  return {{"token_dim", token_dim}, {"positions", positions}, {"num_labels", num_labels},
          {"width", width},         {"layers", layers},       {"ffn_mult", ffn_mult},
          {"cond_dim", cond_dim}};
}

ConditionerConfig ConditionerConfig::from_json(const nlohmann::json& j) {
  ConditionerConfig c;
  c.token_dim = j.at("token_dim").get<int>();
  c.positions = j.at("positions").get<int>();
  c.num_labels = j.at("num_labels").get<int>();
  c.width = j.at("width").get<int>();
  c.layers = j.at("layers").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  return c;
}

namespace {

Slot take(std::size_t& cursor, Eigen::Index rows, Eigen::Index cols) {
  Slot s{cursor, rows, cols};
  cursor += s.size();
  return s;
}

}  // namespace

ConditionerLayout::ConditionerLayout(const ConditionerConfig& cfg) {
  require(cfg.token_dim >= 1 && cfg.positions >= 1 && cfg.num_labels >= 0 && cfg.width >= 1 &&
              cfg.layers >= 0 && cfg.ffn_mult >= 1 && cfg.cond_dim >= 1,
          "conditioner config: invalid shape");
  const Eigen::Index W = cfg.width;
  const Eigen::Index F = static_cast<Eigen::Index>(cfg.ffn_mult) * W;
  std::size_t c = 0;
  tok_w = take(c, W, cfg.token_dim);
  tok_b = take(c, W, 1);
  mask_embed = take(c, W, 1);
  pos_embed = take(c, W, cfg.positions);
  label_embed = take(c, W, cfg.num_labels + 1);
  for (int i = 0; i < cfg.layers; ++i) {
    ConditionerLayerLayout l;
    l.wq = take(c, W, W);
    l.wk = take(c, W, W);
    l.wv = take(c, W, W);
    l.wo = take(c, W, W);
    l.bo = take(c, W, 1);
    l.w1 = take(c, F, W);
    l.b1 = take(c, F, 1);
    l.w2 = take(c, W, F);
    l.b2 = take(c, W, 1);
    layers.push_back(l);
  }
  out_w = take(c, cfg.cond_dim, W);
  out_b = take(c, cfg.cond_dim, 1);
  total = c;
}

ConditionerParams::ConditionerParams(ConditionerConfig cfg)
    : cfg_(cfg), layout_(cfg), data_(layout_.total, 0.0) {}

ConditionerParams ConditionerParams::init(const ConditionerConfig& cfg, Rng& rng) {
  ConditionerParams cp(cfg);
  const auto& L = cp.layout_;
  auto fill = [&](const Slot& s, double stddev) {
    auto m = cp.mat(s);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = stddev * rng.normal();
  };
  const double W = cfg.width;
  fill(L.tok_w, 1.0 / std::sqrt(cfg.token_dim));
  fill(L.mask_embed, 1.0);
  fill(L.pos_embed, 1.0);
  fill(L.label_embed, 1.0);
  for (const auto& l : L.layers) {
    fill(l.wq, 1.0 / std::sqrt(W));
    fill(l.wk, 1.0 / std::sqrt(W));
    fill(l.wv, 1.0 / std::sqrt(W));
    fill(l.wo, 0.5 / std::sqrt(W));
    fill(l.w1, 1.0 / std::sqrt(W));
    fill(l.w2, 0.5 / std::sqrt(W * cfg.ffn_mult));
  }
  fill(L.out_w, 1.0 / std::sqrt(W));
  return cp;
}

namespace {

int label_column(const ConditionerConfig& cfg, int label) {
  if (label < 0) return cfg.num_labels;
  require(label < cfg.num_labels, "conditioner: label out of range");
  return label;
}

// Column-wise softmax.
Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const double m = s.col(j).maxCoeff();
    out.col(j) = (s.col(j).array() - m).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

}  // namespace

ConditionerOutput conditioner_forward(const ConditionerParams& cp, const TokenGrid& grid, int label,
                                      ConditionerCache* cache) {
  const auto& cfg = cp.config();
  const auto& L = cp.layout();
  require(grid.d == cfg.token_dim && grid.n == cfg.positions,
          "conditioner_forward: grid shape does not match the conditioner");
  grid.validate();
  const int n = grid.n;
  const Eigen::Index W = cfg.width;
  const Eigen::Index M = n + 1;

  ConditionerCache local;
  ConditionerCache& c = cache ? *cache : local;
  c.order = grid.index_of_position();
  c.masked_by_position.assign(static_cast<std::size_t>(n), 0);
  c.tokens_by_position = Eigen::MatrixXd::Zero(grid.d, n);
  for (int p = 0; p < n; ++p) {
    const int j = c.order[static_cast<std::size_t>(p)];
    c.masked_by_position[static_cast<std::size_t>(p)] = grid.mask[static_cast<std::size_t>(j)];
    if (!grid.mask[static_cast<std::size_t>(j)]) c.tokens_by_position.col(p) = grid.values.col(j);
  }
  c.label_column = label_column(cfg, label);
  c.layers.clear();

  // Column 0 carries the label, column 1 + p the token at position p.
  Eigen::MatrixXd h(W, M);
  h.col(0) = cp.mat(L.label_embed).col(c.label_column);
  const auto pos = cp.mat(L.pos_embed);
  const Eigen::MatrixXd projected = cp.mat(L.tok_w) * c.tokens_by_position;
  for (int p = 0; p < n; ++p) {
    if (c.masked_by_position[static_cast<std::size_t>(p)]) {
      h.col(1 + p) = cp.mat(L.mask_embed).col(0) + pos.col(p);
    } else {
      h.col(1 + p) = projected.col(p) + cp.mat(L.tok_b).col(0) + pos.col(p);
    }
  }

  const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(W));
  for (const auto& l : L.layers) {
    ConditionerLayerCache lc;
    auto ln1 = nn::layer_norm(h);
    lc.n1 = std::move(ln1.normed);
    lc.inv1 = std::move(ln1.inv_std);
    lc.q = cp.mat(l.wq) * lc.n1;
    lc.k = cp.mat(l.wk) * lc.n1;
    lc.v = cp.mat(l.wv) * lc.n1;
    // attn(i, j): weight of key i for query j.
    lc.attn = softmax_cols((lc.k.transpose() * lc.q) * inv_sqrt_w);
    lc.o = lc.v * lc.attn;
    h.noalias() += cp.mat(l.wo) * lc.o;
    h.colwise() += cp.mat(l.bo).col(0);

    auto ln2 = nn::layer_norm(h);
    lc.n2 = std::move(ln2.normed);
    lc.inv2 = std::move(ln2.inv_std);
    lc.pre = cp.mat(l.w1) * lc.n2;
    lc.pre.colwise() += cp.mat(l.b1).col(0);
    lc.act = nn::silu(lc.pre);
    h.noalias() += cp.mat(l.w2) * lc.act;
    h.colwise() += cp.mat(l.b2).col(0);
    c.layers.push_back(std::move(lc));
  }

  auto lnf = nn::layer_norm(h);
  c.final_normed = std::move(lnf.normed);
  c.final_inv = std::move(lnf.inv_std);

  ConditionerOutput out;
  for (int p = 0; p < n; ++p) {
    if (c.masked_by_position[static_cast<std::size_t>(p)]) out.positions.push_back(p);
  }
  Eigen::MatrixXd sel(W, static_cast<Eigen::Index>(out.positions.size()));
  for (std::size_t i = 0; i < out.positions.size(); ++i) {
    sel.col(static_cast<Eigen::Index>(i)) = c.final_normed.col(1 + out.positions[i]);
  }
  out.z = cp.mat(L.out_w) * sel;
  out.z.colwise() += cp.mat(L.out_b).col(0);
  return out;
}

Vec conditioner_backward(const ConditionerParams& cp, const ConditionerCache& c,
                         const Eigen::MatrixXd& dz) {
  const auto& cfg = cp.config();
  const auto& L = cp.layout();
  const int n = cfg.positions;
  const Eigen::Index W = cfg.width;
  const Eigen::Index M = n + 1;
  require(c.layers.size() == L.layers.size() && c.final_normed.cols() == M,
          "conditioner_backward: stale cache");

  std::vector<int> masked;
  for (int p = 0; p < n; ++p) {
    if (c.masked_by_position[static_cast<std::size_t>(p)]) masked.push_back(p);
  }
  require(dz.rows() == cfg.cond_dim && dz.cols() == static_cast<Eigen::Index>(masked.size()),
          "conditioner_backward: gradient shape mismatch");

  Vec grads(L.total, 0.0);
  auto gmat = [&](const Slot& s) {
    return Eigen::Map<Eigen::MatrixXd>(grads.data() + s.offset, s.rows, s.cols);
  };

  Eigen::MatrixXd sel(W, dz.cols());
  for (std::size_t i = 0; i < masked.size(); ++i) {
    sel.col(static_cast<Eigen::Index>(i)) = c.final_normed.col(1 + masked[i]);
  }
  gmat(L.out_w).noalias() = dz * sel.transpose();
  gmat(L.out_b) = dz.rowwise().sum();
  const Eigen::MatrixXd d_sel = cp.mat(L.out_w).transpose() * dz;
  Eigen::MatrixXd d_final = Eigen::MatrixXd::Zero(W, M);
  for (std::size_t i = 0; i < masked.size(); ++i) {
    d_final.col(1 + masked[i]) = d_sel.col(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd dh = nn::layer_norm_backward(d_final, c.final_normed, c.final_inv);

  const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(W));
  for (std::size_t li = L.layers.size(); li-- > 0;) {
    const auto& l = L.layers[li];
    const auto& lc = c.layers[li];

    gmat(l.w2).noalias() = dh * lc.act.transpose();
    gmat(l.b2) = dh.rowwise().sum();
    Eigen::MatrixXd d_pre = cp.mat(l.w2).transpose() * dh;
    d_pre.array() *= nn::silu_grad(lc.pre).array();
    gmat(l.w1).noalias() = d_pre * lc.n2.transpose();
    gmat(l.b1) = d_pre.rowwise().sum();
    dh += nn::layer_norm_backward(cp.mat(l.w1).transpose() * d_pre, lc.n2, lc.inv2);

    gmat(l.wo).noalias() = dh * lc.o.transpose();
    gmat(l.bo) = dh.rowwise().sum();
    const Eigen::MatrixXd d_o = cp.mat(l.wo).transpose() * dh;
    const Eigen::MatrixXd d_v = d_o * lc.attn.transpose();
    const Eigen::MatrixXd d_attn = lc.v.transpose() * d_o;
    Eigen::MatrixXd d_s = lc.attn.cwiseProduct(d_attn);
    const Eigen::RowVectorXd col_dot = d_s.colwise().sum();
    d_s -= (lc.attn.array().rowwise() * col_dot.array()).matrix();
    d_s *= inv_sqrt_w;
    const Eigen::MatrixXd d_q = lc.k * d_s;
    const Eigen::MatrixXd d_k = lc.q * d_s.transpose();
    gmat(l.wq).noalias() = d_q * lc.n1.transpose();
    gmat(l.wk).noalias() = d_k * lc.n1.transpose();
    gmat(l.wv).noalias() = d_v * lc.n1.transpose();
    const Eigen::MatrixXd d_n1 = cp.mat(l.wq).transpose() * d_q + cp.mat(l.wk).transpose() * d_k +
                                 cp.mat(l.wv).transpose() * d_v;
    dh += nn::layer_norm_backward(d_n1, lc.n1, lc.inv1);
  }

  gmat(L.label_embed).col(c.label_column) += dh.col(0);
  auto d_pos = gmat(L.pos_embed);
  Eigen::MatrixXd d_proj = Eigen::MatrixXd::Zero(W, n);
  for (int p = 0; p < n; ++p) {
    d_pos.col(p) += dh.col(1 + p);
    if (c.masked_by_position[static_cast<std::size_t>(p)]) {
      gmat(L.mask_embed).col(0) += dh.col(1 + p);
    } else {
      d_proj.col(p) = dh.col(1 + p);
    }
  }
  gmat(L.tok_w).noalias() = d_proj * c.tokens_by_position.transpose();
  gmat(L.tok_b) = d_proj.rowwise().sum();
  return grads;
}

ArgenModel init_argen_model(const ArgenTrainConfig& cfg) {
  require(cfg.head.cond_dim == cfg.conditioner.cond_dim,
          "argen: head cond_dim must equal conditioner cond_dim");
  require(cfg.head.token_dim == cfg.conditioner.token_dim,
          "argen: head token_dim must equal conditioner token_dim");
  Rng init = Rng(cfg.seed).split(streams::kInit);
  Rng cond_rng = init.split(1);
  Rng head_rng = init.split(2);
  return ArgenModel{ConditionerParams::init(cfg.conditioner, cond_rng),
                    HeadParams::init(cfg.head, head_rng)};
}

namespace {

int ratio_bucket_of(double ratio, int buckets) {
  const int b = static_cast<int>(std::ceil(ratio * buckets - 1e-12)) - 1;
  return std::clamp(b, 0, buckets - 1);
}

void check_finite(double v, const char* what, long step) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string(what) + ": non-finite loss at step " + std::to_string(step));
  }
}

}  // namespace

ArgenTrainResult train_argen_stage(const ArgenTrainConfig& cfg, const ToyDataset& ds,
                                   const ArgenStageConfig& stage, int stage_index,
                                   const ArgenModel& start, const ArgenModel& start_ema,
                                   long step_offset) {
  require(stage.steps >= 0 && stage.timestep_samples >= 1, "train_argen: invalid stage settings");
  require(cfg.batch_grids >= 1 && cfg.log_every >= 1 && cfg.t_buckets >= 1 && cfg.ratio_buckets >= 1,
          "train_argen: invalid batch or logging settings");
  require(cfg.uncond_prob >= 0.0 && cfg.uncond_prob <= 1.0, "train_argen: uncond_prob must lie in [0, 1]");
  require(ds.dim() == cfg.conditioner.token_dim && ds.tokens_per_sample() == cfg.conditioner.positions,
          "train_argen: dataset shape does not match the conditioner");
  require(ds.num_labels() <= cfg.conditioner.num_labels,
          "train_argen: dataset has more labels than the conditioner");
  validate(cfg.precision);
  const Schedule s = make_schedule(cfg.schedule_kind, cfg.head.steps);

  const Rng root = Rng(cfg.seed).split(16 + static_cast<std::uint64_t>(stage_index));
  Rng data_rng = root.split(streams::kData);
  Rng train_rng = root.split(streams::kTrain);
  Rng inject_rng = root.split(streams::kInject);
  Rng mask_rng = root.split(streams::kMask);

  ArgenTrainResult res{start, start_ema, {}, {}, step_offset};
  AdamW head_opt(res.live.head.data().size(), cfg.optimizer);
  AdamW cond_opt(res.live.conditioner.data().size(), cfg.optimizer);

  const int G = cfg.batch_grids;
  const int K = stage.timestep_samples;
  const int n = ds.tokens_per_sample();
  const int C = cfg.conditioner.cond_dim;
  const bool labeled = ds.num_labels() > 0;

  Vec t_sum(static_cast<std::size_t>(cfg.t_buckets), 0.0);
  std::vector<long> t_count(static_cast<std::size_t>(cfg.t_buckets), 0);
  Vec r_sum(static_cast<std::size_t>(cfg.ratio_buckets), 0.0);
  std::vector<long> r_count(static_cast<std::size_t>(cfg.ratio_buckets), 0);

  std::vector<ConditionerCache> caches(static_cast<std::size_t>(G));
  std::vector<int> masked_counts(static_cast<std::size_t>(G));
  for (int it = 1; it <= stage.steps; ++it) {
    const long step = step_offset + it;
    const auto batch = sample_dataset(ds, G, data_rng);

    int total = 0;
    std::vector<TokenGrid> grids;
    std::vector<int> labels;
    grids.reserve(static_cast<std::size_t>(G));
    for (int g = 0; g < G; ++g) {
      TokenGrid grid = TokenGrid::from_tokens(batch[static_cast<std::size_t>(g)].tokens, kNullLabel);
      grid.mask = draw_mask(stage.mask, n, mask_rng);
      int label = labeled ? batch[static_cast<std::size_t>(g)].label : kNullLabel;
      if (train_rng.bernoulli(cfg.uncond_prob)) label = kNullLabel;
      grid.label = label;
      masked_counts[static_cast<std::size_t>(g)] = grid.masked_count();
      total += grid.masked_count();
      labels.push_back(label);
      grids.push_back(std::move(grid));
    }

    Eigen::MatrixXd x(ds.dim(), total), z(C, total);
    int col = 0;
    for (int g = 0; g < G; ++g) {
      const auto& grid = grids[static_cast<std::size_t>(g)];
      const auto out = conditioner_forward(res.live.conditioner, grid, labels[static_cast<std::size_t>(g)],
                                           &caches[static_cast<std::size_t>(g)]);
      const auto idx = grid.index_of_position();
      for (std::size_t i = 0; i < out.positions.size(); ++i, ++col) {
        x.col(col) = grid.values.col(idx[static_cast<std::size_t>(out.positions[i])]);
        z.col(col) = out.z.col(static_cast<Eigen::Index>(i));
      }
    }

    std::vector<int> ts(static_cast<std::size_t>(total) * K);
    for (auto& t : ts) t = static_cast<int>(train_rng.uniform_int(1, s.steps()));
    Eigen::MatrixXd eps(ds.dim(), total * K);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = train_rng.normal();

    const auto r = diffusion_loss(res.live.head, cfg.param, s, x, z, ts, eps, cfg.precision, inject_rng);
    check_finite(r.loss, "train_argen", step);

    Vec cond_grad(res.live.conditioner.data().size(), 0.0);
    col = 0;
    for (int g = 0; g < G; ++g) {
      const int m = masked_counts[static_cast<std::size_t>(g)];
      const Vec gg = conditioner_backward(res.live.conditioner, caches[static_cast<std::size_t>(g)],
                                          r.grads.z.middleCols(col, m));
      for (std::size_t i = 0; i < gg.size(); ++i) cond_grad[i] += gg[i];
      col += m;
    }
    head_opt.step(res.live.head.data(), r.grads.params);
    cond_opt.step(res.live.conditioner.data(), cond_grad);
    ema_update(res.ema.head.data(), res.live.head.data(), cfg.ema_momentum);
    ema_update(res.ema.conditioner.data(), res.live.conditioner.data(), cfg.ema_momentum);

    for (std::size_t j = 0; j < ts.size(); ++j) {
      const auto b = static_cast<std::size_t>(t_bucket_of(ts[j], s.steps(), cfg.t_buckets));
      t_sum[b] += r.per_sample[j];
      ++t_count[b];
    }
    col = 0;
    for (int g = 0; g < G; ++g) {
      const int m = masked_counts[static_cast<std::size_t>(g)];
      double sum = 0.0;
      for (int i = col * K; i < (col + m) * K; ++i) sum += r.per_sample[static_cast<std::size_t>(i)];
      const auto b = static_cast<std::size_t>(ratio_bucket_of(static_cast<double>(m) / n, cfg.ratio_buckets));
      r_sum[b] += sum / (m * K);
      ++r_count[b];
      col += m;
    }

    if (it % cfg.log_every == 0 || it == stage.steps) {
      double all_sum = 0.0;
      long all_count = 0;
      for (int b = 0; b < cfg.t_buckets; ++b) {
        all_sum += t_sum[b];
        all_count += t_count[b];
      }
      res.curve.push_back({step, -1, all_count ? all_sum / all_count : 0.0, all_count});
      for (int b = 0; b < cfg.t_buckets; ++b) {
        res.curve.push_back({step, b, t_count[b] ? t_sum[b] / t_count[b] : 0.0, t_count[b]});
      }
      for (int b = 0; b < cfg.ratio_buckets; ++b) {
        res.ratio_curve.push_back({step, b, r_count[b] ? r_sum[b] / r_count[b] : 0.0, r_count[b]});
      }
      std::fill(t_sum.begin(), t_sum.end(), 0.0);
      std::fill(t_count.begin(), t_count.end(), 0);
      std::fill(r_sum.begin(), r_sum.end(), 0.0);
      std::fill(r_count.begin(), r_count.end(), 0);
    }
  }
  res.steps_done = step_offset + stage.steps;
  return res;
}

ArgenTrainResult train_argen(const ArgenTrainConfig& cfg, const ToyDataset& ds) {
  const ArgenModel init = init_argen_model(cfg);
  ArgenTrainResult first = train_argen_stage(cfg, ds, cfg.stage1, 1, init, init, 0);
  ArgenTrainResult second =
      train_argen_stage(cfg, ds, cfg.stage2, 2, first.live, first.ema, first.steps_done);
  first.curve.insert(first.curve.end(), second.curve.begin(), second.curve.end());
  first.ratio_curve.insert(first.ratio_curve.end(), second.ratio_curve.begin(),
                           second.ratio_curve.end());
  second.curve = std::move(first.curve);
  second.ratio_curve = std::move(first.ratio_curve);
  return second;
}

std::vector<TokenGrid> generate_batch(const ConditionFn& condition, const TokenDenoiseFn& denoise,
                                      const Schedule& s, std::span<const int> labels,
                                      const GenerateConfig& cfg, std::uint64_t seed) {
  require(cfg.tokens_per_step >= 1, "generate: tokens_per_step must be >= 1");
  require(cfg.n >= 1 && cfg.d >= 1, "generate: n and d must be positive");
  require(std::isfinite(cfg.guidance.omega) && cfg.guidance.omega >= 0.0,
          "generate: omega must be finite and >= 0");
  validate(cfg.precision);
  const auto steps = make_step_list(s, cfg.sampler.steps, cfg.sampler.spacing);
  const bool guided = cfg.guidance.omega != 1.0;
  const Rng root(seed);

  std::vector<TokenGrid> out;
  out.reserve(labels.size());
  for (std::size_t gi = 0; gi < labels.size(); ++gi) {
    Rng rng = root.split(gi);
    const int label = labels[gi];
    TokenGrid grid = TokenGrid::all_masked(cfg.n, cfg.d, label);
    std::vector<int> order(static_cast<std::size_t>(cfg.n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = cfg.n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    }
    const auto idx = grid.index_of_position();

    for (int start = 0; start < cfg.n; start += cfg.tokens_per_step) {
      const int count = std::min(cfg.tokens_per_step, cfg.n - start);
      std::vector<int> pos(order.begin() + start, order.begin() + start + count);
      std::sort(pos.begin(), pos.end());
      const Eigen::MatrixXd zc = condition(grid, label, pos);
      const Eigen::MatrixXd zu = guided ? condition(grid, kNullLabel, pos) : Eigen::MatrixXd();
      require(zc.cols() == count, "generate: condition output has the wrong column count");

      Denoiser model = [&](int t, ConstSpan x_t, Branch b) {
        const Eigen::Map<const Eigen::MatrixXd> xm(x_t.data(), cfg.d, count);
        const Eigen::MatrixXd u = denoise(xm, t, b == Branch::conditional ? zc : zu);
        return Vec(u.data(), u.data() + u.size());
      };
      const Vec init = rng.normal_vec(static_cast<std::size_t>(cfg.d) * count);
      std::optional<GuidanceConfig> g;
      if (guided) g = cfg.guidance;
      const auto traj = sample_trajectory(model, s, cfg.param, steps, init, cfg.sampler, g,
                                          cfg.precision, rng);
      const Vec& x0 = traj.final_state();
      for (int i = 0; i < count; ++i) {
        const int j = idx[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])];
        for (int c = 0; c < cfg.d; ++c) {
          const double v = x0[static_cast<std::size_t>(i * cfg.d + c)];
          if (!std::isfinite(v)) throw std::runtime_error("generate: non-finite token");
          grid.values(c, j) = v;
        }
        grid.mask[static_cast<std::size_t>(j)] = 0;
      }
    }
    out.push_back(std::move(grid));
  }
  return out;
}

std::vector<TokenGrid> generate_batch(const ArgenModel& model, const Schedule& s,
                                      std::span<const int> labels, const GenerateConfig& cfg,
                                      std::uint64_t seed) {
  require(model.head.config().steps == s.steps(), "generate: head T does not match the schedule");
  ConditionFn condition = [&](const TokenGrid& grid, int label, std::span<const int> positions) {
    const auto out = conditioner_forward(model.conditioner, grid, label);
    Eigen::MatrixXd z(out.z.rows(), static_cast<Eigen::Index>(positions.size()));
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto it = std::lower_bound(out.positions.begin(), out.positions.end(), positions[i]);
      require(it != out.positions.end() && *it == positions[i], "generate: position is not masked");
      z.col(static_cast<Eigen::Index>(i)) = out.z.col(it - out.positions.begin());
    }
    return z;
  };
  TokenDenoiseFn denoise = [&](const Eigen::MatrixXd& x_t, int t, const Eigen::MatrixXd& z) {
    const std::vector<int> tv(static_cast<std::size_t>(x_t.cols()), t);
    return head_forward(model.head, x_t, tv, z, cfg.precision);
  };
  return generate_batch(condition, denoise, s, labels, cfg, seed);
}

TokenGrid generate(const ArgenModel& model, const Schedule& s, int label, const GenerateConfig& cfg,
                   std::uint64_t seed) {
  const int labels[1] = {label};
  return generate_batch(model, s, labels, cfg, seed).front();
}

double argen_eval_loss(const ArgenModel& model, const Parameterization& p, const Schedule& s,
                       const std::vector<TokenGrid>& grids, const std::vector<int>& labels,
                       std::uint64_t noise_seed, int timestep_samples) {
  require(grids.size() == labels.size() && !grids.empty(), "argen_eval_loss: grids/labels mismatch");
  require(timestep_samples >= 1, "argen_eval_loss: K must be >= 1");
  const Rng root(noise_seed);
  const PrecisionModel exact{};
  double sum = 0.0;
  long count = 0;
  for (std::size_t g = 0; g < grids.size(); ++g) {
    const auto& grid = grids[g];
    const auto out = conditioner_forward(model.conditioner, grid, labels[g]);
    const int m = static_cast<int>(out.positions.size());
    if (m == 0) continue;
    const auto idx = grid.index_of_position();
    Eigen::MatrixXd x(grid.d, m);
    for (int i = 0; i < m; ++i) x.col(i) = grid.values.col(idx[static_cast<std::size_t>(out.positions[static_cast<std::size_t>(i)])]);
    Rng rng = root.split(g);
    std::vector<int> ts(static_cast<std::size_t>(m) * timestep_samples);
    for (auto& t : ts) t = static_cast<int>(rng.uniform_int(1, s.steps()));
    Eigen::MatrixXd eps(grid.d, m * timestep_samples);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    const auto r = diffusion_loss(model.head, p, s, x, out.z, ts, eps, exact, rng, false);
    sum += r.loss * static_cast<double>(r.per_sample.size());
    count += static_cast<long>(r.per_sample.size());
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace angdiff
