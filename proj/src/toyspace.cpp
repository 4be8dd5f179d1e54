#include "angdiff/toyspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace angdiff {

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::gmm2d:
      return "gmm2d";
    case DatasetKind::checkerboard:
      return "checkerboard";
    case DatasetKind::correlated_grid:
      return "correlated-grid";
  }
  return "unknown";
}

DatasetKind dataset_kind_from_string(std::string_view name) {
  if (name == "gmm2d") return DatasetKind::gmm2d;
  if (name == "checkerboard") return DatasetKind::checkerboard;
  if (name == "correlated-grid") return DatasetKind::correlated_grid;
  throw std::invalid_argument("unknown dataset kind: " + std::string(name));
}

ToyDataset ToyDataset::gmm2d(std::vector<GmmComponent> components, bool labeled) {
  require(!components.empty(), "gmm2d: need at least one component");
  ToyDataset ds;
  ds.kind_ = DatasetKind::gmm2d;
  ds.dim_ = static_cast<int>(components.front().mean.size());
  require(ds.dim_ >= 1, "gmm2d: empty mean");
  double total = 0.0;
  for (const auto& c : components) {
    require(static_cast<int>(c.mean.size()) == ds.dim_ &&
                static_cast<int>(c.stddev.size()) == ds.dim_,
            "gmm2d: inconsistent component dimensions");
    require(c.weight > 0.0, "gmm2d: weights must be positive");
    for (double s : c.stddev) require(s > 0.0, "gmm2d: stddev must be positive");
    total += c.weight;
  }
  for (auto& c : components) c.weight /= total;
  ds.components_ = std::move(components);
  ds.labeled_ = labeled;
  ds.num_labels_ = labeled ? static_cast<int>(ds.components_.size()) : 0;
  ds.finalize_moments();
  return ds;
}

ToyDataset ToyDataset::default_gmm2d(bool labeled) {
  std::vector<GmmComponent> comps;
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8;
    comps.push_back({{4.0 * std::cos(a), 4.0 * std::sin(a)}, {0.35, 0.35}, 1.0});
  }
  return gmm2d(std::move(comps), labeled);
}

ToyDataset ToyDataset::checkerboard(CheckerboardSpec spec) {
  require(spec.cells >= 2 && spec.half_width > 0.0, "checkerboard: invalid spec");
  ToyDataset ds;
  ds.kind_ = DatasetKind::checkerboard;
  ds.dim_ = 2;
  ds.board_ = spec;
  ds.finalize_moments();
  return ds;
}

ToyDataset ToyDataset::correlated_grid(CorrelatedGridSpec spec) {
  require(spec.n >= 1 && spec.modes >= 1, "correlated-grid: invalid spec");
  require(spec.offset_std >= 0.0 && spec.token_std >= 0.0 && spec.radius >= 0.0,
          "correlated-grid: negative scale");
  ToyDataset ds;
  ds.kind_ = DatasetKind::correlated_grid;
  ds.dim_ = 2;
  ds.tokens_ = spec.n;
  ds.grid_ = spec;
  ds.labeled_ = true;
  ds.num_labels_ = spec.modes;
  ds.finalize_moments();
  return ds;
}

namespace {

Vec mode_mean(const CorrelatedGridSpec& g, int k) {
  const double a = 2.0 * std::numbers::pi * k / g.modes;
  return {g.radius * std::cos(a), g.radius * std::sin(a)};
}

Vec position_shift(const CorrelatedGridSpec& g, int i) {
  const double a = 2.0 * std::numbers::pi * i / g.n;
  return {g.position_amp * std::cos(a), g.position_amp * std::sin(a)};
}

}  // namespace

void ToyDataset::finalize_moments() {
  mean_.assign(static_cast<std::size_t>(dim_), 0.0);
  Vec second(static_cast<std::size_t>(dim_), 0.0);
  switch (kind_) {
    case DatasetKind::gmm2d:
      for (const auto& c : components_) {
        for (int j = 0; j < dim_; ++j) {
          mean_[j] += c.weight * c.mean[j];
          second[j] += c.weight * (c.stddev[j] * c.stddev[j] + c.mean[j] * c.mean[j]);
        }
      }
      break;
    case DatasetKind::checkerboard: {
      const double side = 2.0 * board_.half_width / board_.cells;
      int allowed = 0;
      for (int i = 0; i < board_.cells; ++i) {
        for (int j = 0; j < board_.cells; ++j) {
          if ((i + j) % 2 != 0) continue;
          ++allowed;
          const double cx = -board_.half_width + (i + 0.5) * side;
          const double cy = -board_.half_width + (j + 0.5) * side;
          mean_[0] += cx;
          mean_[1] += cy;
          second[0] += cx * cx + side * side / 12.0;
          second[1] += cy * cy + side * side / 12.0;
        }
      }
      for (int j = 0; j < 2; ++j) {
        mean_[j] /= allowed;
        second[j] /= allowed;
      }
      break;
    }
    case DatasetKind::correlated_grid: {
      const auto& g = grid_;
      const double noise = g.offset_std * g.offset_std + g.token_std * g.token_std;
      for (int k = 0; k < g.modes; ++k) {
        const Vec m = mode_mean(g, k);
        for (int i = 0; i < g.n; ++i) {
          const Vec c = position_shift(g, i);
          for (int j = 0; j < 2; ++j) {
            const double mu = m[j] + c[j];
            mean_[j] += mu;
            second[j] += mu * mu + noise;
          }
        }
      }
      const double count = static_cast<double>(g.modes) * g.n;
      for (int j = 0; j < 2; ++j) {
        mean_[j] /= count;
        second[j] /= count;
      }
      break;
    }
  }
  std_.resize(static_cast<std::size_t>(dim_));
  for (int j = 0; j < dim_; ++j) {
    const double var = second[j] - mean_[j] * mean_[j];
    require(var > 0.0, "dataset has a degenerate component");
    std_[j] = std::sqrt(var);
  }
}

void ToyDataset::whiten_inplace(Eigen::Ref<Eigen::MatrixXd> tokens) const {
  require(tokens.rows() == dim_, "whiten: dimension mismatch");
  for (Eigen::Index c = 0; c < tokens.cols(); ++c) {
    for (int j = 0; j < dim_; ++j) tokens(j, c) = (tokens(j, c) - mean_[j]) / std_[j];
  }
}

void ToyDataset::unwhiten_inplace(Eigen::Ref<Eigen::MatrixXd> tokens) const {
  require(tokens.rows() == dim_, "unwhiten: dimension mismatch");
  for (Eigen::Index c = 0; c < tokens.cols(); ++c) {
    for (int j = 0; j < dim_; ++j) tokens(j, c) = tokens(j, c) * std_[j] + mean_[j];
  }
}

Eigen::MatrixXd ToyDataset::draw_raw_with_label(Rng& rng, int label) const {
  Eigen::MatrixXd out(dim_, tokens_);
  switch (kind_) {
    case DatasetKind::gmm2d: {
      require(label >= 0 && label < static_cast<int>(components_.size()), "gmm2d: bad label");
      const auto& c = components_[static_cast<std::size_t>(label)];
      for (int j = 0; j < dim_; ++j) out(j, 0) = c.mean[j] + c.stddev[j] * rng.normal();
      break;
    }
    case DatasetKind::checkerboard: {
      const int half = (board_.cells * board_.cells + 1) / 2;
      int pick = static_cast<int>(rng.uniform_int(0, half - 1));
      const double side = 2.0 * board_.half_width / board_.cells;
      for (int i = 0; i < board_.cells; ++i) {
        for (int j = 0; j < board_.cells; ++j) {
          if ((i + j) % 2 != 0) continue;
          if (pick-- == 0) {
            out(0, 0) = -board_.half_width + (i + rng.uniform()) * side;
            out(1, 0) = -board_.half_width + (j + rng.uniform()) * side;
          }
        }
      }
      break;
    }
    case DatasetKind::correlated_grid: {
      const auto& g = grid_;
      require(label >= 0 && label < g.modes, "correlated-grid: bad label");
      const Vec m = mode_mean(g, label);
      const double ox = g.offset_std * rng.normal();
      const double oy = g.offset_std * rng.normal();
      for (int i = 0; i < g.n; ++i) {
        const Vec c = position_shift(g, i);
        out(0, i) = m[0] + ox + c[0] + g.token_std * rng.normal();
        out(1, i) = m[1] + oy + c[1] + g.token_std * rng.normal();
      }
      break;
    }
  }
  return out;
}

Eigen::MatrixXd ToyDataset::draw_raw(Rng& rng, int* label) const {
  int k = 0;
  switch (kind_) {
    case DatasetKind::gmm2d: {
      const double u = rng.uniform();
      double acc = 0.0;
      k = static_cast<int>(components_.size()) - 1;
      for (std::size_t i = 0; i < components_.size(); ++i) {
        acc += components_[i].weight;
        if (u < acc) {
          k = static_cast<int>(i);
          break;
        }
      }
      break;
    }
    case DatasetKind::checkerboard:
      k = 0;
      break;
    case DatasetKind::correlated_grid:
      k = static_cast<int>(rng.uniform_int(0, grid_.modes - 1));
      break;
  }
  if (label) *label = labeled_ ? k : -1;
  return draw_raw_with_label(rng, k);
}

nlohmann::json ToyDataset::manifest() const {
  nlohmann::json j{{"kind", to_string(kind_)}};
  switch (kind_) {
    case DatasetKind::gmm2d: {
      auto comps = nlohmann::json::array();
      for (const auto& c : components_) {
        comps.push_back({{"mean", c.mean}, {"stddev", c.stddev}, {"weight", c.weight}});
      }
      j["components"] = comps;
      j["labeled"] = labeled_;
      break;
    }
    case DatasetKind::checkerboard:
      j["cells"] = board_.cells;
      j["half_width"] = board_.half_width;
      break;
    case DatasetKind::correlated_grid:
      j["n"] = grid_.n;
      j["modes"] = grid_.modes;
      j["radius"] = grid_.radius;
      j["offset_std"] = grid_.offset_std;
      j["token_std"] = grid_.token_std;
      j["position_amp"] = grid_.position_amp;
      break;
  }
  return j;
}

ToyDataset ToyDataset::from_manifest(const nlohmann::json& j) {
  switch (dataset_kind_from_string(j.at("kind").get<std::string>())) {
    case DatasetKind::gmm2d: {
      if (!j.contains("components")) return default_gmm2d(j.value("labeled", false));
      std::vector<GmmComponent> comps;
      for (const auto& c : j.at("components")) {
        comps.push_back({c.at("mean").get<Vec>(), c.at("stddev").get<Vec>(),
                         c.value("weight", 1.0)});
      }
      return gmm2d(std::move(comps), j.value("labeled", false));
    }
    case DatasetKind::checkerboard: {
      CheckerboardSpec s;
      s.cells = j.value("cells", s.cells);
      s.half_width = j.value("half_width", s.half_width);
      return checkerboard(s);
    }
    case DatasetKind::correlated_grid: {
      CorrelatedGridSpec s;
      s.n = j.value("n", s.n);
      s.modes = j.value("modes", s.modes);
      s.radius = j.value("radius", s.radius);
      s.offset_std = j.value("offset_std", s.offset_std);
      s.token_std = j.value("token_std", s.token_std);
      s.position_amp = j.value("position_amp", s.position_amp);
      return correlated_grid(s);
    }
  }
  throw std::invalid_argument("unreachable dataset kind");
}

std::vector<GridSample> sample_dataset(const ToyDataset& ds, int count, Rng& rng) {
  require(count >= 1, "sample_dataset: count must be >= 1");
  std::vector<GridSample> out(static_cast<std::size_t>(count));
  for (auto& s : out) {
    s.tokens = ds.draw_raw(rng, &s.label);
    ds.whiten_inplace(s.tokens);
  }
  return out;
}

std::vector<GridSample> sample_dataset_with_label(const ToyDataset& ds, int count, int label,
                                                  Rng& rng) {
  require(count >= 1, "sample_dataset: count must be >= 1");
  std::vector<GridSample> out(static_cast<std::size_t>(count));
  for (auto& s : out) {
    s.tokens = ds.draw_raw_with_label(rng, label);
    s.label = label;
    ds.whiten_inplace(s.tokens);
  }
  return out;
}

Eigen::MatrixXd sample_tokens(const ToyDataset& ds, int count, Rng& rng, std::vector<int>* labels) {
  require(count >= 1, "sample_tokens: count must be >= 1");
  Eigen::MatrixXd out(ds.dim(), count);
  if (labels) labels->assign(static_cast<std::size_t>(count), -1);
  int col = 0;
  while (col < count) {
    int label = -1;
    Eigen::MatrixXd g = ds.draw_raw(rng, &label);
    ds.whiten_inplace(g);
    for (Eigen::Index i = 0; i < g.cols() && col < count; ++i, ++col) {
      out.col(col) = g.col(i);
      if (labels) (*labels)[static_cast<std::size_t>(col)] = label;
    }
  }
  return out;
}

double hist_kl(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int bins) {
  const auto d = a.rows();
  require(d == b.rows(), "hist_kl: dimension mismatch");
  require(d == 1 || d == 2, "hist_kl: only 1D and 2D samples are supported (use mmd_rbf)");
  require(bins >= 8, "hist_kl: need at least 8 bins per axis");
  require(a.cols() >= 1000 && b.cols() >= 1000, "hist_kl: need at least 1000 samples per set");

  std::vector<double> lo(static_cast<std::size_t>(d)), width(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mn = b.row(j).minCoeff();
    const double mx = b.row(j).maxCoeff();
    const double pad = 0.1 * std::max(mx - mn, 1e-12);
    lo[j] = mn - pad;
    width[j] = (mx - mn + 2 * pad) / bins;
  }
  const std::size_t cells = d == 1 ? bins : static_cast<std::size_t>(bins) * bins;
  auto histogram = [&](const Eigen::MatrixXd& s) {
    std::vector<double> h(cells, 0.0);
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      std::size_t idx = 0;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double v = s(j, c);
        long k = std::isfinite(v) ? static_cast<long>(std::floor((v - lo[j]) / width[j]))
                                  : (v > 0 ? bins - 1 : 0);
        k = std::clamp<long>(k, 0, bins - 1);
        idx = idx * bins + static_cast<std::size_t>(k);
      }
      h[idx] += 1.0;
    }
    return h;
  };
  const auto ha = histogram(a);
  const auto hb = histogram(b);
  const double na = static_cast<double>(a.cols()) + 0.5 * cells;
  const double nb = static_cast<double>(b.cols()) + 0.5 * cells;
  double kl = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    const double p = (ha[i] + 0.5) / na;
    const double q = (hb[i] + 0.5) / nb;
    kl += p * std::log(p / q);
  }
  return kl;
}

namespace {

double kernel_mean(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double inv2h2, bool same) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    for (Eigen::Index j = same ? i + 1 : 0; j < y.cols(); ++j) {
      sum += std::exp(-(x.col(i) - y.col(j)).squaredNorm() * inv2h2);
    }
  }
  if (same) {
    const double n = static_cast<double>(x.cols());
    return 2.0 * sum / (n * (n - 1.0));
  }
  return sum / (static_cast<double>(x.cols()) * static_cast<double>(y.cols()));
}

}  // namespace

double mmd_rbf(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double bandwidth) {
  require(bandwidth > 0.0, "mmd_rbf: bandwidth must be positive");
  require(a.rows() == b.rows(), "mmd_rbf: dimension mismatch");
  require(a.cols() >= 2 && b.cols() >= 2, "mmd_rbf: need at least 2 samples per set");
  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  return kernel_mean(a, a, inv2h2, true) + kernel_mean(b, b, inv2h2, true) -
         2.0 * kernel_mean(a, b, inv2h2, false);
}

double mmd_permutation_std(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double bandwidth,
                           int permutations, Rng& rng) {
  require(permutations >= 2, "mmd_permutation_std: need at least 2 permutations");
  Eigen::MatrixXd pooled(a.rows(), a.cols() + b.cols());
  pooled << a, b;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pooled.cols()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  double sum = 0.0, sum2 = 0.0;
  for (int p = 0; p < permutations; ++p) {
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
    Eigen::MatrixXd pa(a.rows(), a.cols()), pb(b.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.cols(); ++i) pa.col(i) = pooled.col(idx[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = 0; i < b.cols(); ++i) {
      pb.col(i) = pooled.col(idx[static_cast<std::size_t>(a.cols() + i)]);
    }
    const double m = mmd_rbf(pa, pb, bandwidth);
    sum += m;
    sum2 += m * m;
  }
  const double mean = sum / permutations;
  return std::sqrt(std::max(0.0, sum2 / permutations - mean * mean));
}

GmmOracle::GmmOracle(const ToyDataset& ds, Schedule schedule)
    : schedule_(std::move(schedule)), dim_(ds.dim()) {
  require(ds.kind() == DatasetKind::gmm2d, "GmmOracle: dataset must be a Gaussian mixture");
  for (const auto& c : ds.components()) {
    Vec m(static_cast<std::size_t>(dim_)), v(static_cast<std::size_t>(dim_));
    for (int j = 0; j < dim_; ++j) {
      m[j] = (c.mean[j] - ds.norm_mean()[j]) / ds.norm_std()[j];
      const double s = c.stddev[j] / ds.norm_std()[j];
      v[j] = s * s;
    }
    means_.push_back(std::move(m));
    vars_.push_back(std::move(v));
    log_weights_.push_back(std::log(c.weight));
  }
}

Vec GmmOracle::posterior_mean(int t, ConstSpan x_t, int label) const {
  require(x_t.size() % static_cast<std::size_t>(dim_) == 0, "GmmOracle: bad input size");
  require(label < static_cast<int>(means_.size()), "GmmOracle: bad label");
  const double c = schedule_.cos_phase(t);
  const double s = schedule_.sin_phase(t);
  const std::size_t K = means_.size();
  Vec out(x_t.size());
  std::vector<double> logp(K);
  for (std::size_t tok = 0; tok < x_t.size() / dim_; ++tok) {
    const double* xt = x_t.data() + tok * dim_;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      if (label >= 0 && static_cast<int>(k) != label) {
        logp[k] = -std::numeric_limits<double>::infinity();
        continue;
      }
      double lp = log_weights_[k];
      for (int j = 0; j < dim_; ++j) {
        const double var = c * c * vars_[k][j] + s * s;
        const double r = xt[j] - c * means_[k][j];
        lp += -0.5 * r * r / var - 0.5 * std::log(var);
      }
      logp[k] = lp;
      best = std::max(best, lp);
    }
    double norm = 0.0;
    for (auto& lp : logp) {
      lp = std::exp(lp - best);
      norm += lp;
    }
    for (int j = 0; j < dim_; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        if (logp[k] == 0.0) continue;
        const double var = c * c * vars_[k][j] + s * s;
        const double mk = means_[k][j] + c * vars_[k][j] / var * (xt[j] - c * means_[k][j]);
        acc += logp[k] * mk;
      }
      out[tok * dim_ + j] = acc / norm;
    }
  }
  return out;
}

Vec GmmOracle::predict(const Parameterization& p, int t, ConstSpan x_t, int label) const {
  const Vec x_hat = posterior_mean(t, x_t, label);
  const double c = schedule_.cos_phase(t);
  const double s = schedule_.sin_phase(t);
  Vec eps_hat(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) eps_hat[i] = (x_t[i] - c * x_hat[i]) / s;
  return target(p, schedule_, t, x_hat, eps_hat).values;
}

}  // namespace angdiff
