#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"

#include "angdiff/toyspace.hpp"

using namespace angdiff;

namespace {

double mixture_cdf(const ToyDataset& ds, int dim, double x) {
  double c = 0.0;
  for (const auto& comp : ds.components()) {
    c += comp.weight * 0.5 * std::erfc(-(x - comp.mean[dim]) / (comp.stddev[dim] * std::sqrt(2.0)));
  }
  return c;
}

// Posterior mean of a diagonal Gaussian mixture in whitened coordinates,
// written out directly from Bayes' rule in extended precision.
Vec reference_posterior_mean(const ToyDataset& ds, double ab, const Vec& xt) {
  const int D = ds.dim();
  std::vector<long double> logw;
  std::vector<Vec> means;
  for (const auto& comp : ds.components()) {
    long double lw = std::log(static_cast<long double>(comp.weight));
    Vec m(D);
    for (int d = 0; d < D; ++d) {
      const long double mu = (comp.mean[d] - ds.norm_mean()[d]) / ds.norm_std()[d];
      const long double var = std::pow(comp.stddev[d] / ds.norm_std()[d], 2.0L);
      const long double marg = ab * var + (1.0L - ab);
      const long double r = xt[d] - std::sqrt(static_cast<long double>(ab)) * mu;
      lw += -0.5L * std::log(marg) - 0.5L * r * r / marg;
      m[d] = static_cast<double>(mu + std::sqrt(static_cast<long double>(ab)) * var / marg * r);
    }
    logw.push_back(lw);
    means.push_back(m);
  }
  const long double mx = *std::max_element(logw.begin(), logw.end());
  long double z = 0;
  for (auto& l : logw) z += std::exp(l - mx);
  Vec out(D, 0.0);
  for (std::size_t k = 0; k < logw.size(); ++k) {
    const double w = static_cast<double>(std::exp(logw[k] - mx) / z);
    for (int d = 0; d < D; ++d) out[d] += w * means[k][d];
  }
  return out;
}

}  // namespace

TEST_CASE("default gmm moments in closed form") {
  const auto ds = ToyDataset::default_gmm2d();
  CHECK(ds.components().size() == 8);
  // Eight modes on a circle of radius 4: per-axis variance r^2 / 2 + s^2.
  const double sd = std::sqrt(8.0 + 0.35 * 0.35);
  CHECK(ds.norm_std()[0] == doctest::Approx(sd).epsilon(1e-12));
  CHECK(ds.norm_std()[1] == doctest::Approx(sd).epsilon(1e-12));
  CHECK(std::abs(ds.norm_mean()[0]) < 1e-12);
}

TEST_CASE("whitened samples have zero mean and unit variance") {
  Rng rng(1);
  for (const auto& ds : {ToyDataset::default_gmm2d(), ToyDataset::checkerboard(), ToyDataset::correlated_grid()}) {
    const auto x = sample_tokens(ds, 200000, rng);
    for (int d = 0; d < 2; ++d) {
      const double m = x.row(d).mean();
      const double v = (x.row(d).array() - m).square().mean();
      CHECK(std::abs(m) < 0.03);
      CHECK(v == doctest::Approx(1.0).epsilon(0.03));
    }
  }
}

TEST_CASE("gmm marginal passes a kolmogorov-smirnov test") {
  const auto ds = ToyDataset::default_gmm2d();
  Rng rng(2);
  const int n = 20000;
  std::vector<double> xs;
  for (int i = 0; i < n; ++i) xs.push_back(ds.draw_raw(rng, nullptr)(0, 0));
  std::sort(xs.begin(), xs.end());
  double dmax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = mixture_cdf(ds, 0, xs[i]);
    dmax = std::max({dmax, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  // 1% critical value.
  CHECK(dmax < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("checkerboard draws land on even cells") {
  const auto ds = ToyDataset::checkerboard();
  const auto& b = ds.checkerboard_spec();
  const double side = 2 * b.half_width / b.cells;
  Rng rng(3);
  for (int i = 0; i < 5000; ++i) {
    const auto p = ds.draw_raw(rng, nullptr);
    const int cx = static_cast<int>(std::floor((p(0, 0) + b.half_width) / side));
    const int cy = static_cast<int>(std::floor((p(1, 0) + b.half_width) / side));
    REQUIRE(cx >= 0);
    REQUIRE(cx < b.cells);
    REQUIRE((cx + cy) % 2 == 0);
  }
}

TEST_CASE("correlated grid tokens share the labelled mode") {
  CorrelatedGridSpec spec;
  spec.offset_std = 0.0;
  spec.token_std = 0.0;
  const auto ds = ToyDataset::correlated_grid(spec);
  Rng rng(4);
  const auto g = ds.draw_raw_with_label(rng, 3);
  CHECK(g.cols() == 16);
  const double a = 2 * std::numbers::pi * 3 / 8;
  // Position displacements sum to zero over the ring.
  CHECK(g.row(0).mean() == doctest::Approx(3.0 * std::cos(a)));
  CHECK(g.row(1).mean() == doctest::Approx(3.0 * std::sin(a)));
  int label = -1;
  ds.draw_raw(rng, &label);
  CHECK(label >= 0);
  CHECK(label < 8);
  CHECK_THROWS(ds.draw_raw_with_label(rng, 8));
}

TEST_CASE("manifest round trip") {
  for (const auto& ds : {ToyDataset::default_gmm2d(true), ToyDataset::checkerboard(), ToyDataset::correlated_grid()}) {
    const auto back = ToyDataset::from_manifest(nlohmann::json::parse(ds.manifest().dump()));
    CHECK(back.manifest() == ds.manifest());
    CHECK(back.norm_std() == ds.norm_std());
  }
}

TEST_CASE("hist_kl and mmd separate same from shifted distributions") {
  const auto ds = ToyDataset::default_gmm2d();
  Rng rng(5);
  const auto a = sample_tokens(ds, 4000, rng);
  const auto b = sample_tokens(ds, 4000, rng);
  Eigen::MatrixXd shifted = sample_tokens(ds, 4000, rng);
  shifted.row(0).array() += 0.5;
  CHECK(hist_kl(a, b, 16) < 0.05);
  CHECK(hist_kl(shifted, b, 16) > 0.2);
  CHECK(hist_kl(b, b, 16) == doctest::Approx(0.0).epsilon(1e-12));

  const auto as = sample_tokens(ds, 500, rng), bs = sample_tokens(ds, 500, rng);
  Eigen::MatrixXd ss = sample_tokens(ds, 500, rng);
  ss.row(0).array() += 0.5;
  const double null_std = mmd_permutation_std(as, bs, 0.5, 20, rng);
  CHECK(std::abs(mmd_rbf(as, bs, 0.5)) < 4 * null_std);
  CHECK(mmd_rbf(ss, bs, 0.5) > 4 * null_std);
  CHECK_THROWS(hist_kl(a.leftCols(10), b, 16));
}

TEST_CASE("gmm oracle posterior mean matches bayes rule") {
  const auto ds = ToyDataset::gmm2d({GmmComponent{{0.0, 1.0}, {0.5, 0.2}, 1.0},
                                     GmmComponent{{3.0, -1.0}, {0.3, 0.7}, 2.0},
                                     GmmComponent{{-2.0, 2.0}, {1.0, 0.4}, 0.5}},
                                    true);
  const auto s = make_schedule(ScheduleKind::cosine, 1000);
  const GmmOracle oracle(ds, s);
  Rng rng(6);
  for (int t : {1, 100, 500, 900, 1000}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Vec xt = rng.normal_vec(2);
      const Vec got = oracle.posterior_mean(t, xt);
      const Vec want = reference_posterior_mean(ds, s.alpha_bar(t), xt);
      for (int d = 0; d < 2; ++d) CHECK(got[d] == doctest::Approx(want[d]).epsilon(1e-9));
    }
  }
  // Restricting to one label changes the estimate.
  const Vec xt{0.3, -0.2};
  const Vec lab = oracle.posterior_mean(400, xt, 1);
  const Vec all = oracle.posterior_mean(400, xt);
  CHECK(lab != all);
  // predict() is the posterior mean expressed in x-space for x-prediction.
  const Vec px = oracle.predict(Parameterization::x_pred(), 400, xt);
  CHECK(px[0] == doctest::Approx(all[0]));
}

TEST_CASE("gmm oracle beats linear shrinkage") {
  const auto ds = ToyDataset::default_gmm2d();
  const auto s = make_schedule(ScheduleKind::cosine, 1000);
  const GmmOracle oracle(ds, s);
  Rng rng(7);
  const int n = 20000;
  const auto x = sample_tokens(ds, n, rng);
  double err = 0, base = 0;
  for (int i = 0; i < n; ++i) {
    const Vec x0{x(0, i), x(1, i)};
    const Vec e = rng.normal_vec(2);
    const Vec xt = forward_diffuse(s, 300, x0, e);
    const Vec m = oracle.posterior_mean(300, xt);
    // The Bayes estimator beats the linear shrinkage estimator.
    const double lin = std::sqrt(s.alpha_bar(300));
    for (int d = 0; d < 2; ++d) {
      err += (m[d] - x0[d]) * (m[d] - x0[d]);
      base += (lin * xt[d] - x0[d]) * (lin * xt[d] - x0[d]);
    }
  }
  CHECK(err < base);
}
