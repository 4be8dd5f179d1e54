#include <cmath>
#include <vector>

#include "doctest.h"

#include "angdiff/head.hpp"
#include "angdiff/toyspace.hpp"

using namespace angdiff;

namespace {

HeadConfig small_config(int cond_dim, HeadNonlinearity nl = HeadNonlinearity::standard) {
  HeadConfig c;
  c.cond_dim = cond_dim;
  c.width = 32;
  c.depth = 2;
  c.steps = 100;
  c.nonlinearity = nl;
  return c;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

double probe(const HeadParams& hp, const Eigen::MatrixXd& x, const std::vector<int>& t,
             const Eigen::MatrixXd& z, const Eigen::MatrixXd& w) {
  return head_forward(hp, x, t, z, PrecisionModel{}).cwiseProduct(w).sum();
}

}  // namespace

TEST_CASE("head backward matches central differences") {
  Rng rng(1);
  for (auto nl : {HeadNonlinearity::standard, HeadNonlinearity::linearized}) {
    auto hp = HeadParams::init(small_config(3, nl), rng);
    // Perturb the zero-initialized tensors so every path carries gradient.
    for (double& v : hp.data()) v += 0.05 * rng.normal();
    const int B = 5;
    const Eigen::MatrixXd x = random_matrix(2, B, rng), z = random_matrix(3, B, rng), w = random_matrix(2, B, rng);
    const std::vector<int> t{1, 17, 50, 99, 100};
    HeadCache cache;
    head_forward(hp, x, t, z, PrecisionModel{}, &cache);
    const auto g = head_backward(hp, cache, w);
    REQUIRE(g.params.size() == hp.data().size());

    const double h = 1e-6;
    double worst = 0.0;
    for (int k = 0; k < 300; ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(hp.data().size()) - 1));
      const double keep = hp.data()[i];
      hp.data()[i] = keep + h;
      const double up = probe(hp, x, t, z, w);
      hp.data()[i] = keep - h;
      const double dn = probe(hp, x, t, z, w);
      hp.data()[i] = keep;
      const double fd = (up - dn) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.params[i]) / (1e-4 + std::abs(fd)));
    }
    CHECK(worst < 1e-5);

    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < B; ++c) {
        Eigen::MatrixXd xp = x, xm = x;
        xp(r, c) += h;
        xm(r, c) -= h;
        const double fd = (probe(hp, xp, t, z, w) - probe(hp, xm, t, z, w)) / (2 * h);
        CHECK(g.x_t(r, c) == doctest::Approx(fd).epsilon(1e-5).scale(1e-4));
      }
    }
    for (int r = 0; r < 3; ++r) {
      Eigen::MatrixXd zp = z, zm = z;
      zp(r, 2) += h;
      zm(r, 2) -= h;
      const double fd = (probe(hp, x, t, zp, w) - probe(hp, x, t, zm, w)) / (2 * h);
      CHECK(g.z(r, 2) == doctest::Approx(fd).epsilon(1e-5).scale(1e-4));
    }
  }
}

TEST_CASE("diffusion loss gradient matches central differences") {
  Rng rng(2);
  auto hp = HeadParams::init(small_config(0), rng);
  for (double& v : hp.data()) v += 0.05 * rng.normal();
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  const int B = 4, K = 2;
  const Eigen::MatrixXd x = random_matrix(2, B, rng), eps = random_matrix(2, B * K, rng);
  const Eigen::MatrixXd z(0, B);
  const std::vector<int> t{3, 40, 60, 100, 1, 77, 20, 95};
  for (const auto& p : {Parameterization::v_pred(), Parameterization::eps_pred(), Parameterization::custom(0.4, 2.0)}) {
    Rng r(0);
    const auto res = diffusion_loss(hp, p, s, x, z, t, eps, PrecisionModel{}, r);
    CHECK(res.per_sample.size() == static_cast<std::size_t>(B * K));
    double mean = 0;
    for (double v : res.per_sample) mean += v;
    CHECK(res.loss == doctest::Approx(mean / (B * K)));
    for (int k = 0; k < 40; ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(hp.data().size()) - 1));
      const double keep = hp.data()[i], h = 1e-6;
      hp.data()[i] = keep + h;
      const double up = diffusion_loss(hp, p, s, x, z, t, eps, PrecisionModel{}, r, false).loss;
      hp.data()[i] = keep - h;
      const double dn = diffusion_loss(hp, p, s, x, z, t, eps, PrecisionModel{}, r, false).loss;
      hp.data()[i] = keep;
      CHECK(res.grads.params[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5).scale(1e-4));
    }
  }
}

TEST_CASE("linearized head is affine in its input") {
  Rng rng(3);
  auto lin = HeadParams::init(small_config(0, HeadNonlinearity::linearized), rng);
  auto std_hp = HeadParams(small_config(0));
  std_hp.data() = lin.data();
  for (double& v : lin.data()) v += 0.05 * rng.normal();
  std_hp.data() = lin.data();
  const Vec a{0.3, -1.0}, b{-2.0, 0.7}, mid{-0.85, -0.15};
  const Vec z;
  PrecisionModel exact;
  const Vec fa = head_forward(lin, a, 30, z, exact), fb = head_forward(lin, b, 30, z, exact),
            fm = head_forward(lin, mid, 30, z, exact);
  for (int d = 0; d < 2; ++d) CHECK(std::abs(fa[d] + fb[d] - 2 * fm[d]) < 1e-12);
  const Vec ga = head_forward(std_hp, a, 30, z, exact), gb = head_forward(std_hp, b, 30, z, exact),
            gm = head_forward(std_hp, mid, 30, z, exact);
  CHECK(std::abs(ga[0] + gb[0] - 2 * gm[0]) > 1e-6);
}

TEST_CASE("zero head outputs zero and init leaves the output projection at zero") {
  const HeadParams zero(small_config(2));
  CHECK(head_forward(zero, Vec{1.0, 2.0}, 5, Vec{0.1, 0.2}, PrecisionModel{}) == Vec{0.0, 0.0});
  Rng rng(4);
  const auto hp = HeadParams::init(small_config(2), rng);
  const auto out = head_forward(hp, Vec{1.0, 2.0}, 5, Vec{0.1, 0.2}, PrecisionModel{});
  CHECK(std::isfinite(out[0]));
  CHECK_THROWS(head_forward(hp, Vec{1.0}, 5, Vec{0.1, 0.2}, PrecisionModel{}));
  CHECK_THROWS(head_forward(hp, Vec{1.0, 2.0}, 101, Vec{0.1, 0.2}, PrecisionModel{}));
}

TEST_CASE("bf16 forward produces bf16 values") {
  Rng rng(5);
  auto hp = HeadParams::init(small_config(0), rng);
  for (double& v : hp.data()) v += 0.05 * rng.normal();
  PrecisionModel pm;
  pm.mode = PrecisionMode::bf16_round;
  const Eigen::MatrixXd x = random_matrix(2, 16, rng);
  const std::vector<int> t(16, 42);
  const auto out = head_forward(hp, x, t, Eigen::MatrixXd(0, 16), pm);
  const auto ref = head_forward(hp, x, t, Eigen::MatrixXd(0, 16), PrecisionModel{});
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    CHECK(round_bf16(out(i)) == out(i));
    CHECK(std::abs(out(i) - ref(i)) < 0.1 * (1 + std::abs(ref(i))));
  }
}

TEST_CASE("t buckets partition [1, T]") {
  CHECK(t_bucket_of(1, 1000, 10) == 0);
  CHECK(t_bucket_of(100, 1000, 10) == 0);
  CHECK(t_bucket_of(101, 1000, 10) == 1);
  CHECK(t_bucket_of(1000, 1000, 10) == 9);
  int prev = 0;
  for (int t = 1; t <= 97; ++t) {
    const int b = t_bucket_of(t, 97, 7);
    CHECK(b >= prev);
    CHECK(b < 7);
    prev = b;
  }
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto ds = ToyDataset::default_gmm2d();
  HeadTrainConfig cfg;
  cfg.head = small_config(0);
  cfg.steps = 300;
  cfg.batch = 64;
  cfg.log_every = 50;
  cfg.ema_momentum = 0.99;
  cfg.seed = 11;
  const auto a = train_head(cfg, ds);
  const auto b = train_head(cfg, ds);
  CHECK(a.params.data() == b.params.data());
  CHECK(a.ema.shadow.data() == b.ema.shadow.data());

  double first = -1, last = -1;
  for (const auto& row : a.curve) {
    if (row.t_bucket != -1) continue;
    if (first < 0) first = row.mse;
    last = row.mse;
  }
  CHECK(last < first);

  cfg.seed = 12;
  CHECK(train_head(cfg, ds).params.data() != a.params.data());
}

TEST_CASE("ema update and json") {
  HeadParams live(small_config(0)), shadow(small_config(0));
  for (double& v : live.data()) v = 1.0;
  EmaState e{shadow, 0.9};
  ema_update(e, live);
  CHECK(e.shadow.data().front() == doctest::Approx(0.1));
  const auto back = HeadConfig::from_json(nlohmann::json::parse(small_config(5).to_json().dump()));
  CHECK(back.cond_dim == 5);
  CHECK(back.width == 32);
  CHECK(back.steps == 100);
}
