#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vhm/latent.hpp"
#include "vhm/random.hpp"

using namespace vhm;
using vhm::testing::check_gradients;

namespace {

constexpr Index kD = 6;
constexpr Index kL = 3;

struct Fixture {
  ParameterStore store;
  Rng rng{5};
  LatentHierarchy latents;
  explicit Fixture(const AblationFlags& flags = {}) : latents(kD, kL, flags, store, rng) {}

  void zero_weights() {
    for (auto& p : store.params()) p.tensor.mutable_value().setZero();
  }
};

Tensor random_row(Index width, Rng& rng, double spread = 1.0) {
  return Tensor::from_matrix(standard_normal(1, width, rng) * spread);
}

DiagonalGaussian gaussian(const MatrixXd& mu, const MatrixXd& sigma) {
  return {Tensor::from_matrix(mu, true), Tensor::from_matrix(sigma, true), LatentPath::kPrior};
}

DiagonalGaussian gaussian1(double mu, double sigma) {
  return gaussian(MatrixXd::Constant(1, 1, mu), MatrixXd::Constant(1, 1, sigma));
}

void check_zero_case(const DiagonalGaussian& g) {
  CHECK(g.mu.value().isZero(0.0));
  for (Index i = 0; i < g.dim(); ++i) CHECK(g.sigma.at(0, i) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(g.dim() == kL);
}

}  // namespace

TEST_SUITE("latent") {
  TEST_CASE("zero weights give a zero mean and softplus(0) scale") {
    Fixture f;
    f.zero_weights();
    Rng rng(1);
    const Tensor h = random_row(kD, rng);
    const Tensor y = random_row(kD, rng);
    const LatentSample zm{random_row(kL, rng), LatentPath::kPosterior};
    const LatentSample zs{random_row(kL, rng), LatentPath::kPosterior};
    check_zero_case(f.latents.prior_mt(h));
    check_zero_case(f.latents.posterior_mt(h, y));
    check_zero_case(f.latents.prior_ms(h));
    check_zero_case(f.latents.posterior_ms(h, y));
    check_zero_case(f.latents.prior_cls(h, &zm, &zs));
    check_zero_case(f.latents.posterior_cls(h, &zm, &zs, y));
  }

  TEST_CASE("latent networks are pure") {
    Fixture f;
    Rng rng(2);
    const Tensor h = random_row(kD, rng);
    const Tensor y = random_row(kD, rng);
    const LatentSample zm{random_row(kL, rng), LatentPath::kPosterior};
    const LatentSample zs{random_row(kL, rng), LatentPath::kPosterior};
    auto same = [](const DiagonalGaussian& a, const DiagonalGaussian& b) {
      return a.mu.value() == b.mu.value() && a.sigma.value() == b.sigma.value();
    };
    CHECK(same(f.latents.prior_mt(h), f.latents.prior_mt(h)));
    CHECK(same(f.latents.posterior_ms(h, y), f.latents.posterior_ms(h, y)));
    CHECK(same(f.latents.prior_cls(h, &zm, &zs), f.latents.prior_cls(h, &zm, &zs)));
    CHECK(same(f.latents.posterior_cls(h, &zm, &zs, y), f.latents.posterior_cls(h, &zm, &zs, y)));
  }

  TEST_CASE("sigma respects the floor") {
    Fixture f;
    Rng rng(3);
    for (auto& p : f.store.params()) p.tensor.mutable_value() = standard_normal(p.tensor.rows(), p.tensor.cols(), rng) * 20.0;
    for (int trial = 0; trial < 200; ++trial) {
      const Tensor h = random_row(kD, rng, 30.0);
      CHECK(f.latents.prior_mt(h).sigma.value().minCoeff() >= kSigmaFloor);
      CHECK(f.latents.posterior_ms(h, random_row(kD, rng, 30.0)).sigma.value().minCoeff() >= kSigmaFloor);
    }
  }

  TEST_CASE("posteriors and the global prior respond to their inputs") {
    Fixture f;
    Rng rng(4);
    const Tensor h = random_row(kD, rng);
    const Tensor y1 = random_row(kD, rng);
    const Tensor y2 = random_row(kD, rng);
    const LatentSample zm{random_row(kL, rng), LatentPath::kPosterior};
    const LatentSample zm2{random_row(kL, rng), LatentPath::kPosterior};
    const LatentSample zs{random_row(kL, rng), LatentPath::kPosterior};
    const LatentSample zs2{random_row(kL, rng), LatentPath::kPosterior};
    CHECK(f.latents.posterior_mt(h, y1).mu.value() != f.latents.posterior_mt(h, y2).mu.value());
    CHECK(f.latents.posterior_ms(h, y1).mu.value() != f.latents.posterior_ms(h, y2).mu.value());
    CHECK(f.latents.prior_cls(h, &zm, &zs).mu.value() != f.latents.prior_cls(h, &zm2, &zs).mu.value());
    CHECK(f.latents.prior_cls(h, &zm, &zs).mu.value() != f.latents.prior_cls(h, &zm, &zs2).mu.value());
    CHECK(f.latents.posterior_cls(h, &zm, &zs, y1).mu.value() !=
          f.latents.posterior_cls(h, &zm, &zs, y2).mu.value());
  }

  TEST_CASE("conditioning widths") {
    Fixture f;
    CHECK(f.latents.cls_condition_width() == kD + 2 * kL);
    CHECK(f.store.find("latent.prior_mt.w_hidden").tensor.rows() == kD);
    CHECK(f.store.find("latent.posterior_mt.w_hidden").tensor.rows() == 2 * kD);
    CHECK(f.store.find("latent.prior_cls.w_hidden").tensor.rows() == kD + 2 * kL);
    CHECK(f.store.find("latent.posterior_cls.w_hidden").tensor.rows() == kD + 2 * kL + kD);
    CHECK(f.store.find("latent.prior_mt.w_mu").tensor.cols() == kL);

    Fixture no_locals(AblationFlags{true, true, false, false});
    CHECK(no_locals.latents.cls_condition_width() == kD);
    Fixture flat(AblationFlags{false, false, false, true});
    CHECK(flat.latents.cls_condition_width() == kD);
    Fixture no_mt(AblationFlags{true, false, false, false});
    CHECK(no_mt.latents.cls_condition_width() == kD + kL);
  }

  TEST_CASE("parameter groups split priors from recognition networks") {
    Fixture f;
    for (const auto& p : f.store.params()) {
      const bool recognition = p.name.find("posterior") != std::string::npos;
      CHECK(p.group == (recognition ? ParamGroup::kRecognition : ParamGroup::kGenerative));
    }
  }

  TEST_CASE("ablated networks are not callable") {
    Fixture f(AblationFlags{true, false, true, false});
    Rng rng(5);
    const Tensor h = random_row(kD, rng);
    CHECK_THROWS_AS(f.latents.prior_mt(h), ContractError);
    CHECK_THROWS_AS(f.latents.prior_cls(h, nullptr, nullptr), ContractError);
    CHECK_NOTHROW(f.latents.prior_ms(h));
    CHECK_FALSE(f.store.contains("latent.prior_mt.w_mu"));
    Fixture full;
    CHECK_THROWS_AS(full.latents.prior_cls(h, nullptr, nullptr), ContractError);
  }

  TEST_CASE("mutually exclusive ablations are rejected") {
    ParameterStore store;
    Rng rng(1);
    CHECK_THROWS_AS(LatentHierarchy(kD, kL, AblationFlags{false, false, true, true}, store, rng),
                    ConfigError);
  }

  TEST_CASE("bad inputs") {
    Fixture f;
    Rng rng(6);
    CHECK_THROWS_AS(f.latents.prior_mt(random_row(kD + 1, rng)), ShapeError);
    MatrixXd bad = MatrixXd::Zero(1, kD);
    bad(0, 2) = NAN;
    CHECK_THROWS_AS(f.latents.prior_mt(Tensor::from_matrix(bad)), NumericsError);
  }

  TEST_CASE("sample examples") {
    const DiagonalGaussian g = gaussian(MatrixXd{{0.5, -1.25, 3.0}}, MatrixXd{{2.0, 0.1, 1e-6}});
    const LatentSample mean = sample(g, MatrixXd::Zero(1, 3));
    CHECK(mean.z.value() == g.mu.value());
    const DiagonalGaussian unit = gaussian(MatrixXd{{0.5, -1.25}}, MatrixXd::Ones(1, 2));
    CHECK(sample(unit, MatrixXd::Ones(1, 2)).z.value() == MatrixXd{{1.5, -0.25}});
    CHECK_THROWS_AS(sample(g, MatrixXd::Zero(1, 2)), ShapeError);
    CHECK(mean_sample(g).z.value() == g.mu.value());
  }

  TEST_CASE("sample gradients reach mu and sigma") {
    DiagonalGaussian g = gaussian(MatrixXd{{0.5, -1.0}}, MatrixXd{{2.0, 3.0}});
    sum(sample(g, MatrixXd{{0.25, -2.0}}).z).backward();
    CHECK(g.mu.grad() == MatrixXd{{1.0, 1.0}});
    CHECK(g.sigma.grad() == MatrixXd{{0.25, -2.0}});
  }

  TEST_CASE("sample mean converges to mu") {
    const MatrixXd mu{{0.3, -2.0, 5.0}};
    const MatrixXd sigma{{1.0, 0.5, 3.0}};
    const DiagonalGaussian g = gaussian(mu, sigma);
    Rng rng(77);
    const int n = 10000;
    MatrixXd total = MatrixXd::Zero(1, 3);
    for (int i = 0; i < n; ++i) total += sample(g, standard_normal(1, 3, rng)).z.value();
    const MatrixXd empirical = total / n;
    for (Index j = 0; j < 3; ++j) {
      CHECK(std::abs(empirical(0, j) - mu(0, j)) < 3.0 * sigma(0, j) / std::sqrt(double(n)));
    }
  }

  TEST_CASE("KL examples") {
    CHECK(kl_divergence(gaussian1(1, 1), gaussian1(0, 1)).item() == doctest::Approx(0.5).epsilon(1e-15));
    const double expected = std::log(1.0 / 2.0) + 4.0 / 2.0 - 0.5;
    CHECK(expected == doctest::Approx(0.80685).epsilon(1e-5));
    CHECK(kl_divergence(gaussian1(0, 2), gaussian1(0, 1)).item() == doctest::Approx(expected).epsilon(1e-14));
    CHECK_THROWS_AS(kl_divergence(gaussian(MatrixXd::Zero(1, 2), MatrixXd::Ones(1, 2)), gaussian1(0, 1)),
                    ShapeError);
  }

  TEST_CASE("KL agrees with a Monte Carlo estimate") {
    // E_q[ln q(x) - ln p(x)] for q = N(0, 2^2), p = N(0, 1).
    Rng rng(123);
    std::normal_distribution<double> q(0.0, 2.0);
    const int n = 1000000;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = q(rng);
      const double log_q = -std::log(2.0) - 0.5 * (x / 2.0) * (x / 2.0);
      const double log_p = -0.5 * x * x;
      total += log_q - log_p;
    }
    const double mc = total / n;
    CHECK(std::abs(mc - kl_divergence(gaussian1(0, 2), gaussian1(0, 1)).item()) < 0.01);
  }

  TEST_CASE("KL is non-negative and zero for identical distributions") {
    Rng rng(8);
    std::uniform_real_distribution<double> pos(0.05, 4.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const MatrixXd mq = standard_normal(1, 5, rng) * 3.0;
      const MatrixXd mp = standard_normal(1, 5, rng) * 3.0;
      MatrixXd sq(1, 5), sp(1, 5);
      for (Index j = 0; j < 5; ++j) {
        sq(0, j) = pos(rng);
        sp(0, j) = pos(rng);
      }
      CHECK(kl_divergence(gaussian(mq, sq), gaussian(mp, sp)).item() >= 0.0);
      CHECK(std::abs(kl_divergence(gaussian(mq, sq), gaussian(mq, sq)).item()) <= 1e-12);
    }
  }

  TEST_CASE("KL averages over rows") {
    const DiagonalGaussian q = gaussian(MatrixXd{{1.0}, {0.0}}, MatrixXd{{1.0}, {2.0}});
    const DiagonalGaussian p = gaussian(MatrixXd{{0.0}, {0.0}}, MatrixXd{{1.0}, {1.0}});
    CHECK(kl_divergence(q, p).item() == doctest::Approx((0.5 + 0.80685281944) / 2).epsilon(1e-10));
  }

  TEST_CASE("KL gradients match finite differences") {
    Rng rng(10);
    std::uniform_real_distribution<double> pos(0.3, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
      MatrixXd sq(2, 4), sp(2, 4);
      for (Index j = 0; j < sq.size(); ++j) {
        sq.data()[j] = pos(rng);
        sp.data()[j] = pos(rng);
      }
      DiagonalGaussian q = gaussian(standard_normal(2, 4, rng), sq);
      DiagonalGaussian p = gaussian(standard_normal(2, 4, rng), sp);
      const auto r = check_gradients([&] { return kl_divergence(q, p); },
                                     {{"q.mu", q.mu}, {"q.sigma", q.sigma},
                                      {"p.mu", p.mu}, {"p.sigma", p.sigma}});
      worst = std::max(worst, r.max_rel_error);
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("latent network gradients match finite differences") {
    Fixture f;
    Rng rng(11);
    const Tensor h = random_row(kD, rng);
    const Tensor y = random_row(kD, rng);
    const MatrixXd eps_mt = standard_normal(1, kL, rng);
    const MatrixXd eps_ms = standard_normal(1, kL, rng);
    const MatrixXd eps_cls = standard_normal(1, kL, rng);
    std::vector<std::pair<std::string, Tensor>> leaves;
    for (const auto& p : f.store.params()) leaves.push_back({p.name, p.tensor});
    auto loss = [&] {
      const LatentSample zm = sample(f.latents.posterior_mt(h, y), eps_mt);
      const LatentSample zs = sample(f.latents.posterior_ms(h, y), eps_ms);
      const DiagonalGaussian q = f.latents.posterior_cls(h, &zm, &zs, y);
      const LatentSample zc = sample(q, eps_cls);
      return add(kl_divergence(q, f.latents.prior_cls(h, &zm, &zs)),
                 add(kl_divergence(f.latents.posterior_mt(h, y), f.latents.prior_mt(h)),
                     sum(square(zc.z))));
    };
    const auto r = check_gradients(loss, leaves);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}
