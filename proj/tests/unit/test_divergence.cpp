#include "doctest.h"

#include "pcde/divergence.hpp"
#include "pcde/errors.hpp"
#include "pcde/gaussian.hpp"

#include <cmath>
#include <numbers>

using namespace pcde;

namespace {

double
normal_pdf(double x, double mu, double var)
{
  return std::exp(-0.5 * (x - mu) * (x - mu) / var) / std::sqrt(2 * std::numbers::pi * var);
}

Density
normal(double mu, double var)
{
  return { [=](std::span<const double> y) { return normal_pdf(y[0], mu, var); },
           [=](Rng& rng, std::span<double> y) { y[0] = std::normal_distribution<double>(mu, std::sqrt(var))(rng); } };
}

Density
uniform_on(double a, double b)
{
  return { [=](std::span<const double> y) { return y[0] >= a && y[0] < b ? 1.0 / (b - a) : 0.0; },
           [=](Rng& rng, std::span<double> y) { y[0] = std::uniform_real_distribution<double>(a, b)(rng); } };
}

std::vector<double>
random_simplex(Rng& rng, int bins)
{
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(bins);
  double s = 0.0;
  for (auto& v : p)
    s += (v = e(rng));
  for (auto& v : p)
    v /= s;
  return p;
}

} // namespace

TEST_SUITE("divergence")
{
  TEST_CASE("discrete sandwich and symmetry")
  {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      const auto p = random_simplex(rng, 32);
      const auto q = random_simplex(rng, 32);
      const double h = hellinger2(p, q);
      CHECK(h == hellinger2(q, p));
      CHECK(h <= 2.0);
      double sup = 0.0;
      for (int k = 0; k < 32; ++k)
        sup = std::max(sup, p[k] / q[k]);
      const double k = kl(p, q);
      CHECK(k <= (2.0 + std::log(sup)) * h + 1e-12);
      for (double rho : { 0.1, 0.5, 0.9 }) {
        const double j = jkl(p, q, rho);
        const double c = jkl_hellinger_constant(rho);
        CHECK(c * h <= j + 1e-12);
        CHECK(j <= k + 1e-9);
        CHECK(std::max(c / 4, rho / 2) * l1_squared(p, q) <= j + 1e-12);
      }
    }
    CHECK(jkl_hellinger_constant(0.5) == doctest::Approx(0.38629).epsilon(1e-5));
    const std::vector<double> a{ 1.0, 0.0 }, b{ 0.0, 1.0 };
    CHECK(hellinger2(a, b) == 2.0);
    CHECK(std::isinf(kl(a, b)));
    CHECK(std::isfinite(jkl(a, b, 0.5)));
  }

  TEST_CASE("continuous divergences")
  {
    DivergenceConfig cfg;
    const Hyperrectangle dom({ -8.0 }, { 9.0 });
    CHECK(kl(normal(0, 1), normal(1, 1), dom, cfg).value == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(hellinger2(normal(0, 1), normal(1, 1), dom, cfg).value ==
          doctest::Approx(2 * (1 - std::exp(-0.125))).epsilon(1e-6));
    CHECK(kl(normal(0, 1), normal(0, 1), dom, cfg).value == doctest::Approx(0.0));

    const Hyperrectangle unit({ 0.0 }, { 1.0 });
    CHECK(kl(uniform_on(0, 1), uniform_on(0.5, 1), unit, cfg).infinite());
    // 2 KL(s, (s+t)/2) with s = U[0,1], t = U[0.5,1]: half the mass at ratio 2, half at 2/3
    const double expected = 2.0 * (0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0));
    CHECK(jkl(uniform_on(0, 1), uniform_on(0.5, 1), unit, cfg).value == doctest::Approx(expected).epsilon(1e-9));
    CHECK(hellinger2(uniform_on(0, 0.5), uniform_on(0.5, 1), unit, cfg).value == doctest::Approx(2.0));

    const Density bad{ [](std::span<const double>) { return 2.0; }, {} };
    CHECK_THROWS_AS(kl(bad, uniform_on(0, 1), unit, cfg), ContractError);
    DivergenceConfig wrong;
    wrong.rho = 1.0;
    CHECK_THROWS_AS(wrong.validate(), ContractError);
  }

  TEST_CASE("Monte Carlo agrees with the grid")
  {
    DivergenceConfig grid;
    grid.quadrature = QuadratureKind::grid;
    DivergenceConfig mc;
    mc.quadrature = QuadratureKind::monte_carlo;
    mc.mc_samples = 40000;
    const Hyperrectangle dom({ -8.0 }, { 9.0 });
    const auto g = kl(normal(0, 1), normal(0.7, 1.5), dom, grid);
    const auto m = kl(normal(0, 1), normal(0.7, 1.5), dom, mc);
    CHECK(m.std_error > 0.0);
    CHECK(std::abs(g.value - m.value) <= 4 * m.std_error);
  }

  TEST_CASE("Gaussian closed forms")
  {
    Eigen::VectorXd m0 = Eigen::VectorXd::Zero(1), m1 = Eigen::VectorXd::Ones(1);
    Eigen::MatrixXd s1 = Eigen::MatrixXd::Identity(1, 1);
    CHECK(gaussian_hellinger2(m0, s1, m1, s1) == doctest::Approx(0.23500).epsilon(1e-4));
    CHECK(gaussian_hellinger2(m0, s1, m0, s1) == doctest::Approx(0.0));
    Eigen::VectorXd a = Eigen::VectorXd::Zero(2), b(2);
    b << 2.0, 0.0;
    const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
    CHECK(gaussian_hellinger2(a, i2, b, i2) == doctest::Approx(0.78694).epsilon(1e-4));
    Eigen::MatrixXd bad(1, 1);
    bad << -1.0;
    CHECK_THROWS_AS(gaussian_hellinger2(m0, bad, m0, s1), LinearAlgebraError);

    CHECK(gaussian_ratio_bound(m0, 0.5 * s1, m0, s1) == doctest::Approx(std::sqrt(2.0)));
    CHECK(gaussian_ratio_bound(a, i2, a, 1.3 * i2) == doctest::Approx(1.3));
    CHECK_THROWS_AS(gaussian_ratio_bound(m0, s1, m0, 0.5 * s1), DomainError);

    Eigen::VectorXd mu1(1), mu2(1);
    mu1 << 0.3;
    mu2 << -0.2;
    const double bound = gaussian_ratio_bound(mu1, 0.6 * s1, mu2, s1);
    for (int i = 0; i <= 10000; ++i) {
      const double x = -20.0 + 40.0 * i / 10000.0;
      CHECK(normal_pdf(x, 0.3, 0.6) / normal_pdf(x, -0.2, 1.0) <= bound * (1 + 1e-12));
    }
  }

  TEST_CASE("tensorized divergences")
  {
    const ConditionalDensity s{ [](std::span<const double> x, std::span<const double> y) {
                                 return x[0] < 0.5 ? (y[0] < 0.5 ? 1.6 : 0.4) : 1.0;
                               },
                                {} };
    const ConditionalDensity t{ [](std::span<const double>, std::span<const double>) { return 1.0; }, {} };
    RowMatrix design(4, 1);
    design << 0.1, 0.2, 0.7, 0.9;
    DivergenceConfig cfg;
    const Hyperrectangle unit = Hyperrectangle::unit(1);
    const auto v = tensorized(DivergenceKind::kl, s, t, design, unit, cfg);
    const double leaf = 0.5 * 1.6 * std::log(1.6) + 0.5 * 0.4 * std::log(0.4);
    CHECK(v.value == doctest::Approx(0.5 * leaf).epsilon(1e-9));
    CHECK(tensorized(DivergenceKind::jkl, s, s, design, unit, cfg).value == doctest::Approx(0.0));
    const DesignKey key = [](std::span<const double> x) { return std::uint64_t{ x[0] < 0.5 }; };
    CHECK(tensorized(DivergenceKind::kl, s, t, design, unit, cfg, key).value == doctest::Approx(v.value));
  }
}
