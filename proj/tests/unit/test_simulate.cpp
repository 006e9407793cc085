#include "doctest.h"

#include "pcde/errors.hpp"
#include "pcde/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace pcde;

namespace {

GroundTruth
step_truth()
{
  const auto x_tree = PartitionTree::uniform(CollectionKind::udp, 1, 1024, 1);
  const auto y_tree = PartitionTree::uniform(CollectionKind::udp, 1, 1024, 2);
  return GroundTruth::piecewise_constant(x_tree, { y_tree, y_tree }, { { 0.4, 0.3, 0.2, 0.1 }, { 0.1, 0.1, 0.2, 0.6 } });
}

Estimator
histogram(int depth_x, int depth_y)
{
  return [=](const Dataset& d) {
    const auto x_tree = PartitionTree::uniform(CollectionKind::udp, 1, d.size(), depth_x);
    const auto y_tree = PartitionTree::uniform(CollectionKind::udp, 1, d.size(), depth_y);
    return poly_estimate(fit(d, x_tree, y_tree, { 0 }));
  };
}

} // namespace

TEST_SUITE("simulate")
{
  TEST_CASE("uniform truth passes a Kolmogorov-Smirnov check")
  {
    const auto root = PartitionTree::root(CollectionKind::udp, 1, 16);
    const auto truth = GroundTruth::piecewise_constant(root, { root }, { { 1.0 } });
    const auto d = sample(truth, 10000, 42);
    std::vector<double> y(d.y.data(), d.y.data() + d.size());
    std::sort(y.begin(), y.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
      ks = std::max({ ks, (i + 1.0) / y.size() - y[i], y[i] - static_cast<double>(i) / y.size() });
    // 1% critical value of the one-sample statistic
    CHECK(ks < 1.628 / std::sqrt(10000.0));
  }

  TEST_CASE("designs and determinism")
  {
    auto truth = step_truth();
    truth.design = DesignLaw::grid;
    const auto d = sample(truth, 100, 1);
    for (int i = 0; i < 100; ++i)
      CHECK(d.x(i, 0) == doctest::Approx((i + 0.5) / 100.0).epsilon(1e-15));
    const auto a = sample(step_truth(), 500, 9);
    const auto b = sample(step_truth(), 500, 9);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    const auto c = sample(step_truth(), 500, 10);
    CHECK(a.y != c.y);
  }

  TEST_CASE("sampler matches cell probabilities")
  {
    const auto truth = step_truth();
    const auto d = sample(truth, 40000, 3);
    const auto grid = PartitionTree::uniform(CollectionKind::udp, 1, 1024, 2);
    // 4 x 4 grid of (x-quarter, y-quarter)
    std::vector<double> count(16, 0.0), per_x(4, 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto gx = grid.leaf_of(d.x_row(i));
      const auto gy = grid.leaf_of(d.y_row(i));
      count[gx * 4 + gy] += 1.0;
      per_x[gx] += 1.0;
    }
    const std::vector<std::vector<double>> p{ { 0.4, 0.3, 0.2, 0.1 }, { 0.1, 0.1, 0.2, 0.6 } };
    for (int gx = 0; gx < 4; ++gx)
      for (int gy = 0; gy < 4; ++gy) {
        const double q = p[gx / 2][gy];
        const double f = count[gx * 4 + gy] / per_x[gx];
        CHECK(std::abs(f - q) <= 4 * std::sqrt(q * (1 - q) / per_x[gx]));
      }
  }

  TEST_CASE("mixture truth draws from the leaf's components")
  {
    const auto tree = PartitionTree::uniform(CollectionKind::rdp, 1, 64, 1);
    const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(1, 1);
    const std::vector<GaussianComponent> comps{ GaussianComponent::from_covariance(Eigen::VectorXd::Constant(1, -10.0), s),
                                                GaussianComponent::from_covariance(Eigen::VectorXd::Constant(1, 10.0), s) };
    const SpatialGmm m(tree,
                       comps,
                       { Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.5, 0.5) },
                       CovarianceSpec::parse("KKKK"),
                       Subspace::full(),
                       1);
    const auto truth = GroundTruth::spatial_gmm(m);
    const auto d = sample(truth, 2000, 4);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.x(static_cast<Eigen::Index>(i), 0) < 0.5)
        CHECK(d.y(static_cast<Eigen::Index>(i), 0) < 0.0);
  }

  TEST_CASE("custom truth is checked for normalization")
  {
    const ConditionalDensity bad{ [](std::span<const double>, std::span<const double>) { return 0.5; },
                                  [](std::span<const double>, Rng&, std::span<double> y) { y[0] = 0.5; } };
    CHECK_THROWS_AS(GroundTruth::custom(1, bad, Hyperrectangle::unit(1)), ContractError);
  }

  TEST_CASE("risk harness")
  {
    const auto truth = step_truth();
    RiskOptions opts;
    opts.div.grid_order = 1;
    opts.div.grid_points = 256;
    const auto zero = risk(truth, truth_estimator(truth), 200, 3, 1, opts);
    CHECK(zero.risk == 0.0);
    CHECK(zero.std_error == 0.0);
    CHECK_THROWS_AS(risk(truth, truth_estimator(truth), 200, 2, 1, opts), ContractError);

    const auto small = risk(truth, histogram(1, 2), 200, 8, 5, opts);
    const auto large = risk(truth, histogram(1, 2), 3200, 8, 5, opts);
    CHECK(small.risk > 0.0);
    CHECK(large.risk < small.risk - 2 * std::hypot(small.std_error, large.std_error));

    std::ostringstream out;
    write_risk_csv(out, { zero, small });
    CHECK(out.str().rfind("n,model,risk,std_error,replicates,mean_dim\n", 0) == 0);
  }

  TEST_CASE("oracle table")
  {
    const auto truth = step_truth();
    RiskOptions opts;
    opts.div.grid_order = 1;
    opts.div.grid_points = 256;
    std::vector<Estimator> grid;
    for (int j = 0; j <= 5; ++j)
      grid.push_back(histogram(j, j));
    const auto table = oracle_table(truth, grid, histogram(1, 2), 500, 4, 2, opts);
    REQUIRE(table.rows.size() == 6);
    std::vector<double> risks;
    for (const auto& r : table.rows)
      risks.push_back(r.risk);
    CHECK(u_shaped(risks));
    CHECK(table.oracle == 2);
    CHECK(table.ratio > 0.0);
  }

  TEST_CASE("u-shape detection")
  {
    CHECK(u_shaped({ 3.0, 2.0, 1.0, 2.0 }));
    CHECK_FALSE(u_shaped({ 1.0, 2.0, 3.0 }));
    CHECK_FALSE(u_shaped({ 3.0, 1.0, 2.0, 1.5 }));
    CHECK(u_shaped({ 3.0, 1.0, 2.0, 1.95 }, 0.1));
  }
}
