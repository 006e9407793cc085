// Acceptance suite: one PASS/FAIL line per criterion, each with its wall
// time against a fixed limit. Pass criterion numbers as arguments to run a
// subset.

#include "pcde/divergence.hpp"
#include "pcde/errors.hpp"
#include "pcde/geometry.hpp"
#include "pcde/polydens.hpp"
#include "pcde/random.hpp"
#include "pcde/selection.hpp"
#include "pcde/simulate.hpp"
#include "pcde/spatial_gmm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace pcde;

namespace {

struct Outcome
{
  bool ok = false;
  std::string detail;
};

struct Criterion
{
  int number;
  std::string name;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string
fmt(const char* format, auto... args)
{
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

double
uniform01(Rng& rng)
{
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

int
uniform_int(Rng& rng, int lo, int hi)
{
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// ------------------------------------------------------------------ 1

//! Random probability vector: Dirichlet with a random concentration, and
//! occasionally some empty bins.
std::vector<double>
random_pmf(Rng& rng, std::size_t bins)
{
  const double alpha = std::exp(std::uniform_real_distribution<double>(std::log(0.05), std::log(20.0))(rng));
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const bool sparse = uniform01(rng) < 0.2;
  std::vector<double> p(bins);
  double total = 0.0;
  for (auto& v : p) {
    v = sparse && uniform01(rng) < 0.3 ? 0.0 : gamma(rng);
    total += v;
  }
  if (total == 0.0) {
    p[0] = 1.0;
    total = 1.0;
  }
  for (auto& v : p)
    v /= total;
  return p;
}

double
kl_reference(const std::vector<double>& p, const std::vector<double>& q)
{
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0)
      continue;
    if (q[i] == 0.0)
      return std::numeric_limits<double>::infinity();
    out += p[i] * std::log(p[i] / q[i]);
  }
  return out;
}

Outcome
divergence_sandwich()
{
  Rng rng(101);
  double worst_lower = std::numeric_limits<double>::infinity();
  double worst_upper = std::numeric_limits<double>::infinity();
  double worst_agreement = 0.0;
  std::size_t infinite_kl = 0;
  for (int pair = 0; pair < 1000; ++pair) {
    const auto p = random_pmf(rng, 32);
    const auto q = random_pmf(rng, 32);
    const double k = kl(p, q);
    const double k_ref = kl_reference(p, q);
    if (std::isinf(k_ref)) {
      ++infinite_kl;
      if (!std::isinf(k))
        worst_agreement = std::numeric_limits<double>::infinity();
    } else {
      worst_agreement = std::max(worst_agreement, std::abs(k - k_ref) / std::max(1.0, k_ref));
    }
    const double h2 = hellinger2(p, q);
    for (double rho : { 0.1, 0.5, 0.9 }) {
      std::vector<double> mix(p.size());
      for (std::size_t i = 0; i < p.size(); ++i)
        mix[i] = (1.0 - rho) * p[i] + rho * q[i];
      const double j = jkl(p, q, rho);
      const double j_ref = kl_reference(p, mix) / rho;
      worst_agreement = std::max(worst_agreement, std::abs(j - j_ref) / std::max(1.0, j_ref));
      worst_lower = std::min(worst_lower, j - jkl_hellinger_constant(rho) * h2);
      if (!std::isinf(k))
        worst_upper = std::min(worst_upper, k - j);
    }
  }
  const bool ok = worst_lower >= -1e-9 && worst_upper >= -1e-9 && worst_agreement <= 1e-12;
  return { ok,
           fmt("min(JKL - C d^2) = %.3g, min(KL - JKL) = %.3g, max deviation from reference sums = %.2g, %zu pairs "
               "with infinite KL",
               worst_lower,
               worst_upper,
               worst_agreement,
               infinite_kl) };
}

// ------------------------------------------------------------------ 2

Eigen::MatrixXd
random_spd(Rng& rng, int dim)
{
  Eigen::MatrixXd g(dim, dim);
  std::normal_distribution<double> normal;
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
      g(i, j) = normal(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd rot = qr.householderQ();
  Eigen::VectorXd eig(dim);
  for (int i = 0; i < dim; ++i)
    eig[i] = std::exp(std::uniform_real_distribution<double>(std::log(0.25), std::log(4.0))(rng));
  return rot * eig.asDiagonal() * rot.transpose();
}

//! Gaussian density with its Cholesky factor computed once.
struct GaussianPdf
{
  Eigen::VectorXd mu;
  Eigen::MatrixXd l_inv;
  double log_norm = 0.0;

  GaussianPdf(Eigen::VectorXd m, const Eigen::MatrixXd& sigma)
    : mu(std::move(m))
  {
    const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    const Eigen::MatrixXd l = llt.matrixL();
    l_inv = l.inverse();
    log_norm = -l.diagonal().array().log().sum() - 0.5 * static_cast<double>(mu.size()) * std::log(2.0 * std::numbers::pi);
  }

  //! One- or two-dimensional argument; y1 is ignored in 1-D.
  double operator()(double y0, double y1) const
  {
    const double d0 = y0 - mu[0];
    double q = l_inv(0, 0) * d0;
    q *= q;
    if (mu.size() == 2) {
      const double z1 = l_inv(1, 0) * d0 + l_inv(1, 1) * (y1 - mu[1]);
      q += z1 * z1;
    }
    return std::exp(log_norm - 0.5 * q);
  }
};

//! Composite Simpson weights on m + 1 equispaced nodes (m even).
std::vector<double>
simpson_weights(int m, double h)
{
  std::vector<double> w(static_cast<std::size_t>(m) + 1);
  for (int i = 0; i <= m; ++i)
    w[static_cast<std::size_t>(i)] = (i == 0 || i == m ? 1.0 : (i % 2 ? 4.0 : 2.0)) * h / 3.0;
  return w;
}

Outcome
gaussian_hellinger()
{
  Rng rng(202);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int pair = 0; pair < 20; ++pair) {
    const int dim = pair % 2 ? 2 : 1;
    Eigen::VectorXd mu1(dim), mu2(dim);
    for (int j = 0; j < dim; ++j) {
      mu1[j] = normal(rng);
      mu2[j] = mu1[j] + 1.5 * normal(rng);
    }
    const Eigen::MatrixXd s1 = random_spd(rng, dim);
    const Eigen::MatrixXd s2 = random_spd(rng, dim);
    const double closed = gaussian_hellinger2(mu1, s1, mu2, s2);
    const GaussianPdf f1(mu1, s1);
    const GaussianPdf f2(mu2, s2);

    // box reaching 12 standard deviations beyond both means on every axis
    const int m = dim == 1 ? 20000 : 1200;
    std::vector<double> lo(static_cast<std::size_t>(dim)), h(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) {
      const double sd = std::sqrt(std::max(s1(j, j), s2(j, j)));
      lo[static_cast<std::size_t>(j)] = std::min(mu1[j], mu2[j]) - 12.0 * sd;
      h[static_cast<std::size_t>(j)] = (std::max(mu1[j], mu2[j]) + 12.0 * sd - lo[static_cast<std::size_t>(j)]) / m;
    }
    const auto w0 = simpson_weights(m, h[0]);
    const auto w1 = simpson_weights(m, dim == 2 ? h[1] : 1.0);
    double affinity = 0.0;
    for (int i = 0; i <= m; ++i) {
      const double y0 = lo[0] + i * h[0];
      const int inner = dim == 2 ? m : 0;
      for (int k = 0; k <= inner; ++k) {
        double w = w0[static_cast<std::size_t>(i)];
        double y1 = 0.0;
        if (dim == 2) {
          y1 = lo[1] + k * h[1];
          w *= w1[static_cast<std::size_t>(k)];
        }
        affinity += w * std::sqrt(f1(y0, y1) * f2(y0, y1));
      }
    }
    const double quadrature = 2.0 - 2.0 * affinity;
    worst = std::max(worst, std::abs(closed - quadrature));
  }
  return { worst <= 1e-6, fmt("max |closed - quadrature| = %.3g over 20 pairs (10 in 1-D, 10 in 2-D)", worst) };
}

// ------------------------------------------------------------------ 3

Outcome
kraft()
{
  struct Case
  {
    CollectionKind kind;
    const char* name;
    std::size_t n;
    int dim;
    std::size_t max_leaves;
  };
  // Sums are increasing in the leaf cap; collections with too many trees
  // are enumerated up to the largest cap that fits the time limit.
  const std::vector<Case> cases{
    { CollectionKind::udp, "UDP", 16, 1, 16 },   { CollectionKind::udp, "UDP", 64, 1, 64 },
    { CollectionKind::udp, "UDP", 16, 2, 16 },   { CollectionKind::rdp, "RDP", 16, 1, 16 },
    { CollectionKind::rdp, "RDP", 64, 1, 12 },   { CollectionKind::rdp, "RDP", 16, 2, 16 },
    { CollectionKind::rdsp, "RDSP", 16, 1, 16 }, { CollectionKind::rdsp, "RDSP", 64, 1, 12 },
    { CollectionKind::rdsp, "RDSP", 16, 2, 10 }, { CollectionKind::rsp, "RSP", 16, 1, 6 },
    { CollectionKind::rsp, "RSP", 64, 1, 4 },    { CollectionKind::rsp, "RSP", 16, 2, 4 },
  };
  bool ok = true;
  double largest = 0.0;
  std::ostringstream detail;
  for (const auto& c : cases) {
    const double weight = std::max(coding_constants(c.kind, c.n, c.dim).c0, 2.0 * std::log(2.0));
    const double sum = kraft_sum(c.kind, c.n, c.dim, weight, { c.max_leaves, 5'000'000 });
    ok = ok && sum <= 1.0 + 1e-12;
    largest = std::max(largest, sum);
    detail << ' ' << c.name << '(' << c.n << ',' << c.dim << ",<=" << c.max_leaves << ")=" << fmt("%.4f", sum);
  }
  return { ok, fmt("largest sum %.6f;", largest) + detail.str() };
}

// ------------------------------------------------------------------ 4

TreeShapePtr
random_shape(CollectionKind kind, const Hyperrectangle& cell, std::size_t n, int depth, Rng& rng)
{
  const auto splits = admissible_splits(kind, cell, n);
  if (splits.empty() || uniform01(rng) > 0.75 / (1.0 + 0.35 * depth))
    return TreeShape::leaf();
  const auto& split = splits[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(splits.size()) - 1))];
  std::vector<TreeShapePtr> children;
  for (const auto& child : split.children(cell))
    children.push_back(random_shape(kind, child, n, depth + 1, rng));
  return TreeShape::node(split, std::move(children));
}

PartitionTree
random_tree(int dim, std::size_t n, Rng& rng)
{
  static const CollectionKind kinds[] = { CollectionKind::udp,
                                          CollectionKind::rdp,
                                          CollectionKind::rdsp,
                                          CollectionKind::rsp };
  const auto kind = kinds[uniform_int(rng, 0, 3)];
  if (kind == CollectionKind::udp)
    return PartitionTree::uniform(kind, dim, n, uniform_int(rng, 0, std::min(3, udp_max_depth(n, dim))));
  const auto shape = random_shape(kind, Hyperrectangle::unit(dim), n, 0, rng);
  return PartitionTree::from_shape(kind, dim, n, *shape);
}

//! Half-open membership, closed on the upper faces of the unit cube.
bool
inside(const Hyperrectangle& cell, std::span<const double> v)
{
  for (int j = 0; j < cell.dim(); ++j) {
    const double lo = cell.lower()[static_cast<std::size_t>(j)];
    const double hi = cell.upper()[static_cast<std::size_t>(j)];
    if (v[static_cast<std::size_t>(j)] < lo || v[static_cast<std::size_t>(j)] > hi)
      return false;
    if (v[static_cast<std::size_t>(j)] == hi && hi != 1.0)
      return false;
  }
  return true;
}

//! Coordinates in [0,1]; a third of them snapped to multiples of 1/8 so
//! that points land on cell faces.
double
fuzz_coordinate(Rng& rng)
{
  const double u = uniform01(rng);
  if (uniform01(rng) < 1.0 / 3.0)
    return std::round(u * 8.0) / 8.0;
  return u * u;
}

Outcome
histogram_oracle()
{
  Rng rng(404);
  std::size_t checked_cells = 0;
  std::size_t mismatches = 0;
  double worst_density = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int dx = uniform_int(rng, 1, 2);
    const int dy = uniform_int(rng, 1, 2);
    const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 20, 400));
    Dataset data;
    data.x.resize(static_cast<Eigen::Index>(n), dx);
    data.y.resize(static_cast<Eigen::Index>(n), dy);
    for (Eigen::Index i = 0; i < data.x.size(); ++i)
      data.x.data()[i] = fuzz_coordinate(rng);
    for (Eigen::Index i = 0; i < data.y.size(); ++i)
      data.y.data()[i] = fuzz_coordinate(rng);

    const auto x_tree = random_tree(dx, n, rng);
    std::vector<PartitionTree> y_trees;
    for (std::size_t l = 0; l < x_tree.num_leaves(); ++l)
      y_trees.push_back(random_tree(dy, n, rng));
    const auto model = fit(data, x_tree, y_trees, DegreeVector(static_cast<std::size_t>(dy), 0));

    for (std::size_t l = 0; l < x_tree.num_leaves(); ++l) {
      std::size_t n_leaf = 0;
      std::vector<std::size_t> counts(y_trees[l].num_leaves(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (!inside(x_tree.leaf(l), data.x_row(i)))
          continue;
        ++n_leaf;
        for (std::size_t k = 0; k < counts.size(); ++k)
          if (inside(y_trees[l].leaf(k), data.y_row(i))) {
            ++counts[k];
            break;
          }
      }
      if (n_leaf == 0)
        continue;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        ++checked_cells;
        const double expected = static_cast<double>(counts[k]) / static_cast<double>(n_leaf);
        const auto& cell = model.cell(l, k);
        if (cell.weight != expected || cell.count != counts[k])
          ++mismatches;
        if (counts[k] == 0)
          continue;
        // density at the cell's first point equals weight / volume
        for (std::size_t i = 0; i < n; ++i)
          if (inside(x_tree.leaf(l), data.x_row(i)) && inside(y_trees[l].leaf(k), data.y_row(i))) {
            const double want = expected / y_trees[l].leaf(k).volume();
            worst_density =
              std::max(worst_density, std::abs(model.density(data.x_row(i), data.y_row(i)) - want) / want);
            break;
          }
      }
    }
  }
  return { mismatches == 0 && worst_density <= 1e-12,
           fmt("%zu weight mismatches over %zu non-empty-leaf cells; max relative density deviation %.2g",
               mismatches,
               checked_cells,
               worst_density) };
}

// ------------------------------------------------------------------ 5

Outcome
sphere_mle()
{
  Rng rng(505);
  double worst_below = 0.0; // grid best minus solver, positive when the solver falls short
  double worst_above = 0.0; // solver minus grid best
  for (int trial = 0; trial < 20; ++trial) {
    double a = uniform01(rng);
    double b = uniform01(rng);
    if (a > b)
      std::swap(a, b);
    if (b - a < 0.05)
      b = std::min(1.0, a + 0.05);
    const Hyperrectangle cell({ a }, { b });
    const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 3, 300));
    std::vector<double> pts(n);
    const int law = trial % 4;
    for (auto& y : pts) {
      double u = uniform01(rng);
      if (law == 1)
        u = u * u * u;
      else if (law == 2)
        u = uniform01(rng) < 0.5 ? 0.15 * u : 1.0 - 0.15 * u;
      else if (law == 3)
        u = std::clamp(0.6 + 0.08 * std::normal_distribution<double>()(rng), 0.0, 1.0);
      y = a + (b - a) * u;
    }

    // shifted orthonormal Legendre basis on [a, b]
    const double w = b - a;
    auto objective = [&](double c0, double c1) {
      double s = 0.0;
      for (double y : pts) {
        const double t = 2.0 * (y - a) / w - 1.0;
        const double q = (c0 + c1 * std::sqrt(3.0) * t) / std::sqrt(w);
        s += std::log(std::max(q * q, 1e-300));
      }
      return s;
    };
    const auto fitted = fit_cell(pts, n, cell, { 1 });
    const double solver = objective(fitted.coeffs[0], fitted.coeffs[1]);
    double grid = -std::numeric_limits<double>::infinity();
    constexpr int points = 100'000;
    for (int i = 0; i < points; ++i) {
      const double theta = 2.0 * std::numbers::pi * i / points;
      grid = std::max(grid, objective(std::cos(theta), std::sin(theta)));
    }
    worst_below = std::max(worst_below, grid - solver);
    worst_above = std::max(worst_above, solver - grid);
  }
  return { worst_below <= 1e-6 && worst_above <= 1e-6,
           fmt("over 20 cells: grid best exceeds solver by at most %.3g, solver exceeds grid best by at most %.3g",
               worst_below,
               worst_above) };
}

// ------------------------------------------------------------------ 6

Dataset
fuzz_dataset(Rng& rng, std::size_t n, int trial)
{
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(n), 1);
  d.y.resize(static_cast<Eigen::Index>(n), 1);
  const double cut = 0.25 + 0.5 * uniform01(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = uniform01(rng);
    double y = 0.0;
    switch (trial % 3) {
      case 0: // power law whose exponent moves with x
        y = std::pow(uniform01(rng), 1.0 + 3.0 * x);
        break;
      case 1: // two regimes
        y = x < cut ? 0.5 * uniform01(rng) : 0.5 + 0.5 * std::sqrt(uniform01(rng));
        break;
      default:
        y = uniform01(rng);
        break;
    }
    d.x(static_cast<Eigen::Index>(i), 0) = x;
    d.y(static_cast<Eigen::Index>(i), 0) = y;
  }
  return d;
}

Outcome
dp_exhaustive()
{
  Rng rng(606);
  int model_mismatch = 0;
  double worst_score = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto data = fuzz_dataset(rng, 100, trial);
    const double kappa = std::array{ 0.5, 1.0, 2.0 }[static_cast<std::size_t>(trial % 3)];
    const auto rule =
      poly_penalty_rule(CollectionKind::rdp, CollectionKind::rdp, 1, 1, data.size(), PenaltyMode::manual, kappa);
    PolySelectOptions opts;
    opts.max_x_leaves = 8;
    opts.max_y_leaves = 4;
    const std::vector<DegreeVector> degrees{ { 0 }, { 1 } };
    const auto dp = dp_select_poly(data, CollectionKind::rdp, CollectionKind::rdp, degrees, rule, opts);
    const auto ex = exhaustive_select_poly(data, CollectionKind::rdp, CollectionKind::rdp, degrees, rule, opts);
    if (model_id(dp.model) != model_id(ex.model))
      ++model_mismatch;
    worst_score = std::max(worst_score, std::abs(dp.report.best().score - ex.report.best().score));
  }
  return { model_mismatch == 0 && worst_score <= 1e-9,
           fmt("%d of 50 selected models differ; max |score difference| = %.3g", model_mismatch, worst_score) };
}

// ------------------------------------------------------------------ 7

Outcome
em_monotone()
{
  Rng rng(707);
  const std::vector<std::string> codes{ "KKKK", "K111", "KK11", "K1KK", "KKK1", "1KKK", "KK0K", "K11K", "0KKK", "KKKK" };
  double worst_step = 0.0;
  std::size_t steps = 0;
  std::set<char> modes;
  for (int trial = 0; trial < 50; ++trial) {
    const int p = uniform_int(rng, 1, 3);
    const int K = uniform_int(rng, 1, 3);
    const int dx = uniform_int(rng, 1, 2);
    const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 150, 600));
    const auto spec = CovarianceSpec::parse(codes[static_cast<std::size_t>(trial) % codes.size()]);
    for (char c : spec.code())
      modes.insert(c == '0' ? '0' : (c == '1' ? '1' : 'K'));

    // planted mixture with random means and covariances
    std::vector<GaussianComponent> comps;
    std::normal_distribution<double> normal;
    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd mu(p);
      for (int j = 0; j < p; ++j)
        mu[j] = 3.0 * normal(rng);
      comps.push_back(GaussianComponent::from_covariance(mu, random_spd(rng, p)));
    }
    const auto x_tree = random_tree(dx, n, rng);
    std::vector<Eigen::VectorXd> props;
    std::gamma_distribution<double> gamma(1.0, 1.0);
    for (std::size_t l = 0; l < x_tree.num_leaves(); ++l) {
      Eigen::VectorXd pi(K);
      for (int k = 0; k < K; ++k)
        pi[k] = gamma(rng) + 0.05;
      props.push_back(pi / pi.sum());
    }
    const SpatialGmm planted(x_tree, comps, props, CovarianceSpec::parse("KKKK"), Subspace::full(), p);
    const auto data = sample(GroundTruth::spatial_gmm(planted), n, 7000 + static_cast<std::uint64_t>(trial));

    EmOptions em;
    em.seed = static_cast<std::uint64_t>(trial);
    em.tol = 1e-10;
    em.max_iter = 300;
    const auto fitted = em_fit(data, x_tree, K, spec, Subspace::full(), em);
    const auto& trace = fitted.loglik_trace;
    for (std::size_t i = 1; i < trace.size(); ++i) {
      worst_step = std::max(worst_step, trace[i - 1] - trace[i]);
      ++steps;
    }
  }
  return { worst_step <= 1e-8,
           fmt("largest log-likelihood decrease %.3g over %zu EM steps; block modes covered: %s",
               worst_step,
               steps,
               std::string(modes.begin(), modes.end()).c_str()) };
}

// ------------------------------------------------------------------ 8 and 11

Estimator
uniform_histogram(int depth)
{
  return [=](const Dataset& d) {
    const auto x_tree = PartitionTree::uniform(CollectionKind::udp, 1, d.size(), depth);
    const auto y_tree = PartitionTree::uniform(CollectionKind::udp, 1, d.size(), depth);
    return poly_estimate(fit(d, x_tree, y_tree, { 0 }));
  };
}

Estimator
slope_histogram()
{
  return [](const Dataset& d) {
    const auto sel = slope_select_poly(d, CollectionKind::udp, CollectionKind::udp, { { 0 } });
    auto est = poly_estimate(sel.model);
    est.score = sel.report.best().score;
    return est;
  };
}

//! Midpoint rule on 2048 equal panels: exact for histograms on dyadic
//! cells down to width 1/2048.
RiskOptions
histogram_risk_options()
{
  RiskOptions opts;
  opts.divergence = DivergenceKind::jkl;
  opts.div.rho = 0.5;
  opts.div.quadrature = QuadratureKind::grid;
  opts.div.grid_order = 1;
  opts.div.grid_points = 2048;
  return opts;
}

Outcome
oracle_inequality()
{
  const auto truth = builtin_scenario("histogram_1d");
  std::vector<Estimator> grid;
  for (int depth = 0; depth <= 5; ++depth)
    grid.push_back(uniform_histogram(depth));
  const auto table = oracle_table(truth, grid, slope_histogram(), 2000, 20, 808, histogram_risk_options());
  std::vector<double> risks;
  std::ostringstream column;
  for (const auto& row : table.rows) {
    risks.push_back(row.risk);
    column << (column.tellp() ? ", " : "") << row.dim << ':' << fmt("%.4g", row.risk);
  }
  const bool ushape = u_shaped(risks);
  return { table.ratio <= 3.0 && ushape,
           fmt("selected risk %.4g (mean dim %.2f), oracle risk %.4g, ratio %.3f, U-shaped: %s; dim:risk = ",
               table.selected.risk,
               table.selected.mean_dim,
               table.rows[table.oracle].risk,
               table.ratio,
               ushape ? "yes" : "no") +
             column.str() };
}

Outcome
risk_consistency()
{
  const auto truth = builtin_scenario("histogram_1d");
  const auto opts = histogram_risk_options();
  std::vector<RiskRow> rows;
  for (std::size_t n : { 200, 800, 3200 })
    rows.push_back(risk(truth, slope_histogram(), n, 20, 1111, opts));
  bool ok = true;
  std::ostringstream detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail << (i ? "; " : "") << "n=" << rows[i].n << fmt(" risk %.4g +- %.2g", rows[i].risk, rows[i].std_error);
    if (i > 0) {
      const double margin = 2.0 * std::hypot(rows[i - 1].std_error, rows[i].std_error);
      ok = ok && rows[i].risk < rows[i - 1].risk - margin;
    }
  }
  return { ok, detail.str() + " (each step must drop by more than 2 combined std errors)" };
}

// ------------------------------------------------------------------ 9

Outcome
segmentation()
{
  const auto truth = builtin_scenario("gmm_2d");
  const auto& planted = *truth.gmm();
  constexpr std::size_t n = 4000;
  Rng rng(909);
  Dataset data;
  data.x.resize(n, 2);
  data.y.resize(n, 2);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    data.x(static_cast<Eigen::Index>(i), 0) = uniform01(rng);
    data.x(static_cast<Eigen::Index>(i), 1) = uniform01(rng);
    planted.sample_y(data.x_row(i),
                     rng,
                     { data.y.data() + i * 2, 2 },
                     &labels[i]);
  }

  std::vector<GmmCandidate> candidates;
  for (int K = 1; K <= 3; ++K)
    candidates.push_back({ K, CovarianceSpec::parse("KKKK"), Subspace::full() });
  GmmSelectOptions opts;
  opts.em.seed = 9;
  const auto sel = dp_select_gmm(data, CollectionKind::rdp, candidates, PenaltyMode::slope, 0.0, opts);
  const int k_hat = sel.model.K();
  const auto map = sel.model.segment(data);
  double agreement = 0.0;
  if (k_hat == 2) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < n; ++i)
      same += map[i] == labels[i];
    agreement = std::max(same, n - same) / static_cast<double>(n);
  }
  return { k_hat == 2 && agreement >= 0.95,
           fmt("selected K = %d on partition %s; MAP labels agree with planted draws on %.2f%% of %zu points",
               k_hat,
               sel.model.x_tree().id().c_str(),
               100.0 * agreement,
               n) };
}

// ------------------------------------------------------------------ 10

SpatialGmm
gmm_with(std::size_t leaves, int K, const std::string& code, int p, std::vector<int> axes = {})
{
  const auto spec = CovarianceSpec::parse(code);
  std::vector<Hyperrectangle> cells;
  for (std::size_t l = 0; l < leaves; ++l)
    cells.push_back(Hyperrectangle({ static_cast<double>(l) / leaves }, { static_cast<double>(l + 1) / leaves }));
  const auto tree = PartitionTree::from_cells(CollectionKind::hrp, 1, 100, cells);
  const int e = axes.empty() ? p : static_cast<int>(axes.size());
  std::vector<GaussianComponent> comps(
    static_cast<std::size_t>(K), GaussianComponent::from_covariance(Eigen::VectorXd::Zero(e), Eigen::MatrixXd::Identity(e, e)));
  std::vector<Eigen::VectorXd> props(leaves, Eigen::VectorXd::Constant(K, 1.0 / K));
  Subspace sub;
  sub.axes = axes;
  std::optional<GaussianComponent> complement;
  if (e < p)
    complement = GaussianComponent::from_covariance(Eigen::VectorXd::Zero(p - e), Eigen::MatrixXd::Identity(p - e, p - e));
  return SpatialGmm(tree, comps, props, spec, sub, p, complement);
}

long long
poly_dim_of(std::size_t x_leaves, const std::vector<int>& y_depths, const DegreeVector& r)
{
  const int dy = static_cast<int>(r.size());
  Rng rng(1010);
  Dataset d;
  d.x.resize(200, 1);
  d.y.resize(200, dy);
  for (Eigen::Index i = 0; i < d.x.size(); ++i)
    d.x.data()[i] = uniform01(rng);
  for (Eigen::Index i = 0; i < d.y.size(); ++i)
    d.y.data()[i] = uniform01(rng);
  const int depth = static_cast<int>(std::log2(static_cast<double>(x_leaves)));
  const auto x_tree = PartitionTree::uniform(CollectionKind::udp, 1, 200, depth);
  std::vector<PartitionTree> y_trees;
  for (std::size_t l = 0; l < x_leaves; ++l)
    y_trees.push_back(PartitionTree::uniform(CollectionKind::udp, dy, 200, y_depths[l]));
  return fit(d, x_tree, y_trees, r).dimension().dim;
}

Outcome
dimensions()
{
  struct Case
  {
    std::string what;
    long long got;
    long long want;
  };
  const std::vector<Case> cases{
    // |P|(K-1) + K (p + 1 + p(p-1)/2 + p-1)
    { "4 leaves, K=3, p=2, all free", gmm_with(4, 3, "KKKK", 2).dimension(), 4 * 2 + 3 * (2 + 1 + 1 + 1) },
    { "1 leaf, K=2, p=2, free means, common covariance", gmm_with(1, 2, "K111", 2).dimension(), 1 + 2 * 2 + 3 },
    { "3 leaves, K=1, p=2, all known", gmm_with(3, 1, "0000", 2).dimension(), 0 },
    { "1 leaf, K=1, p=1, all free", gmm_with(1, 1, "KKKK", 1).dimension(), 2 },
    { "2 leaves, K=3, p=3, all free", gmm_with(2, 3, "KKKK", 3).dimension(), 2 * 2 + 3 * (3 + 1 + 3 + 2) },
    { "4 leaves, K=2, p=2, free means and volumes", gmm_with(4, 2, "KK11", 2).dimension(), 4 + 2 * 2 + 2 + 1 + 1 },
    { "1 leaf, K=3, p=3, free means and volumes, known shape",
      gmm_with(1, 3, "KK00", 3).dimension(),
      2 + 3 * 3 + 3 },
    // one discriminant axis of three; the other two carry one shared Gaussian
    { "2 leaves, K=2, p=3, E=1 axis", gmm_with(2, 2, "KKKK", 3, { 0 }).dimension(), 2 + 2 * (1 + 1) + (2 + 1 + 1 + 1) },
    // sum over X-leaves of |Y-cells| (r+1) - 1
    { "poly, 2 leaves with 2 and 4 cells, r=1", poly_dim_of(2, { 1, 2 }, { 1 }), (2 * 2 - 1) + (4 * 2 - 1) },
    { "poly, 4 leaves, d_Y=2, r=(1,2)", poly_dim_of(4, { 0, 0, 1, 0 }, { 1, 2 }), 3 * (6 - 1) + (4 * 6 - 1) },
  };
  int wrong = 0;
  std::ostringstream detail;
  for (const auto& c : cases) {
    if (c.got != c.want) {
      ++wrong;
      detail << "; " << c.what << ": " << c.got << " != " << c.want;
    }
  }
  return { wrong == 0, fmt("%d of %zu combinations differ", wrong, cases.size()) + detail.str() };
}

} // namespace

int
main(int argc, char** argv)
{
  const std::vector<Criterion> criteria{
    { 1, "divergence sandwich", 10.0, divergence_sandwich },
    { 2, "gaussian hellinger closed form", 5.0, gaussian_hellinger },
    { 3, "kraft inequality", 30.0, kraft },
    { 4, "histogram oracle", 10.0, histogram_oracle },
    { 5, "sphere mle", 60.0, sphere_mle },
    { 6, "dp-exhaustive equivalence", 120.0, dp_exhaustive },
    { 7, "em monotonicity", 60.0, em_monotone },
    { 8, "empirical oracle inequality", 300.0, oracle_inequality },
    { 9, "segmentation recovery", 300.0, segmentation },
    { 10, "dimension bookkeeping", 1.0, dimensions },
    { 11, "risk consistency", 600.0, risk_consistency },
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i)
    wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.number))
      continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = { false, std::string("exception: ") + e.what() };
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = outcome.ok && seconds <= c.limit_seconds;
    failed += !pass;
    std::printf("%s %2d %-31s %8.2f s (limit %4.0f s)  %s%s\n",
                pass ? "PASS" : "FAIL",
                c.number,
                c.name.c_str(),
                seconds,
                c.limit_seconds,
                outcome.detail.c_str(),
                outcome.ok && !pass ? " [over time limit]" : "");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
