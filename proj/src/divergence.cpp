#include "pcde/divergence.hpp"

#include "pcde/errors.hpp"
#include "pcde/gaussian.hpp"
#include "pcde/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <unordered_map>
#include <vector>

namespace pcde {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();
// s-mass below this at a node where t vanishes is treated as underflow.
constexpr double negligible_mass = 1e-12;

void
check_same_size(std::span<const double> p, std::span<const double> q)
{
  if (p.size() != q.size() || p.empty())
    throw ContractError("mass vectors must be nonempty and of equal length");
}

DivergenceEstimate
finalize(DivergenceKind kind, double value, double se)
{
  if (value == inf)
    return { inf, 0.0 };
  value = std::max(0.0, value);
  if (kind == DivergenceKind::hellinger2)
    value = std::min(value, 2.0);
  if (kind == DivergenceKind::l1_squared)
    value = std::min(value, 4.0);
  return { value, se };
}

DivergenceEstimate
grid_divergence(DivergenceKind kind, const Density& s, const Density& t, const TensorGrid& grid, const DivergenceConfig& cfg)
{
  const std::size_t m = grid.size();
  double mass_s = 0.0, mass_t = 0.0;
  std::vector<double> sv(m), tv(m);
  for (std::size_t i = 0; i < m; ++i) {
    sv[i] = s.pdf(grid.node(i));
    tv[i] = t.pdf(grid.node(i));
    if (!(sv[i] >= 0.0) || !(tv[i] >= 0.0))
      throw ContractError("densities must be nonnegative");
    mass_s += grid.weight(i) * sv[i];
    mass_t += grid.weight(i) * tv[i];
  }
  if (std::abs(mass_s - 1.0) > cfg.normalization_tolerance || std::abs(mass_t - 1.0) > cfg.normalization_tolerance)
    throw ContractError("densities do not integrate to one over the domain (masses " + std::to_string(mass_s) + ", " +
                        std::to_string(mass_t) + ")");

  double total = 0.0;
  const double rho = cfg.rho;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = grid.weight(i);
    const double a = sv[i];
    const double b = tv[i];
    switch (kind) {
      case DivergenceKind::kl:
        if (a <= 0.0)
          break;
        if (b < cfg.epsilon_floor) {
          if (a * w > negligible_mass)
            return { inf, 0.0 };
          break;
        }
        total += w * a * std::log(a / b);
        break;
      case DivergenceKind::jkl:
        if (a > 0.0)
          total += w * a * std::log(a / ((1.0 - rho) * a + rho * b)) / rho;
        break;
      case DivergenceKind::hellinger2: {
        const double r = std::sqrt(a) - std::sqrt(b);
        total += w * r * r;
        break;
      }
      case DivergenceKind::l1_squared:
        total += w * std::abs(a - b);
        break;
    }
  }
  if (kind == DivergenceKind::l1_squared)
    total *= total;
  return finalize(kind, total, 0.0);
}

DivergenceEstimate
mc_divergence(DivergenceKind kind,
              const Density& s,
              const Density& t,
              const Hyperrectangle& domain,
              const DivergenceConfig& cfg,
              std::uint64_t stream)
{
  Rng rng = make_rng(cfg.seed, stream);
  const int d = domain.dim();
  const std::size_t n = cfg.mc_samples;
  const double rho = cfg.rho;
  std::vector<double> point(d);
  double sum = 0.0, sum_sq = 0.0;

  if (s.sample) {
    // Importance sampling from s.
    for (std::size_t i = 0; i < n; ++i) {
      s.sample(rng, point);
      const double a = s.pdf(point);
      const double b = t.pdf(point);
      double f = 0.0;
      if (!(a > 0.0))
        continue;
      switch (kind) {
        case DivergenceKind::kl:
          if (b < cfg.epsilon_floor)
            return { inf, 0.0 };
          f = std::log(a / b);
          break;
        case DivergenceKind::jkl:
          f = std::log(a / ((1.0 - rho) * a + rho * b)) / rho;
          break;
        case DivergenceKind::hellinger2:
          f = 2.0 - 2.0 * std::sqrt(b / a);
          break;
        case DivergenceKind::l1_squared:
          f = 2.0 - 2.0 * std::min(1.0, b / a);
          break;
      }
      sum += f;
      sum_sq += f * f;
    }
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double volume = domain.volume();
    double mass_s = 0.0, mass_s2 = 0.0, mass_t = 0.0, mass_t2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j)
        point[j] = domain.lower()[j] + domain.extent(j) * unif(rng);
      const double a = s.pdf(point);
      const double b = t.pdf(point);
      mass_s += volume * a;
      mass_s2 += volume * a * volume * a;
      mass_t += volume * b;
      mass_t2 += volume * b * volume * b;
      double f = 0.0;
      switch (kind) {
        case DivergenceKind::kl:
          if (a > 0.0) {
            if (b < cfg.epsilon_floor) {
              if (a * volume / static_cast<double>(n) > negligible_mass)
                return { inf, 0.0 };
            } else {
              f = a * std::log(a / b);
            }
          }
          break;
        case DivergenceKind::jkl:
          if (a > 0.0)
            f = a * std::log(a / ((1.0 - rho) * a + rho * b)) / rho;
          break;
        case DivergenceKind::hellinger2: {
          const double r = std::sqrt(a) - std::sqrt(b);
          f = r * r;
          break;
        }
        case DivergenceKind::l1_squared:
          f = std::abs(a - b);
          break;
      }
      f *= volume;
      sum += f;
      sum_sq += f * f;
    }
    const double nd = static_cast<double>(n);
    auto check = [&](double m1, double m2) {
      const double mean = m1 / nd;
      const double se = std::sqrt(std::max(0.0, m2 / nd - mean * mean) / nd);
      if (std::abs(mean - 1.0) > std::max(cfg.normalization_tolerance, 6.0 * se))
        throw ContractError("densities do not integrate to one over the domain");
    };
    check(mass_s, mass_s2);
    check(mass_t, mass_t2);
  }

  const double nd = static_cast<double>(n);
  const double mean = sum / nd;
  const double se = std::sqrt(std::max(0.0, sum_sq / nd - mean * mean) / nd);
  if (kind == DivergenceKind::l1_squared)
    return finalize(kind, mean * mean, 2.0 * std::abs(mean) * se);
  return finalize(kind, mean, se);
}

bool
use_grid(const DivergenceConfig& cfg, int dim)
{
  switch (cfg.quadrature) {
    case QuadratureKind::grid:
      return true;
    case QuadratureKind::monte_carlo:
      return false;
    case QuadratureKind::automatic:
      return dim <= 2;
  }
  return true;
}

std::unique_ptr<TensorGrid>
make_grid(const Hyperrectangle& domain, const DivergenceConfig& cfg)
{
  const int panels = std::max(1, cfg.grid_points / cfg.grid_order);
  return std::make_unique<TensorGrid>(domain, panels, cfg.grid_order);
}

} // namespace

Density
ConditionalDensity::at(std::span<const double> x) const
{
  std::vector<double> xs(x.begin(), x.end());
  Density out;
  out.pdf = [f = pdf, xs](std::span<const double> y) { return f(xs, y); };
  if (sample)
    out.sample = [g = sample, xs](Rng& rng, std::span<double> y) { g(xs, rng, y); };
  return out;
}

void
DivergenceConfig::validate() const
{
  if (!(rho > 0.0 && rho < 1.0))
    throw ContractError("rho must lie in (0, 1)");
  if (mc_samples < 100)
    throw ContractError("Monte-Carlo sample count must be at least 100");
  if (grid_points < 1 || grid_order < 1)
    throw ContractError("grid quadrature needs positive point counts");
  if (!(epsilon_floor > 0.0))
    throw ContractError("epsilon_floor must be positive");
}

double
jkl_hellinger_constant(double rho)
{
  if (!(rho > 0.0 && rho < 1.0))
    throw ContractError("rho must lie in (0, 1)");
  return (1.0 / rho) * std::min((1.0 - rho) / rho, 1.0) * (std::log(1.0 + rho / (1.0 - rho)) - rho);
}

double
kl(std::span<const double> p, std::span<const double> q)
{
  check_same_size(p, q);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0)
      continue;
    if (q[i] <= 0.0)
      return inf;
    total += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(0.0, total);
}

double
jkl(std::span<const double> p, std::span<const double> q, double rho)
{
  check_same_size(p, q);
  if (!(rho > 0.0 && rho < 1.0))
    throw ContractError("rho must lie in (0, 1)");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0)
      total += p[i] * std::log(p[i] / ((1.0 - rho) * p[i] + rho * q[i]));
  }
  return std::max(0.0, total / rho);
}

double
hellinger2(std::span<const double> p, std::span<const double> q)
{
  check_same_size(p, q);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double r = std::sqrt(p[i]) - std::sqrt(q[i]);
    total += r * r;
  }
  return total;
}

double
l1_squared(std::span<const double> p, std::span<const double> q)
{
  check_same_size(p, q);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    total += std::abs(p[i] - q[i]);
  return total * total;
}

DivergenceEstimate
divergence(DivergenceKind kind, const Density& s, const Density& t, const Hyperrectangle& domain, const DivergenceConfig& cfg)
{
  cfg.validate();
  if (use_grid(cfg, domain.dim()))
    return grid_divergence(kind, s, t, *make_grid(domain, cfg), cfg);
  return mc_divergence(kind, s, t, domain, cfg, 0);
}

DivergenceEstimate
kl(const Density& s, const Density& t, const Hyperrectangle& domain, const DivergenceConfig& cfg)
{
  return divergence(DivergenceKind::kl, s, t, domain, cfg);
}

DivergenceEstimate
jkl(const Density& s, const Density& t, const Hyperrectangle& domain, const DivergenceConfig& cfg)
{
  return divergence(DivergenceKind::jkl, s, t, domain, cfg);
}

DivergenceEstimate
hellinger2(const Density& s, const Density& t, const Hyperrectangle& domain, const DivergenceConfig& cfg)
{
  return divergence(DivergenceKind::hellinger2, s, t, domain, cfg);
}

DivergenceEstimate
l1_squared(const Density& s, const Density& t, const Hyperrectangle& domain, const DivergenceConfig& cfg)
{
  return divergence(DivergenceKind::l1_squared, s, t, domain, cfg);
}

double
gaussian_hellinger2(const Eigen::VectorXd& mu1,
                    const Eigen::MatrixXd& sigma1,
                    const Eigen::VectorXd& mu2,
                    const Eigen::MatrixXd& sigma2)
{
  const auto d = mu1.size();
  if (mu2.size() != d || sigma1.rows() != d || sigma2.rows() != d)
    throw LinearAlgebraError("gaussian_hellinger2: dimension mismatch");
  const auto llt1 = spd_factor(sigma1, "sigma1");
  const auto llt2 = spd_factor(sigma2, "sigma2");
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd precision_sum = llt1.solve(eye) + llt2.solve(eye);
  const auto llt_p = spd_factor(0.5 * (precision_sum + precision_sum.transpose()), "precision sum");
  const auto llt_s = spd_factor(sigma1 + sigma2, "covariance sum");
  auto log_det = [](const Eigen::LLT<Eigen::MatrixXd>& f) {
    return 2.0 * f.matrixLLT().diagonal().array().log().sum();
  };
  const Eigen::VectorXd delta = mu1 - mu2;
  const double quad = delta.dot(llt_s.solve(delta));
  const double log_affinity = 0.5 * static_cast<double>(d) * std::log(2.0) - 0.25 * (log_det(llt1) + log_det(llt2)) -
                              0.5 * log_det(llt_p) - 0.25 * quad;
  return -2.0 * std::expm1(std::min(0.0, log_affinity));
}

double
gaussian_ratio_bound(const Eigen::VectorXd& mu1,
                     const Eigen::MatrixXd& sigma1,
                     const Eigen::VectorXd& mu2,
                     const Eigen::MatrixXd& sigma2)
{
  const auto d = mu1.size();
  if (mu2.size() != d || sigma1.rows() != d || sigma2.rows() != d)
    throw LinearAlgebraError("gaussian_ratio_bound: dimension mismatch");
  const auto llt1 = spd_factor(sigma1, "sigma1");
  const auto llt2 = spd_factor(sigma2, "sigma2");
  const Eigen::MatrixXd diff = sigma2 - sigma1;
  Eigen::LLT<Eigen::MatrixXd> llt_diff(0.5 * (diff + diff.transpose()));
  if (llt_diff.info() != Eigen::Success || (llt_diff.matrixLLT().diagonal().array() <= 0.0).any())
    throw DomainError("gaussian_ratio_bound requires sigma1^-1 - sigma2^-1 positive definite");
  auto log_det = [](const Eigen::LLT<Eigen::MatrixXd>& f) {
    return 2.0 * f.matrixLLT().diagonal().array().log().sum();
  };
  const Eigen::VectorXd delta = mu1 - mu2;
  return std::exp(0.5 * (log_det(llt2) - log_det(llt1)) + 0.5 * delta.dot(llt_diff.solve(delta)));
}

DivergenceEstimate
tensorized(DivergenceKind kind,
           const ConditionalDensity& s,
           const ConditionalDensity& t,
           const RowMatrix& design,
           const Hyperrectangle& domain,
           const DivergenceConfig& cfg,
           const DesignKey& key)
{
  cfg.validate();
  const auto n = static_cast<std::size_t>(design.rows());
  if (n == 0)
    throw ContractError("tensorized divergence needs a nonempty design");
  const bool grid_mode = use_grid(cfg, domain.dim());
  std::unique_ptr<TensorGrid> grid;
  if (grid_mode)
    grid = make_grid(domain, cfg);

  std::unordered_map<std::uint64_t, DivergenceEstimate> cache;
  double total = 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> x(design.data() + i * design.cols(), static_cast<std::size_t>(design.cols()));
    DivergenceEstimate est;
    const bool cached = key && grid_mode;
    std::uint64_t k = 0;
    if (cached) {
      k = key(x);
      if (auto it = cache.find(k); it != cache.end()) {
        est = it->second;
        goto accumulate;
      }
    }
    if (grid_mode)
      est = grid_divergence(kind, s.at(x), t.at(x), *grid, cfg);
    else
      est = mc_divergence(kind, s.at(x), t.at(x), domain, cfg, i);
    if (cached)
      cache.emplace(k, est);
  accumulate:
    if (est.infinite())
      return { inf, 0.0 };
    total += est.value;
    var += est.std_error * est.std_error;
  }
  const double nd = static_cast<double>(n);
  return { total / nd, std::sqrt(var) / nd };
}

} // namespace pcde
