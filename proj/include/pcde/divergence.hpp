#pragma once

#include "pcde/dataset.hpp"
#include "pcde/geometry.hpp"
#include "pcde/random.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <span>

namespace pcde {

//! A density on a box, with an optional exact sampler used for importance
//! sampling.
struct Density
{
  std::function<double(std::span<const double>)> pdf;
  std::function<void(Rng&, std::span<double>)> sample;
};

//! A conditional density y | x.
struct ConditionalDensity
{
  std::function<double(std::span<const double> x, std::span<const double> y)> pdf;
  std::function<void(std::span<const double> x, Rng&, std::span<double> y)> sample;

  Density at(std::span<const double> x) const;
};

enum class DivergenceKind
{
  kl,
  jkl,
  hellinger2,
  l1_squared
};

enum class QuadratureKind
{
  automatic,   // tensor grid up to two response dimensions, Monte Carlo above
  grid,        // composite Gauss-Legendre tensor grid
  monte_carlo  // importance sampling from s when it has a sampler, else uniform
};

struct DivergenceConfig
{
  double rho = 0.5;
  QuadratureKind quadrature = QuadratureKind::automatic;
  int grid_points = 512; // per axis; panels of `grid_order` Gauss-Legendre nodes
  int grid_order = 8;
  std::size_t mc_samples = 20000;
  std::uint64_t seed = 0;
  double epsilon_floor = 1e-300;
  double normalization_tolerance = 1e-6;

  void validate() const;
};

struct DivergenceEstimate
{
  double value = 0.0;
  double std_error = 0.0;

  bool infinite() const { return value == std::numeric_limits<double>::infinity(); }
};

//! Constant of the Hellinger lower bound on JKL_rho.
double jkl_hellinger_constant(double rho);

// Divergences between probability mass vectors on a common finite support.
// These are also the exact divergences between piecewise-constant densities
// on a common equal-width grid.
double kl(std::span<const double> p, std::span<const double> q);
double jkl(std::span<const double> p, std::span<const double> q, double rho);
double hellinger2(std::span<const double> p, std::span<const double> q);
double l1_squared(std::span<const double> p, std::span<const double> q);

DivergenceEstimate divergence(DivergenceKind kind,
                              const Density& s,
                              const Density& t,
                              const Hyperrectangle& domain,
                              const DivergenceConfig& cfg);

DivergenceEstimate kl(const Density& s, const Density& t, const Hyperrectangle& domain, const DivergenceConfig& cfg);
DivergenceEstimate jkl(const Density& s, const Density& t, const Hyperrectangle& domain, const DivergenceConfig& cfg);
DivergenceEstimate hellinger2(const Density& s,
                              const Density& t,
                              const Hyperrectangle& domain,
                              const DivergenceConfig& cfg);
DivergenceEstimate l1_squared(const Density& s,
                              const Density& t,
                              const Hyperrectangle& domain,
                              const DivergenceConfig& cfg);

//! Squared Hellinger distance between two full-rank Gaussians (closed form).
double gaussian_hellinger2(const Eigen::VectorXd& mu1,
                           const Eigen::MatrixXd& sigma1,
                           const Eigen::VectorXd& mu2,
                           const Eigen::MatrixXd& sigma2);

//! Upper bound of sup_x phi1(x) / phi2(x); requires sigma2 - sigma1 positive
//! definite, else DomainError.
double gaussian_ratio_bound(const Eigen::VectorXd& mu1,
                            const Eigen::MatrixXd& sigma1,
                            const Eigen::VectorXd& mu2,
                            const Eigen::MatrixXd& sigma2);

//! Optional cache key for design points whose conditional densities are
//! known to coincide (e.g. same leaves in piecewise models).
using DesignKey = std::function<std::uint64_t(std::span<const double> x)>;

//! Average over the design rows of the divergence between s(.|x_i) and
//! t(.|x_i). Monte-Carlo substreams are seeded by (cfg.seed, i).
DivergenceEstimate tensorized(DivergenceKind kind,
                              const ConditionalDensity& s,
                              const ConditionalDensity& t,
                              const RowMatrix& design,
                              const Hyperrectangle& domain,
                              const DivergenceConfig& cfg,
                              const DesignKey& key = {});

} // namespace pcde
