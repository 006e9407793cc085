#pragma once

#include "pcde/dataset.hpp"
#include "pcde/geometry.hpp"
#include "pcde/random.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace pcde {

//! Maximum polynomial degree along each response axis.
using DegreeVector = std::vector<int>;

//! Number of basis functions of the product space: prod(r_j + 1).
std::size_t basis_size(const DegreeVector& r);

//! Values of the shifted orthonormal Legendre product basis of `cell` at y.
//! The multi-index runs with the first axis fastest.
void basis_values(const Hyperrectangle& cell, const DegreeVector& r, std::span<const double> y, std::span<double> out);

//! Squared polynomial on one (X-leaf, Y-cell): the leaf-conditional density
//! there is weight * Q(y)^2 with Q = sum_k coeffs[k] phi_k.
struct CellPoly
{
  std::vector<double> coeffs;
  double weight = 0.0;
  std::size_t count = 0;
  //! -sum over the cell's points of ln(weight * Q^2).
  double neg_loglik = 0.0;
};

struct PolyFitOptions
{
  int restarts = 8;
  int max_iter = 500;
  double kkt_tol = 1e-8;
  std::uint64_t seed = 0;
  int max_degree = 4;
  //! For two coefficients, scan every sign arc of the circle exactly.
  bool exact_circle = true;
  std::size_t exact_circle_max_points = 512;

  void validate(const DegreeVector& r) const;
};

//! Sum over points of ln Q^2 (each term clipped at ln 1e-300).
double sphere_objective(const Eigen::MatrixXd& basis, const Eigen::VectorXd& coeffs);
//! Norm of the gradient component orthogonal to coeffs.
double sphere_kkt_residual(const Eigen::MatrixXd& basis, const Eigen::VectorXd& coeffs);

//! Maximizes sphere_objective over unit coefficient vectors. `basis` holds
//! one row of basis values per point.
Eigen::VectorXd solve_sphere_mle(const Eigen::MatrixXd& basis, const PolyFitOptions& opts);

//! Per-cell maximum likelihood. `points` is row-major with cell.dim()
//! columns, every row inside `cell`; n_leaf counts the X-leaf's points.
CellPoly fit_cell(std::span<const double> points,
                  std::size_t n_leaf,
                  const Hyperrectangle& cell,
                  const DegreeVector& r,
                  const PolyFitOptions& opts = {});

struct PolyDimension
{
  long long dim = 0;
  long long upper = 0;
};

//! dim = sum_l (|P^Y_l| prod(r+1) - 1), upper = sum_l |P^Y_l| prod(r+1).
PolyDimension poly_dimension(std::span<const std::size_t> y_cells_per_leaf, const DegreeVector& r);

class PolyModel
{
public:
  PolyModel() = default;
  PolyModel(PartitionTree x_tree,
            std::vector<PartitionTree> y_trees,
            DegreeVector degree,
            std::vector<std::vector<CellPoly>> cells);

  const PartitionTree& x_tree() const { return x_tree_; }
  const PartitionTree& y_tree(std::size_t x_leaf) const { return y_trees_.at(x_leaf); }
  const std::vector<PartitionTree>& y_trees() const { return y_trees_; }
  const CellPoly& cell(std::size_t x_leaf, std::size_t y_cell) const { return cells_.at(x_leaf).at(y_cell); }
  const std::vector<std::vector<CellPoly>>& cells() const { return cells_; }
  const DegreeVector& degree() const { return degree_; }
  int dim_x() const { return x_tree_.dim(); }
  int dim_y() const { return static_cast<int>(degree_.size()); }

  //! -infinity where the density vanishes; DomainError outside the cubes.
  double log_density(std::span<const double> x, std::span<const double> y) const;
  double density(std::span<const double> x, std::span<const double> y) const;
  double log_likelihood(const Dataset& data) const;
  PolyDimension dimension() const;

  //! Draws y | x: cell by weight, then rejection from the uniform law on
  //! the cell. SamplerError when the acceptance rate would fall below 1e-3.
  void sample_y(std::span<const double> x, Rng& rng, std::span<double> y) const;

private:
  PartitionTree x_tree_;
  std::vector<PartitionTree> y_trees_;
  DegreeVector degree_;
  std::vector<std::vector<CellPoly>> cells_;
};

//! Fits every cell independently. An X-leaf without data gets the uniform
//! conditional density.
PolyModel fit(const Dataset& data,
              const PartitionTree& x_tree,
              const std::vector<PartitionTree>& y_trees,
              const DegreeVector& r,
              const PolyFitOptions& opts = {});

//! Same Y-partition for every X-leaf.
PolyModel fit(const Dataset& data,
              const PartitionTree& x_tree,
              const PartitionTree& y_tree,
              const DegreeVector& r,
              const PolyFitOptions& opts = {});

} // namespace pcde
