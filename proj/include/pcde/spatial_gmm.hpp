#pragma once

#include "pcde/dataset.hpp"
#include "pcde/gaussian.hpp"
#include "pcde/geometry.hpp"
#include "pcde/random.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace pcde {

//! How a parameter block is shared across the K components.
enum class ParamMode
{
  known,  // fixed value, not estimated
  common, // one value shared by every component
  free    // one value per component
};

//! Parametrization of the component covariances Sigma_k = L_k D_k A_k D_k'
//! and means, plus optional bounds on every block.
struct CovarianceSpec
{
  ParamMode mean_mode = ParamMode::free;
  ParamMode volume_mode = ParamMode::free;
  ParamMode basis_mode = ParamMode::free;
  ParamMode shape_mode = ParamMode::free;

  // Values of known blocks; empty means the default (zero mean, L = 1,
  // identity D, identity A). known_means holds one row per component.
  Eigen::MatrixXd known_means;
  double known_volume = 1.0;
  Eigen::MatrixXd known_basis;
  Eigen::VectorXd known_shape;

  double a = 1e3;
  double L_minus = 1e-6;
  double L_plus = 1e6;
  double lambda_minus = 1e-3;
  double lambda_plus = 1e3;
  bool enforce_bounds = false;

  void validate(int K, int p) const;

  //! Four characters for (mu, L, D, A), each 0 (known), 1 (common) or
  //! K (free); e.g. "KKKK" or "K111".
  std::string code() const;
  static CovarianceSpec parse(const std::string& code);
};

struct GaussianComponent
{
  Eigen::VectorXd mu;
  double L = 1.0;
  Eigen::MatrixXd D; // orthogonal
  Eigen::VectorXd A; // diagonal of the shape matrix, det 1, descending for free fits

  int dim() const { return static_cast<int>(mu.size()); }
  Eigen::MatrixXd sigma() const;
  //! Volume / orientation / shape decomposition of an SPD covariance.
  static GaussianComponent from_covariance(Eigen::VectorXd mu, const Eigen::MatrixXd& sigma);
};

//! Clamps every block into its bounds (when enforced), pools common blocks
//! and overwrites known ones.
std::vector<GaussianComponent> project_constraints(std::vector<GaussianComponent> components,
                                                   const CovarianceSpec& spec);

//! Discriminant coordinates of the responses. Coordinates outside `axes`
//! share one Gaussian across components.
enum class SubspaceMode
{
  known,
  ordered, // spanned by the first coordinates
  free
};

struct Subspace
{
  SubspaceMode mode = SubspaceMode::known;
  std::vector<int> axes; // empty means every coordinate

  static Subspace full() { return {}; }
  static Subspace leading(int e_dim, SubspaceMode mode = SubspaceMode::ordered);
  int dim(int p) const { return axes.empty() ? p : static_cast<int>(axes.size()); }
  std::vector<int> resolved(int p) const;
  std::vector<int> complement(int p) const;
};

class SpatialGmm
{
public:
  SpatialGmm() = default;
  SpatialGmm(PartitionTree x_tree,
             std::vector<GaussianComponent> components,
             std::vector<Eigen::VectorXd> proportions,
             CovarianceSpec spec,
             Subspace subspace,
             int dim_y,
             std::optional<GaussianComponent> complement = std::nullopt);

  int K() const { return static_cast<int>(components_.size()); }
  int dim_y() const { return dim_y_; }
  const PartitionTree& x_tree() const { return x_tree_; }
  const std::vector<GaussianComponent>& components() const { return components_; }
  const std::vector<Eigen::VectorXd>& proportions() const { return proportions_; }
  const CovarianceSpec& spec() const { return spec_; }
  const Subspace& subspace() const { return subspace_; }
  const std::optional<GaussianComponent>& complement() const { return complement_; }

  //! ln Phi_k(y_E) for every k, plus the shared complement term.
  Eigen::VectorXd component_log_densities(std::span<const double> y) const;
  double log_density(std::span<const double> x, std::span<const double> y) const;
  double log_likelihood(const Dataset& data) const;
  //! n x K matrix of component log-densities (complement included).
  Eigen::MatrixXd log_density_matrix(const RowMatrix& y) const;

  //! MAP labels in 1..K, ties to the lowest index.
  std::vector<int> segment(const Dataset& data) const;
  void sample_y(std::span<const double> x, Rng& rng, std::span<double> y, int* label = nullptr) const;

  long long dimension() const;

  //! EM bookkeeping, filled by em_fit.
  std::vector<double> loglik_trace;
  int iterations = 0;

private:
  void build_cache();

  PartitionTree x_tree_;
  std::vector<GaussianComponent> components_;
  std::vector<Eigen::VectorXd> proportions_;
  CovarianceSpec spec_;
  Subspace subspace_;
  int dim_y_ = 0;
  std::optional<GaussianComponent> complement_;
  std::vector<Gaussian> gaussians_;
  std::optional<Gaussian> complement_gaussian_;
  std::vector<int> axes_;
  std::vector<int> complement_axes_;
};

struct EmOptions
{
  double tol = 1e-7;
  int max_iter = 500;
  std::uint64_t seed = 0;
  double covariance_floor = 1e-8;
  int inner_sweeps = 3;
  //! Explicit starting point; defaults to k-means++ seeding.
  std::optional<std::vector<GaussianComponent>> init_components;
  std::optional<std::vector<Eigen::VectorXd>> init_proportions;
};

SpatialGmm em_fit(const Dataset& data,
                  const PartitionTree& x_tree,
                  int K,
                  const CovarianceSpec& spec,
                  const Subspace& subspace = {},
                  const EmOptions& opts = {});

//! |P|(K-1) + sum over blocks of multiplier * block dimension, with the
//! complement block counted as a single component.
long long gmm_dimension(std::size_t leaves, int K, const CovarianceSpec& spec, int e_dim, int p);

//! Dimension of the shared Gaussian parameters alone (no proportions).
long long theta_dimension(int K, const CovarianceSpec& spec, int e_dim, int p);

double variable_selection_weight(SubspaceMode mode, int e_dim, int p);

//! Proportions maximizing sum_i ln sum_k pi_k f_ik for fixed component
//! log-densities (rows of log_f); EM iterations on the simplex.
Eigen::VectorXd fit_leaf_proportions(const Eigen::MatrixXd& log_f,
                                     const Eigen::VectorXd& start,
                                     double tol = 1e-10,
                                     int max_iter = 1000);

//! sum_i ln sum_k pi_k exp(log_f(i, k)).
double mixture_loglik(const Eigen::MatrixXd& log_f, const Eigen::VectorXd& pi);

} // namespace pcde
