#pragma once

#include <Eigen/Dense>

#include <span>

namespace pcde {

//! Multivariate normal with a cached Cholesky factor.
class Gaussian
{
public:
  Gaussian() = default;
  //! Throws LinearAlgebraError when sigma is not symmetric positive definite.
  Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd sigma);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return sigma_; }
  double log_det() const { return log_det_; }

  double log_pdf(std::span<const double> y) const;
  double log_pdf(const Eigen::Ref<const Eigen::VectorXd>& y) const;
  double pdf(std::span<const double> y) const;
  //! Draws one sample; z holds the standard normal draws (length dim).
  Eigen::VectorXd transform(const Eigen::Ref<const Eigen::VectorXd>& z) const;

private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd lower_; // Cholesky factor
  double log_det_ = 0.0;
};

//! Throws LinearAlgebraError unless m is symmetric positive definite.
Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd& m, const char* what);

} // namespace pcde
