#include "pcde/gaussian.hpp"

#include "pcde/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace pcde {

Eigen::LLT<Eigen::MatrixXd>
spd_factor(const Eigen::MatrixXd& m, const char* what)
{
  if (m.rows() != m.cols() || m.rows() == 0)
    throw LinearAlgebraError(std::string(what) + ": matrix must be square and nonempty");
  if (!m.allFinite())
    throw LinearAlgebraError(std::string(what) + ": matrix has non-finite entries");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + m.cwiseAbs().maxCoeff()))
    throw LinearAlgebraError(std::string(what) + ": matrix is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw LinearAlgebraError(std::string(what) + ": matrix is not positive definite");
  const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
  if ((diag.array() <= 0.0).any())
    throw LinearAlgebraError(std::string(what) + ": matrix is not positive definite");
  return llt;
}

Gaussian::Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd sigma)
  : mean_(std::move(mean))
  , sigma_(std::move(sigma))
{
  if (sigma_.rows() != mean_.size())
    throw LinearAlgebraError("gaussian: mean and covariance dimensions differ");
  auto llt = spd_factor(sigma_, "gaussian covariance");
  lower_ = llt.matrixL();
  log_det_ = 2.0 * lower_.diagonal().array().log().sum();
}

double
Gaussian::log_pdf(const Eigen::Ref<const Eigen::VectorXd>& y) const
{
  const Eigen::VectorXd z = lower_.triangularView<Eigen::Lower>().solve(y - mean_);
  return -0.5 * (dim() * std::log(2.0 * std::numbers::pi) + log_det_ + z.squaredNorm());
}

double
Gaussian::log_pdf(std::span<const double> y) const
{
  return log_pdf(Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())));
}

double
Gaussian::pdf(std::span<const double> y) const
{
  return std::exp(log_pdf(y));
}

Eigen::VectorXd
Gaussian::transform(const Eigen::Ref<const Eigen::VectorXd>& z) const
{
  return mean_ + lower_ * z;
}

} // namespace pcde
