#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>

namespace pcde {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

//! n covariate/response pairs stored row-wise so that each observation is
//! a contiguous span.
struct Dataset
{
  RowMatrix x; // n x d_X
  RowMatrix y; // n x d_Y

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
  int dim_x() const { return static_cast<int>(x.cols()); }
  int dim_y() const { return static_cast<int>(y.cols()); }

  std::span<const double> x_row(std::size_t i) const
  {
    return { x.data() + i * x.cols(), static_cast<std::size_t>(x.cols()) };
  }
  std::span<const double> y_row(std::size_t i) const
  {
    return { y.data() + i * y.cols(), static_cast<std::size_t>(y.cols()) };
  }
};

} // namespace pcde
