#pragma once

#include "pcde/geometry.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace pcde {

struct GaussLegendreRule
{
  std::vector<double> nodes;   // on [-1, 1]
  std::vector<double> weights; // sum to 2
};

GaussLegendreRule gauss_legendre(int order);

//! Composite Gauss-Legendre tensor rule on a box: each axis is cut into
//! `panels` equal panels carrying an `order`-point rule.
class TensorGrid
{
public:
  TensorGrid(const Hyperrectangle& box, int panels, int order);

  std::size_t size() const { return weights_.size(); }
  int dim() const { return dim_; }
  std::span<const double> node(std::size_t i) const
  {
    return { nodes_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_) };
  }
  double weight(std::size_t i) const { return weights_[i]; }

  double integrate(const std::function<double(std::span<const double>)>& f) const;

private:
  int dim_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

} // namespace pcde
