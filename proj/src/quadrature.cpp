#include "pcde/quadrature.hpp"

#include "pcde/errors.hpp"

#include <cmath>
#include <numbers>

namespace pcde {

GaussLegendreRule
gauss_legendre(int order)
{
  if (order < 1)
    throw ContractError("Gauss-Legendre order must be positive");
  GaussLegendreRule rule;
  if (order == 1) {
    rule.nodes = { 0.0 };
    rule.weights = { 2.0 };
    return rule;
  }
  rule.nodes.resize(order);
  rule.weights.resize(order);
  for (int i = 0; i < (order + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= order; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = order * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16)
        break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[order - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[order - 1 - i] = w;
  }
  return rule;
}

TensorGrid::TensorGrid(const Hyperrectangle& box, int panels, int order)
  : dim_(box.dim())
{
  if (panels < 1)
    throw ContractError("tensor grid needs at least one panel per axis");
  const auto rule = gauss_legendre(order);
  std::vector<std::vector<double>> axis_nodes(dim_), axis_weights(dim_);
  for (int j = 0; j < dim_; ++j) {
    const double h = box.extent(j) / panels;
    for (int p = 0; p < panels; ++p) {
      const double a = box.lower()[j] + p * h;
      for (int q = 0; q < order; ++q) {
        axis_nodes[j].push_back(a + 0.5 * h * (rule.nodes[q] + 1.0));
        axis_weights[j].push_back(0.5 * h * rule.weights[q]);
      }
    }
  }
  const std::size_t per_axis = axis_nodes[0].size();
  std::size_t total = 1;
  for (int j = 0; j < dim_; ++j)
    total *= per_axis;
  nodes_.resize(total * dim_);
  weights_.resize(total);
  std::vector<std::size_t> idx(dim_, 0);
  for (std::size_t i = 0; i < total; ++i) {
    double w = 1.0;
    for (int j = 0; j < dim_; ++j) {
      nodes_[i * dim_ + j] = axis_nodes[j][idx[j]];
      w *= axis_weights[j][idx[j]];
    }
    weights_[i] = w;
    for (int j = dim_ - 1; j >= 0; --j) {
      if (++idx[j] < per_axis)
        break;
      idx[j] = 0;
    }
  }
}

double
TensorGrid::integrate(const std::function<double(std::span<const double>)>& f) const
{
  double total = 0.0;
  for (std::size_t i = 0; i < size(); ++i)
    total += weights_[i] * f(node(i));
  return total;
}

} // namespace pcde
