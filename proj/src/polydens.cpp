#include "pcde/polydens.hpp"

#include "pcde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace pcde {

namespace {

constexpr double q2_floor = 1e-300;
const double log_q2_floor = std::log(q2_floor);

void
legendre_orthonormal(double t, double width, int degree, double* out)
{
  // P_k on [-1, 1], scaled so that phi_k = sqrt((2k+1)/width) P_k is
  // orthonormal on an interval of length `width`.
  double p_prev = 1.0;
  double p = t;
  out[0] = std::sqrt(1.0 / width);
  if (degree >= 1)
    out[1] = std::sqrt(3.0 / width) * t;
  for (int k = 1; k < degree; ++k) {
    const double next = ((2.0 * k + 1.0) * t * p - k * p_prev) / (k + 1.0);
    p_prev = p;
    p = next;
    out[k + 1] = std::sqrt((2.0 * k + 3.0) / width) * p;
  }
}

Eigen::MatrixXd
basis_matrix(std::span<const double> points, const Hyperrectangle& cell, const DegreeVector& r)
{
  const auto d = static_cast<std::size_t>(cell.dim());
  const std::size_t m = points.size() / d;
  const std::size_t p = basis_size(r);
  Eigen::MatrixXd out(m, p);
  std::vector<double> row(p);
  for (std::size_t i = 0; i < m; ++i) {
    basis_values(cell, r, points.subspan(i * d, d), row);
    for (std::size_t k = 0; k < p; ++k)
      out(i, k) = row[k];
  }
  return out;
}

struct SphereState
{
  double objective = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

SphereState
evaluate(const Eigen::MatrixXd& basis, const Eigen::VectorXd& c, bool with_hessian)
{
  SphereState s;
  const auto p = c.size();
  s.objective = 0.0;
  s.gradient = Eigen::VectorXd::Zero(p);
  if (with_hessian)
    s.hessian = Eigen::MatrixXd::Zero(p, p);
  const Eigen::VectorXd v = basis * c;
  for (Eigen::Index i = 0; i < basis.rows(); ++i) {
    const double q2 = v[i] * v[i];
    if (q2 < q2_floor) {
      s.objective += log_q2_floor;
      continue;
    }
    s.objective += std::log(q2);
    s.gradient += (2.0 / v[i]) * basis.row(i).transpose();
    if (with_hessian)
      s.hessian.noalias() -= (2.0 / q2) * basis.row(i).transpose() * basis.row(i);
  }
  return s;
}

double
kkt_residual(const Eigen::VectorXd& g, const Eigen::VectorXd& c)
{
  return (g - g.dot(c) * c).norm();
}

//! Damped Newton iteration on the KKT system g(c) = lambda c, |c| = 1.
//! Inside a sign region the problem is a concave maximization over the
//! ball, so the iteration converges to that region's maximizer.
Eigen::VectorXd
newton_polish(const Eigen::MatrixXd& basis, Eigen::VectorXd c, const PolyFitOptions& opts)
{
  c.normalize();
  SphereState s = evaluate(basis, c, true);
  for (int it = 0; it < opts.max_iter; ++it) {
    if (kkt_residual(s.gradient, c) <= opts.kkt_tol)
      break;
    const double lambda = s.gradient.dot(c);
    Eigen::MatrixXd m = s.hessian;
    m.diagonal().array() -= std::max(lambda, 1e-12);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    const Eigen::VectorXd r = s.gradient - lambda * c;
    const Eigen::VectorXd mr = ldlt.solve(r);
    const Eigen::VectorXd mc = ldlt.solve(c);
    const double denom = c.dot(mc);
    Eigen::VectorXd dc = -mr;
    if (std::abs(denom) > 0.0)
      dc += mc * (c.dot(mr) / denom);
    if (!dc.allFinite() || dc.dot(r) <= 0.0)
      dc = r / std::max(1.0, r.norm()); // fall back to a projected gradient step

    double step = 1.0;
    bool moved = false;
    while (step > 1e-14) {
      Eigen::VectorXd trial = (c + step * dc).normalized();
      SphereState ts = evaluate(basis, trial, true);
      if (ts.objective >= s.objective - 1e-12 * std::abs(s.objective)) {
        moved = ts.objective > s.objective || kkt_residual(ts.gradient, trial) < kkt_residual(s.gradient, c);
        c = trial;
        s = std::move(ts);
        break;
      }
      step *= 0.5;
    }
    if (!moved)
      break;
  }
  return c;
}

//! Two coefficients: c = (cos t, sin t). Between consecutive zeros of the
//! point evaluations the objective is concave in t, so each arc has a single
//! maximizer located by bisection on the derivative.
Eigen::VectorXd
solve_circle(const Eigen::MatrixXd& basis)
{
  const auto m = basis.rows();
  std::vector<double> zeros;
  zeros.reserve(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double z = std::atan2(-basis(i, 0), basis(i, 1));
    z = std::fmod(z, std::numbers::pi);
    if (z < 0.0)
      z += std::numbers::pi;
    zeros.push_back(z);
  }
  std::sort(zeros.begin(), zeros.end());

  auto derivative = [&](double t) {
    const double ct = std::cos(t), st = std::sin(t);
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double v = basis(i, 0) * ct + basis(i, 1) * st;
      const double dv = -basis(i, 0) * st + basis(i, 1) * ct;
      total += 2.0 * dv / v;
    }
    return total;
  };
  auto at = [](double t) {
    Eigen::VectorXd c(2);
    c << std::cos(t), std::sin(t);
    return c;
  };

  Eigen::VectorXd best = at(0.0);
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < zeros.size(); ++j) {
    double lo = zeros[j];
    double hi = j + 1 < zeros.size() ? zeros[j + 1] : zeros.front() + std::numbers::pi;
    if (hi - lo < 1e-13)
      continue;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi)
        break;
      if (derivative(mid) > 0.0)
        lo = mid;
      else
        hi = mid;
    }
    const Eigen::VectorXd c = at(0.5 * (lo + hi));
    const double value = sphere_objective(basis, c);
    if (value > best_value) {
      best_value = value;
      best = c;
    }
  }
  return best;
}

} // namespace

std::size_t
basis_size(const DegreeVector& r)
{
  std::size_t p = 1;
  for (int k : r)
    p *= static_cast<std::size_t>(k + 1);
  return p;
}

void
basis_values(const Hyperrectangle& cell, const DegreeVector& r, std::span<const double> y, std::span<double> out)
{
  const auto d = r.size();
  if (static_cast<int>(d) != cell.dim() || y.size() != d || out.size() != basis_size(r))
    throw ContractError("basis_values: dimension mismatch");
  double axis_values[16][16];
  if (d > 16)
    throw ContractError("basis_values: at most 16 response axes");
  for (std::size_t j = 0; j < d; ++j) {
    if (r[j] < 0 || r[j] > 15)
      throw ContractError("basis_values: degree out of range");
    const double w = cell.extent(static_cast<int>(j));
    const double t = 2.0 * (y[j] - cell.lower()[j]) / w - 1.0;
    legendre_orthonormal(t, w, r[j], axis_values[j]);
  }
  std::vector<int> index(d, 0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double v = 1.0;
    for (std::size_t j = 0; j < d; ++j)
      v *= axis_values[j][index[j]];
    out[k] = v;
    for (std::size_t j = 0; j < d; ++j) {
      if (++index[j] <= r[j])
        break;
      index[j] = 0;
    }
  }
}

void
PolyFitOptions::validate(const DegreeVector& r) const
{
  if (r.empty())
    throw ContractError("degree vector must have one entry per response axis");
  for (int k : r)
    if (k < 0 || k > max_degree)
      throw ContractError("degree " + std::to_string(k) + " outside [0, " + std::to_string(max_degree) + "]");
  if (restarts < 0 || max_iter < 1 || !(kkt_tol > 0.0))
    throw ContractError("invalid sphere solver options");
}

double
sphere_objective(const Eigen::MatrixXd& basis, const Eigen::VectorXd& coeffs)
{
  const Eigen::VectorXd v = basis * coeffs;
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double q2 = v[i] * v[i];
    total += q2 < q2_floor ? log_q2_floor : std::log(q2);
  }
  return total;
}

double
sphere_kkt_residual(const Eigen::MatrixXd& basis, const Eigen::VectorXd& coeffs)
{
  return kkt_residual(evaluate(basis, coeffs, false).gradient, coeffs);
}

Eigen::VectorXd
solve_sphere_mle(const Eigen::MatrixXd& basis, const PolyFitOptions& opts)
{
  const auto p = basis.cols();
  Eigen::VectorXd uniform = Eigen::VectorXd::Zero(p);
  uniform[0] = 1.0;
  if (p == 1 || basis.rows() == 0)
    return uniform;

  if (p == 2 && opts.exact_circle && static_cast<std::size_t>(basis.rows()) <= opts.exact_circle_max_points) {
    Eigen::VectorXd c = newton_polish(basis, solve_circle(basis), opts);
    return c[0] < 0.0 || (c[0] == 0.0 && c[1] < 0.0) ? Eigen::VectorXd(-c) : c;
  }

  Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(basis.rows())));
  std::normal_distribution<double> normal;
  Eigen::VectorXd best;
  double best_value = -std::numeric_limits<double>::infinity();
  for (int start = 0; start <= opts.restarts; ++start) {
    Eigen::VectorXd c0 = uniform;
    if (start > 0) {
      for (Eigen::Index k = 0; k < p; ++k)
        c0[k] = normal(rng);
      if (c0.norm() == 0.0)
        c0 = uniform;
    }
    const Eigen::VectorXd c = newton_polish(basis, c0, opts);
    const double value = sphere_objective(basis, c);
    if (value > best_value) {
      best_value = value;
      best = c;
    }
  }
  // Q and -Q give the same density; report the representative with a
  // nonnegative leading coefficient.
  if (best[0] < 0.0)
    best = -best;
  return best;
}

CellPoly
fit_cell(std::span<const double> points,
         std::size_t n_leaf,
         const Hyperrectangle& cell,
         const DegreeVector& r,
         const PolyFitOptions& opts)
{
  opts.validate(r);
  if (static_cast<int>(r.size()) != cell.dim())
    throw ContractError("fit_cell: degree vector and cell dimensions differ");
  if (n_leaf == 0)
    throw ContractError("fit_cell: the X-leaf must contain at least one point");
  const auto d = static_cast<std::size_t>(cell.dim());
  if (points.size() % d != 0)
    throw ContractError("fit_cell: point buffer is not a multiple of the dimension");
  const std::size_t m = points.size() / d;
  if (m > n_leaf)
    throw ContractError("fit_cell: more points in the cell than in the leaf");

  CellPoly out;
  out.count = m;
  out.coeffs.assign(basis_size(r), 0.0);
  out.coeffs[0] = 1.0;
  out.weight = static_cast<double>(m) / static_cast<double>(n_leaf);
  if (m == 0)
    return out;

  const double log_w = std::log(out.weight);
  if (out.coeffs.size() == 1) {
    out.neg_loglik = -static_cast<double>(m) * (log_w - std::log(cell.volume()));
    return out;
  }
  const Eigen::MatrixXd basis = basis_matrix(points, cell, r);
  const Eigen::VectorXd c = solve_sphere_mle(basis, opts);
  std::copy(c.data(), c.data() + c.size(), out.coeffs.begin());
  out.neg_loglik = -(static_cast<double>(m) * log_w + sphere_objective(basis, c));
  return out;
}

PolyDimension
poly_dimension(std::span<const std::size_t> y_cells_per_leaf, const DegreeVector& r)
{
  const auto p = static_cast<long long>(basis_size(r));
  PolyDimension out;
  for (std::size_t cells : y_cells_per_leaf) {
    out.dim += static_cast<long long>(cells) * p - 1;
    out.upper += static_cast<long long>(cells) * p;
  }
  return out;
}

// ---------------------------------------------------------------- PolyModel

PolyModel::PolyModel(PartitionTree x_tree,
                     std::vector<PartitionTree> y_trees,
                     DegreeVector degree,
                     std::vector<std::vector<CellPoly>> cells)
  : x_tree_(std::move(x_tree))
  , y_trees_(std::move(y_trees))
  , degree_(std::move(degree))
  , cells_(std::move(cells))
{
  if (y_trees_.size() != x_tree_.num_leaves() || cells_.size() != x_tree_.num_leaves())
    throw ContractError("PolyModel: one Y-partition and one cell list per X-leaf required");
  const std::size_t p = basis_size(degree_);
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    if (y_trees_[l].dim() != dim_y())
      throw ContractError("PolyModel: Y-partition dimension differs from the degree vector");
    if (cells_[l].size() != y_trees_[l].num_leaves())
      throw ContractError("PolyModel: one CellPoly per Y-cell required");
    for (const auto& c : cells_[l])
      if (c.coeffs.size() != p)
        throw ContractError("PolyModel: coefficient block has the wrong size");
  }
}

double
PolyModel::log_density(std::span<const double> x, std::span<const double> y) const
{
  const std::size_t l = x_tree_.leaf_of(x);
  const PartitionTree& yt = y_trees_[l];
  const std::size_t k = yt.leaf_of(y);
  const CellPoly& c = cells_[l][k];
  if (c.weight <= 0.0)
    return -std::numeric_limits<double>::infinity();
  std::vector<double> phi(c.coeffs.size());
  basis_values(yt.leaf(k), degree_, y, phi);
  double q = 0.0;
  for (std::size_t j = 0; j < phi.size(); ++j)
    q += c.coeffs[j] * phi[j];
  if (q == 0.0)
    return -std::numeric_limits<double>::infinity();
  return std::log(c.weight) + 2.0 * std::log(std::abs(q));
}

double
PolyModel::density(std::span<const double> x, std::span<const double> y) const
{
  return std::exp(log_density(x, y));
}

double
PolyModel::log_likelihood(const Dataset& data) const
{
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += log_density(data.x_row(i), data.y_row(i));
  return total;
}

PolyDimension
PolyModel::dimension() const
{
  std::vector<std::size_t> counts;
  for (const auto& t : y_trees_)
    counts.push_back(t.num_leaves());
  return poly_dimension(counts, degree_);
}

void
PolyModel::sample_y(std::span<const double> x, Rng& rng, std::span<double> y) const
{
  const std::size_t l = x_tree_.leaf_of(x);
  const auto& leaf_cells = cells_[l];
  const PartitionTree& yt = y_trees_[l];
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  double u = unif(rng);
  std::size_t k = leaf_cells.size() - 1;
  for (std::size_t j = 0; j < leaf_cells.size(); ++j) {
    if (u < leaf_cells[j].weight) {
      k = j;
      break;
    }
    u -= leaf_cells[j].weight;
  }
  while (leaf_cells[k].weight <= 0.0 && k > 0)
    --k;

  const Hyperrectangle& cell = yt.leaf(k);
  const CellPoly& c = leaf_cells[k];
  const int d = cell.dim();
  // Envelope: |Q| <= sum_k |c_k| sup|phi_k| with sup|phi_k| = prod sqrt((2k+1)/w).
  double envelope = 0.0;
  {
    std::vector<int> index(d, 0);
    for (std::size_t j = 0; j < c.coeffs.size(); ++j) {
      double sup = 1.0;
      for (int a = 0; a < d; ++a)
        sup *= std::sqrt((2.0 * index[a] + 1.0) / cell.extent(a));
      envelope += std::abs(c.coeffs[j]) * sup;
      for (int a = 0; a < d; ++a) {
        if (++index[a] <= degree_[a])
          break;
        index[a] = 0;
      }
    }
  }
  const double bound = envelope * envelope;
  const double acceptance = 1.0 / (bound * cell.volume());
  if (acceptance < 1e-3)
    throw SamplerError("rejection sampler acceptance rate below 1e-3");

  std::vector<double> phi(c.coeffs.size());
  for (;;) {
    for (int a = 0; a < d; ++a)
      y[a] = cell.lower()[a] + cell.extent(a) * unif(rng);
    basis_values(cell, degree_, y, phi);
    double q = 0.0;
    for (std::size_t j = 0; j < phi.size(); ++j)
      q += c.coeffs[j] * phi[j];
    if (unif(rng) * bound <= q * q)
      return;
  }
}

PolyModel
fit(const Dataset& data,
    const PartitionTree& x_tree,
    const std::vector<PartitionTree>& y_trees,
    const DegreeVector& r,
    const PolyFitOptions& opts)
{
  opts.validate(r);
  if (data.dim_x() != x_tree.dim() || static_cast<int>(r.size()) != data.dim_y())
    throw ContractError("fit: dataset dimensions do not match the partition and degree vector");
  if (y_trees.size() != x_tree.num_leaves())
    throw ContractError("fit: one Y-partition per X-leaf required");

  const std::size_t nx = x_tree.num_leaves();
  // Group response rows by (X-leaf, Y-cell).
  std::vector<std::size_t> leaf_count(nx, 0);
  std::vector<std::vector<std::vector<double>>> buckets(nx);
  for (std::size_t l = 0; l < nx; ++l)
    buckets[l].resize(y_trees[l].num_leaves());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t l = x_tree.leaf_of(data.x_row(i));
    const std::size_t k = y_trees[l].leaf_of(data.y_row(i));
    ++leaf_count[l];
    auto yr = data.y_row(i);
    buckets[l][k].insert(buckets[l][k].end(), yr.begin(), yr.end());
  }

  std::vector<std::vector<CellPoly>> cells(nx);
  for (std::size_t l = 0; l < nx; ++l) {
    const PartitionTree& yt = y_trees[l];
    cells[l].resize(yt.num_leaves());
    for (std::size_t k = 0; k < yt.num_leaves(); ++k) {
      if (leaf_count[l] == 0) {
        CellPoly& c = cells[l][k];
        c.coeffs.assign(basis_size(r), 0.0);
        c.coeffs[0] = 1.0;
        c.weight = yt.leaf(k).volume();
        continue;
      }
      cells[l][k] = fit_cell(buckets[l][k], leaf_count[l], yt.leaf(k), r, opts);
    }
  }
  return PolyModel(x_tree, y_trees, r, std::move(cells));
}

PolyModel
fit(const Dataset& data,
    const PartitionTree& x_tree,
    const PartitionTree& y_tree,
    const DegreeVector& r,
    const PolyFitOptions& opts)
{
  return fit(data, x_tree, std::vector<PartitionTree>(x_tree.num_leaves(), y_tree), r, opts);
}

} // namespace pcde
