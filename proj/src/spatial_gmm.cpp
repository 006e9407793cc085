#include "pcde/spatial_gmm.hpp"

#include "pcde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pcde {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double
log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v)
{
  const double m = v.maxCoeff();
  if (m == neg_inf)
    return neg_inf;
  return m + std::log((v.array() - m).exp().sum());
}

int
multiplier(ParamMode mode, int K)
{
  switch (mode) {
    case ParamMode::known:
      return 0;
    case ParamMode::common:
      return 1;
    case ParamMode::free:
      return K;
  }
  return 0;
}

char
mode_char(ParamMode mode)
{
  switch (mode) {
    case ParamMode::known:
      return '0';
    case ParamMode::common:
      return '1';
    case ParamMode::free:
      return 'K';
  }
  return '?';
}

Eigen::MatrixXd
default_basis(const CovarianceSpec& spec, int p)
{
  return spec.known_basis.size() == 0 ? Eigen::MatrixXd::Identity(p, p) : spec.known_basis;
}

Eigen::VectorXd
default_shape(const CovarianceSpec& spec, int p)
{
  return spec.known_shape.size() == 0 ? Eigen::VectorXd::Ones(p) : spec.known_shape;
}

Eigen::VectorXd
known_mean(const CovarianceSpec& spec, int k, int p)
{
  return spec.known_means.size() == 0 ? Eigen::VectorXd::Zero(p) : Eigen::VectorXd(spec.known_means.row(k).transpose());
}

Eigen::VectorXd
normalize_shape(Eigen::VectorXd a)
{
  const double log_det = a.array().log().sum();
  if (std::abs(log_det) > 1e-12)
    a *= std::exp(-log_det / static_cast<double>(a.size()));
  return a;
}

//! Euclidean projection in log space onto [log lo, log hi]^p intersected
//! with {sum log a = 0}.
Eigen::VectorXd
project_shape(const Eigen::VectorXd& a, double lo, double hi)
{
  const double llo = std::log(lo), lhi = std::log(hi);
  Eigen::ArrayXd x = a.array().log();
  if (x.minCoeff() >= llo && x.maxCoeff() <= lhi && std::abs(x.sum()) <= 1e-12)
    return a;
  auto clamped_sum = [&](double t) { return (x + t).max(llo).min(lhi).sum(); };
  double t_lo = llo - x.maxCoeff(), t_hi = lhi - x.minCoeff();
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (t_lo + t_hi);
    if (clamped_sum(mid) < 0.0)
      t_lo = mid;
    else
      t_hi = mid;
  }
  Eigen::ArrayXd out = (x + 0.5 * (t_lo + t_hi)).max(llo).min(lhi);
  return out.exp().matrix();
}

template<typename F>
bool
all_equal(const std::vector<GaussianComponent>& c, F&& get)
{
  for (std::size_t k = 1; k < c.size(); ++k)
    if (!(get(c[k]) == get(c[0])))
      return false;
  return true;
}

//! Columns of D ordered so that the largest eigenvalue of m pairs with the
//! largest entry of `a`: minimizes tr(m D diag(a)^-1 D').
Eigen::MatrixXd
paired_eigenbasis(const Eigen::MatrixXd& m, const Eigen::VectorXd& a)
{
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const auto p = a.size();
  std::vector<int> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a[i] > a[j]; });
  Eigen::MatrixXd d(p, p);
  // Eigenvalues ascend; rank r of a (0 = largest) takes eigenvector p-1-r.
  for (Eigen::Index r = 0; r < p; ++r)
    d.col(order[r]) = es.eigenvectors().col(p - 1 - r);
  return d;
}

struct MStepInput
{
  const Eigen::MatrixXd& y; // n x p
  const Eigen::MatrixXd& gamma; // n x K
};

std::vector<GaussianComponent>
m_step(const MStepInput& in,
       std::vector<GaussianComponent> comps,
       const CovarianceSpec& spec,
       int inner_sweeps)
{
  const int K = static_cast<int>(comps.size());
  const auto p = in.y.cols();
  const double n = static_cast<double>(in.y.rows());
  const Eigen::VectorXd nk = in.gamma.colwise().sum().transpose();
  for (int k = 0; k < K; ++k)
    if (!(nk[k] > 1e-12 * n))
      throw DegenerateFitError("component " + std::to_string(k + 1) + " received no responsibility", k + 1);
  const Eigen::MatrixXd sums = in.y.transpose() * in.gamma; // p x K

  // Means.
  switch (spec.mean_mode) {
    case ParamMode::free:
      for (int k = 0; k < K; ++k)
        comps[k].mu = sums.col(k) / nk[k];
      break;
    case ParamMode::common: {
      Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(p, p);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
      for (int k = 0; k < K; ++k) {
        const Eigen::MatrixXd prec = spd_factor(comps[k].sigma(), "component covariance").solve(Eigen::MatrixXd::Identity(p, p));
        lhs += nk[k] * prec;
        rhs += prec * sums.col(k);
      }
      const Eigen::VectorXd mu = spd_factor(0.5 * (lhs + lhs.transpose()), "pooled precision").solve(rhs);
      for (auto& c : comps)
        c.mu = mu;
      break;
    }
    case ParamMode::known:
      for (int k = 0; k < K; ++k)
        comps[k].mu = known_mean(spec, k, static_cast<int>(p));
      break;
  }

  std::vector<Eigen::MatrixXd> w(K);
  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd centered = in.y.rowwise() - comps[k].mu.transpose();
    w[k] = centered.transpose() * in.gamma.col(k).asDiagonal() * centered;
  }

  const bool all_free = spec.volume_mode == ParamMode::free && spec.basis_mode == ParamMode::free &&
                        spec.shape_mode == ParamMode::free;
  const bool all_common = spec.volume_mode == ParamMode::common && spec.basis_mode == ParamMode::common &&
                          spec.shape_mode == ParamMode::common;
  if (all_free) {
    for (int k = 0; k < K; ++k)
      comps[k] = GaussianComponent::from_covariance(comps[k].mu, w[k] / nk[k]);
    return comps;
  }
  if (all_common) {
    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(p, p);
    for (int k = 0; k < K; ++k)
      pooled += w[k];
    pooled /= n;
    for (int k = 0; k < K; ++k)
      comps[k] = GaussianComponent::from_covariance(comps[k].mu, pooled);
    return comps;
  }

  auto inverse_a = [](const GaussianComponent& c) { return c.A.cwiseInverse(); };
  for (int sweep = 0; sweep < inner_sweeps; ++sweep) {
    // Orientation.
    if (spec.basis_mode == ParamMode::free) {
      for (int k = 0; k < K; ++k)
        comps[k].D = paired_eigenbasis(w[k], comps[k].A);
    } else if (spec.basis_mode == ParamMode::common) {
      if (all_equal(comps, [](const GaussianComponent& c) { return c.A; })) {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p, p);
        for (int k = 0; k < K; ++k)
          m += w[k] / comps[k].L;
        const Eigen::MatrixXd d = paired_eigenbasis(m, comps[0].A);
        for (auto& c : comps)
          c.D = d;
      } else {
        // Jacobi rotations of column pairs; each minimizes
        // sum_k tr(W_k D A_k^-1 D') / L_k along one plane in closed form.
        Eigen::MatrixXd d = comps[0].D;
        for (int jacobi = 0; jacobi < 10; ++jacobi) {
          bool rotated = false;
          for (Eigen::Index i = 0; i < p; ++i) {
            for (Eigen::Index j = i + 1; j < p; ++j) {
              double beta = 0.0, gamma = 0.0, scale = 0.0;
              for (int k = 0; k < K; ++k) {
                const Eigen::VectorXd inv = inverse_a(comps[k]);
                const Eigen::MatrixXd m = w[k] / comps[k].L;
                const double mii = d.col(i).dot(m * d.col(i));
                const double mjj = d.col(j).dot(m * d.col(j));
                const double mij = d.col(i).dot(m * d.col(j));
                beta += 0.5 * (inv[i] - inv[j]) * (mii - mjj);
                gamma += (inv[i] - inv[j]) * mij;
                scale += std::abs(inv[i] * mii) + std::abs(inv[j] * mjj);
              }
              const double gain = beta + std::hypot(beta, gamma);
              if (gain <= 1e-13 * scale)
                continue;
              const double theta = 0.5 * std::atan2(-gamma, -beta);
              const double ct = std::cos(theta), st = std::sin(theta);
              const Eigen::VectorXd di = d.col(i), dj = d.col(j);
              d.col(i) = ct * di + st * dj;
              d.col(j) = -st * di + ct * dj;
              rotated = true;
            }
          }
          if (!rotated)
            break;
        }
        for (auto& c : comps)
          c.D = d;
      }
    }

    // Shape.
    if (spec.shape_mode == ParamMode::free) {
      for (int k = 0; k < K; ++k) {
        const Eigen::VectorXd diag = (comps[k].D.transpose() * w[k] * comps[k].D).diagonal();
        if ((diag.array() <= 0.0).any())
          throw DegenerateFitError("component " + std::to_string(k + 1) + " has a degenerate shape", k + 1);
        comps[k].A = normalize_shape(diag);
      }
    } else if (spec.shape_mode == ParamMode::common) {
      Eigen::VectorXd diag = Eigen::VectorXd::Zero(p);
      for (int k = 0; k < K; ++k)
        diag += (comps[k].D.transpose() * w[k] * comps[k].D).diagonal() / comps[k].L;
      if ((diag.array() <= 0.0).any())
        throw DegenerateFitError("pooled shape is degenerate", 0);
      const Eigen::VectorXd a = normalize_shape(diag);
      for (auto& c : comps)
        c.A = a;
    }

    // Volume.
    auto trace_term = [&](int k) {
      const auto& c = comps[k];
      return (w[k] * c.D * inverse_a(c).asDiagonal() * c.D.transpose()).trace();
    };
    if (spec.volume_mode == ParamMode::free) {
      for (int k = 0; k < K; ++k)
        comps[k].L = trace_term(k) / (static_cast<double>(p) * nk[k]);
    } else if (spec.volume_mode == ParamMode::common) {
      double total = 0.0;
      for (int k = 0; k < K; ++k)
        total += trace_term(k);
      const double l = total / (static_cast<double>(p) * n);
      for (auto& c : comps)
        c.L = l;
    }
  }
  return comps;
}

void
check_degenerate(const std::vector<GaussianComponent>& comps, double floor)
{
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const double smallest = comps[k].L * comps[k].A.minCoeff();
    if (!(smallest >= floor) || !comps[k].mu.allFinite())
      throw DegenerateFitError("component " + std::to_string(k + 1) + " collapsed (covariance eigenvalue " +
                                 std::to_string(smallest) + ")",
                               static_cast<int>(k) + 1);
  }
}

Eigen::MatrixXd
select_columns(const RowMatrix& y, const std::vector<int>& axes)
{
  Eigen::MatrixXd out(y.rows(), static_cast<Eigen::Index>(axes.size()));
  for (std::size_t j = 0; j < axes.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = y.col(axes[j]);
  return out;
}

std::vector<GaussianComponent>
kmeanspp_init(const Eigen::MatrixXd& y, int K, const CovarianceSpec& spec, const EmOptions& opts)
{
  const auto n = y.rows();
  const auto p = y.cols();
  Rng rng = make_rng(opts.seed, 0);
  std::vector<Eigen::Index> centers;
  centers.push_back(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  Eigen::VectorXd d2 = (y.rowwise() - y.row(centers[0])).rowwise().squaredNorm();
  for (int k = 1; k < K; ++k) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        if (u < d2[pick])
          break;
        u -= d2[pick];
      }
    } else {
      pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin((y.rowwise() - y.row(pick)).rowwise().squaredNorm());
  }
  Eigen::MatrixXd c(K, p);
  for (int k = 0; k < K; ++k)
    c.row(k) = y.row(centers[k]);

  // A few Lloyd iterations.
  std::vector<int> label(n, 0);
  for (int it = 0; it < 10; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best;
      (c.rowwise() - y.row(i)).rowwise().squaredNorm().minCoeff(&best);
      label[i] = static_cast<int>(best);
    }
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(K, p);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(K);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(label[i]) += y.row(i);
      count[label[i]] += 1.0;
    }
    for (int k = 0; k < K; ++k)
      if (count[k] > 0.0)
        c.row(k) = next.row(k) / count[k];
  }

  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd r = (y.row(i) - c.row(label[i])).transpose();
    pooled += r * r.transpose();
  }
  pooled /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pooled);
  if (!(es.eigenvalues().minCoeff() > 10.0 * opts.covariance_floor)) {
    const Eigen::MatrixXd centered = y.rowwise() - y.colwise().mean();
    pooled = centered.transpose() * centered / static_cast<double>(n);
    es.compute(pooled);
    if (!(es.eigenvalues().minCoeff() > opts.covariance_floor))
      throw DegenerateFitError("responses are degenerate; no covariance can be initialized", 0);
  }

  std::vector<GaussianComponent> comps;
  for (int k = 0; k < K; ++k)
    comps.push_back(GaussianComponent::from_covariance(c.row(k).transpose(), pooled));
  if (spec.mean_mode == ParamMode::common) {
    const Eigen::VectorXd mu = y.colwise().mean().transpose();
    for (auto& comp : comps)
      comp.mu = mu;
  }
  return project_constraints(std::move(comps), spec);
}

} // namespace

// ---------------------------------------------------------------- CovarianceSpec

void
CovarianceSpec::validate(int K, int p) const
{
  if (K < 1 || p < 1)
    throw ContractError("mixture needs K >= 1 and a positive response dimension");
  if (!(L_minus > 0.0 && L_minus <= L_plus))
    throw ContractError("volume bounds must satisfy 0 < L_minus <= L_plus");
  if (!(lambda_minus > 0.0 && lambda_minus <= 1.0 && 1.0 <= lambda_plus))
    throw ContractError("shape bounds must satisfy 0 < lambda_minus <= 1 <= lambda_plus");
  if (!(a > 0.0))
    throw ContractError("mean bound a must be positive");
  if (known_means.size() != 0 && (known_means.rows() != K || known_means.cols() != p))
    throw ContractError("known means must be a K x p matrix");
  if (!(known_volume > 0.0))
    throw ContractError("known volume must be positive");
  if (known_basis.size() != 0) {
    if (known_basis.rows() != p || known_basis.cols() != p)
      throw ContractError("known basis must be p x p");
    if (!(known_basis.transpose() * known_basis).isIdentity(1e-10))
      throw ContractError("known basis must be orthogonal");
  }
  if (known_shape.size() != 0) {
    if (known_shape.size() != p || (known_shape.array() <= 0.0).any())
      throw ContractError("known shape must hold p positive entries");
    if (std::abs(known_shape.array().log().sum()) > 1e-10)
      throw ContractError("known shape must have determinant one");
  }
}

std::string
CovarianceSpec::code() const
{
  return { mode_char(mean_mode), mode_char(volume_mode), mode_char(basis_mode), mode_char(shape_mode) };
}

CovarianceSpec
CovarianceSpec::parse(const std::string& code)
{
  if (code.size() != 4)
    throw ContractError("covariance spec '" + code + "' must have four characters from {0, 1, K}");
  auto mode = [&](char c) {
    switch (c) {
      case '0':
        return ParamMode::known;
      case '1':
        return ParamMode::common;
      case 'K':
      case 'k':
        return ParamMode::free;
      default:
        throw ContractError("covariance spec '" + code + "' must have four characters from {0, 1, K}");
    }
  };
  CovarianceSpec spec;
  spec.mean_mode = mode(code[0]);
  spec.volume_mode = mode(code[1]);
  spec.basis_mode = mode(code[2]);
  spec.shape_mode = mode(code[3]);
  return spec;
}

// ---------------------------------------------------------------- GaussianComponent

Eigen::MatrixXd
GaussianComponent::sigma() const
{
  const Eigen::MatrixXd s = L * D * A.asDiagonal() * D.transpose();
  return 0.5 * (s + s.transpose());
}

GaussianComponent
GaussianComponent::from_covariance(Eigen::VectorXd mu, const Eigen::MatrixXd& sigma)
{
  const auto p = sigma.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sigma + sigma.transpose()));
  if (es.info() != Eigen::Success)
    throw LinearAlgebraError("eigendecomposition of a covariance failed");
  GaussianComponent c;
  c.mu = std::move(mu);
  c.D.resize(p, p);
  c.A.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    c.A[j] = es.eigenvalues()[p - 1 - j];
    Eigen::VectorXd v = es.eigenvectors().col(p - 1 - j);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0)
      v = -v;
    c.D.col(j) = v;
  }
  if (!(c.A.minCoeff() > 0.0)) {
    c.L = 0.0;
    return c;
  }
  c.L = std::exp(c.A.array().log().mean());
  c.A /= c.L;
  return c;
}

std::vector<GaussianComponent>
project_constraints(std::vector<GaussianComponent> comps, const CovarianceSpec& spec)
{
  if (comps.empty())
    return comps;
  const int K = static_cast<int>(comps.size());
  const int p = comps[0].dim();

  switch (spec.mean_mode) {
    case ParamMode::known:
      for (int k = 0; k < K; ++k)
        comps[k].mu = known_mean(spec, k, p);
      break;
    case ParamMode::common:
      if (!all_equal(comps, [](const GaussianComponent& c) { return c.mu; })) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
        for (const auto& c : comps)
          mean += c.mu;
        mean /= K;
        for (auto& c : comps)
          c.mu = mean;
      }
      break;
    case ParamMode::free:
      break;
  }

  switch (spec.volume_mode) {
    case ParamMode::known:
      for (auto& c : comps)
        c.L = spec.known_volume;
      break;
    case ParamMode::common:
      if (!all_equal(comps, [](const GaussianComponent& c) { return c.L; })) {
        double log_mean = 0.0;
        for (const auto& c : comps)
          log_mean += std::log(c.L);
        const double l = std::exp(log_mean / K);
        for (auto& c : comps)
          c.L = l;
      }
      break;
    case ParamMode::free:
      break;
  }

  switch (spec.basis_mode) {
    case ParamMode::known: {
      const Eigen::MatrixXd d = default_basis(spec, p);
      for (auto& c : comps)
        c.D = d;
      break;
    }
    case ParamMode::common:
      for (auto& c : comps)
        c.D = comps[0].D;
      break;
    case ParamMode::free:
      break;
  }

  switch (spec.shape_mode) {
    case ParamMode::known: {
      const Eigen::VectorXd a = default_shape(spec, p);
      for (auto& c : comps)
        c.A = a;
      break;
    }
    case ParamMode::common:
      if (!all_equal(comps, [](const GaussianComponent& c) { return c.A; })) {
        Eigen::ArrayXd log_mean = Eigen::ArrayXd::Zero(p);
        for (const auto& c : comps)
          log_mean += c.A.array().log();
        const Eigen::VectorXd a = normalize_shape((log_mean / K).exp().matrix());
        for (auto& c : comps)
          c.A = a;
      }
      break;
    case ParamMode::free:
      break;
  }
  for (auto& c : comps)
    if (spec.shape_mode != ParamMode::known)
      c.A = normalize_shape(c.A);

  if (spec.enforce_bounds) {
    for (auto& c : comps) {
      c.mu = c.mu.cwiseMax(-spec.a).cwiseMin(spec.a);
      c.L = std::clamp(c.L, spec.L_minus, spec.L_plus);
      c.A = project_shape(c.A, spec.lambda_minus, spec.lambda_plus);
    }
  }
  return comps;
}

// ---------------------------------------------------------------- Subspace

Subspace
Subspace::leading(int e_dim, SubspaceMode mode)
{
  Subspace s;
  s.mode = mode;
  for (int j = 0; j < e_dim; ++j)
    s.axes.push_back(j);
  return s;
}

std::vector<int>
Subspace::resolved(int p) const
{
  if (axes.empty()) {
    std::vector<int> all(p);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<int> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() || sorted.front() < 0 || sorted.back() >= p)
    throw ContractError("subspace axes must be distinct response coordinates");
  return axes;
}

std::vector<int>
Subspace::complement(int p) const
{
  const auto in = resolved(p);
  std::vector<int> out;
  for (int j = 0; j < p; ++j)
    if (std::find(in.begin(), in.end(), j) == in.end())
      out.push_back(j);
  return out;
}

// ---------------------------------------------------------------- SpatialGmm

SpatialGmm::SpatialGmm(PartitionTree x_tree,
                       std::vector<GaussianComponent> components,
                       std::vector<Eigen::VectorXd> proportions,
                       CovarianceSpec spec,
                       Subspace subspace,
                       int dim_y,
                       std::optional<GaussianComponent> complement)
  : x_tree_(std::move(x_tree))
  , components_(std::move(components))
  , proportions_(std::move(proportions))
  , spec_(std::move(spec))
  , subspace_(std::move(subspace))
  , dim_y_(dim_y)
  , complement_(std::move(complement))
{
  if (components_.empty())
    throw ContractError("SpatialGmm needs at least one component");
  if (proportions_.size() != x_tree_.num_leaves())
    throw ContractError("SpatialGmm needs one proportion vector per X-leaf");
  axes_ = subspace_.resolved(dim_y_);
  complement_axes_ = subspace_.complement(dim_y_);
  for (const auto& c : components_)
    if (c.dim() != static_cast<int>(axes_.size()))
      throw ContractError("component dimension differs from the subspace dimension");
  for (const auto& pi : proportions_) {
    if (pi.size() != K() || (pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-9)
      throw ContractError("proportion vectors must lie in the simplex");
  }
  if (complement_axes_.empty() != !complement_.has_value())
    throw ContractError("a complement Gaussian is required exactly when the subspace is proper");
  build_cache();
}

void
SpatialGmm::build_cache()
{
  gaussians_.clear();
  for (const auto& c : components_)
    gaussians_.emplace_back(c.mu, c.sigma());
  if (complement_)
    complement_gaussian_.emplace(complement_->mu, complement_->sigma());
}

Eigen::VectorXd
SpatialGmm::component_log_densities(std::span<const double> y) const
{
  Eigen::VectorXd ye(axes_.size());
  for (std::size_t j = 0; j < axes_.size(); ++j)
    ye[static_cast<Eigen::Index>(j)] = y[axes_[j]];
  double shared = 0.0;
  if (complement_gaussian_) {
    Eigen::VectorXd yc(complement_axes_.size());
    for (std::size_t j = 0; j < complement_axes_.size(); ++j)
      yc[static_cast<Eigen::Index>(j)] = y[complement_axes_[j]];
    shared = complement_gaussian_->log_pdf(yc);
  }
  Eigen::VectorXd out(K());
  for (int k = 0; k < K(); ++k)
    out[k] = gaussians_[k].log_pdf(ye) + shared;
  return out;
}

double
SpatialGmm::log_density(std::span<const double> x, std::span<const double> y) const
{
  const auto& pi = proportions_[x_tree_.leaf_of(x)];
  return log_sum_exp(pi.array().log().matrix() + component_log_densities(y));
}

double
SpatialGmm::log_likelihood(const Dataset& data) const
{
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += log_density(data.x_row(i), data.y_row(i));
  return total;
}

Eigen::MatrixXd
SpatialGmm::log_density_matrix(const RowMatrix& y) const
{
  Eigen::MatrixXd out(y.rows(), K());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    out.row(i) =
      component_log_densities({ y.data() + i * y.cols(), static_cast<std::size_t>(y.cols()) }).transpose();
  return out;
}

std::vector<int>
SpatialGmm::segment(const Dataset& data) const
{
  std::vector<int> labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& pi = proportions_[x_tree_.leaf_of(data.x_row(i))];
    const Eigen::VectorXd f = component_log_densities(data.y_row(i));
    int best = 0;
    double best_value = neg_inf;
    for (int k = 0; k < K(); ++k) {
      const double v = std::log(pi[k]) + f[k];
      if (v > best_value) {
        best_value = v;
        best = k;
      }
    }
    labels[i] = best + 1;
  }
  return labels;
}

void
SpatialGmm::sample_y(std::span<const double> x, Rng& rng, std::span<double> y, int* label) const
{
  const auto& pi = proportions_[x_tree_.leaf_of(x)];
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  int k = K() - 1;
  for (int j = 0; j < K(); ++j) {
    if (u < pi[j]) {
      k = j;
      break;
    }
    u -= pi[j];
  }
  while (pi[k] <= 0.0 && k > 0)
    --k;
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(axes_.size());
  for (Eigen::Index j = 0; j < z.size(); ++j)
    z[j] = normal(rng);
  const Eigen::VectorXd ye = gaussians_[k].transform(z);
  for (std::size_t j = 0; j < axes_.size(); ++j)
    y[axes_[j]] = ye[static_cast<Eigen::Index>(j)];
  if (complement_gaussian_) {
    Eigen::VectorXd zc(complement_axes_.size());
    for (Eigen::Index j = 0; j < zc.size(); ++j)
      zc[j] = normal(rng);
    const Eigen::VectorXd yc = complement_gaussian_->transform(zc);
    for (std::size_t j = 0; j < complement_axes_.size(); ++j)
      y[complement_axes_[j]] = yc[static_cast<Eigen::Index>(j)];
  }
  if (label)
    *label = k + 1;
}

long long
SpatialGmm::dimension() const
{
  return gmm_dimension(x_tree_.num_leaves(), K(), spec_, static_cast<int>(axes_.size()), dim_y_);
}

// ---------------------------------------------------------------- fitting

SpatialGmm
em_fit(const Dataset& data,
       const PartitionTree& x_tree,
       int K,
       const CovarianceSpec& spec,
       const Subspace& subspace,
       const EmOptions& opts)
{
  const auto n = static_cast<Eigen::Index>(data.size());
  const int p = data.dim_y();
  const auto axes = subspace.resolved(p);
  const auto comp_axes = subspace.complement(p);
  const int e = static_cast<int>(axes.size());
  spec.validate(K, e);
  if (n < K)
    throw ContractError("em_fit needs at least K observations");
  if (data.dim_x() != x_tree.dim())
    throw ContractError("em_fit: covariate dimension differs from the partition");

  const Eigen::MatrixXd ye = select_columns(data.y, axes);
  const std::size_t leaves = x_tree.num_leaves();
  std::vector<std::size_t> leaf(n);
  std::vector<double> leaf_count(leaves, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    leaf[i] = x_tree.leaf_of(data.x_row(i));
    leaf_count[leaf[i]] += 1.0;
  }

  // Shared non-discriminant Gaussian on the complement coordinates.
  std::optional<GaussianComponent> complement;
  double complement_loglik = 0.0;
  if (!comp_axes.empty()) {
    const Eigen::MatrixXd yc = select_columns(data.y, comp_axes);
    CovarianceSpec cspec = spec;
    cspec.known_means.resize(0, 0);
    cspec.known_basis.resize(0, 0);
    cspec.known_shape.resize(0);
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(n, 1);
    const Eigen::VectorXd mean = yc.colwise().mean().transpose();
    const Eigen::MatrixXd centered = yc.rowwise() - mean.transpose();
    std::vector<GaussianComponent> start{ GaussianComponent::from_covariance(
      mean, centered.transpose() * centered / static_cast<double>(n)) };
    check_degenerate(start, opts.covariance_floor);
    start = project_constraints(std::move(start), cspec);
    for (int sweep = 0; sweep < 5; ++sweep)
      start = project_constraints(m_step({ yc, ones }, std::move(start), cspec, opts.inner_sweeps), cspec);
    check_degenerate(start, opts.covariance_floor);
    complement = start[0];
    const Gaussian g(complement->mu, complement->sigma());
    for (Eigen::Index i = 0; i < n; ++i)
      complement_loglik += g.log_pdf(Eigen::VectorXd(yc.row(i).transpose()));
  }

  std::vector<GaussianComponent> comps =
    opts.init_components ? project_constraints(*opts.init_components, spec) : kmeanspp_init(ye, K, spec, opts);
  if (static_cast<int>(comps.size()) != K)
    throw ContractError("initial components must number K");
  std::vector<Eigen::VectorXd> props =
    opts.init_proportions ? *opts.init_proportions
                          : std::vector<Eigen::VectorXd>(leaves, Eigen::VectorXd::Constant(K, 1.0 / K));
  if (props.size() != leaves)
    throw ContractError("initial proportions must be given for every X-leaf");
  check_degenerate(comps, opts.covariance_floor);

  std::vector<double> trace;
  Eigen::MatrixXd gamma(n, K);
  int iter = 0;
  for (;; ++iter) {
    // E-step.
    std::vector<Gaussian> g;
    for (const auto& c : comps)
      g.emplace_back(c.mu, c.sigma());
    std::vector<Eigen::VectorXd> log_pi(leaves);
    for (std::size_t l = 0; l < leaves; ++l)
      log_pi[l] = props[l].array().log().matrix();
    double ll = complement_loglik;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd yi = ye.row(i).transpose();
      Eigen::VectorXd r(K);
      for (int k = 0; k < K; ++k)
        r[k] = log_pi[leaf[i]][k] + g[k].log_pdf(yi);
      const double lse = log_sum_exp(r);
      ll += lse;
      gamma.row(i) = (r.array() - lse).exp().matrix().transpose();
    }
    trace.push_back(ll);
    if (iter > 0 && ll - trace[trace.size() - 2] < opts.tol * std::abs(ll))
      break;
    if (iter >= opts.max_iter)
      break;

    // M-step: proportions per leaf, then the shared components.
    for (std::size_t l = 0; l < leaves; ++l)
      props[l].setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      props[leaf[i]] += gamma.row(i).transpose();
    for (std::size_t l = 0; l < leaves; ++l) {
      if (leaf_count[l] == 0.0)
        props[l] = Eigen::VectorXd::Constant(K, 1.0 / K);
      else
        props[l] /= props[l].sum();
    }
    comps = m_step({ ye, gamma }, std::move(comps), spec, opts.inner_sweeps);
    if (spec.enforce_bounds)
      comps = project_constraints(std::move(comps), spec);
    check_degenerate(comps, opts.covariance_floor);
  }

  SpatialGmm model(x_tree, std::move(comps), std::move(props), spec, subspace, p, complement);
  model.loglik_trace = std::move(trace);
  model.iterations = iter;
  return model;
}

long long
theta_dimension(int K, const CovarianceSpec& spec, int e_dim, int p)
{
  auto block = [&](int k, int q) {
    const long long mu = q;
    const long long l = 1;
    const long long d = static_cast<long long>(q) * (q - 1) / 2;
    const long long a = q - 1;
    return multiplier(spec.mean_mode, k) * mu + multiplier(spec.volume_mode, k) * l +
           multiplier(spec.basis_mode, k) * d + multiplier(spec.shape_mode, k) * a;
  };
  long long total = block(K, e_dim);
  if (e_dim < p)
    total += block(1, p - e_dim);
  return total;
}

long long
gmm_dimension(std::size_t leaves, int K, const CovarianceSpec& spec, int e_dim, int p)
{
  if (K < 1 || e_dim < 1 || e_dim > p)
    throw ContractError("gmm_dimension: need K >= 1 and 1 <= E_dim <= p");
  return static_cast<long long>(leaves) * (K - 1) + theta_dimension(K, spec, e_dim, p);
}

double
variable_selection_weight(SubspaceMode mode, int e_dim, int p)
{
  if (e_dim < 1 || e_dim > p)
    throw ContractError("variable_selection_weight: need 1 <= E_dim <= p");
  switch (mode) {
    case SubspaceMode::known:
      return 0.0;
    case SubspaceMode::ordered:
      return e_dim;
    case SubspaceMode::free:
      return (1.0 + std::log(2.0) + std::log(static_cast<double>(p) / e_dim)) * e_dim;
  }
  return 0.0;
}

double
mixture_loglik(const Eigen::MatrixXd& log_f, const Eigen::VectorXd& pi)
{
  const Eigen::VectorXd log_pi = pi.array().log().matrix();
  double total = 0.0;
  for (Eigen::Index i = 0; i < log_f.rows(); ++i)
    total += log_sum_exp(log_f.row(i).transpose() + log_pi);
  return total;
}

Eigen::VectorXd
fit_leaf_proportions(const Eigen::MatrixXd& log_f, const Eigen::VectorXd& start, double tol, int max_iter)
{
  const auto K = log_f.cols();
  if (start.size() != K)
    throw ContractError("fit_leaf_proportions: start has the wrong length");
  if (log_f.rows() == 0 || K == 1)
    return start;
  Eigen::VectorXd pi = start;
  double prev = mixture_loglik(log_f, pi);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd log_pi = pi.array().log().matrix();
    Eigen::VectorXd next = Eigen::VectorXd::Zero(K);
    for (Eigen::Index i = 0; i < log_f.rows(); ++i) {
      const Eigen::VectorXd r = log_f.row(i).transpose() + log_pi;
      next += (r.array() - log_sum_exp(r)).exp().matrix();
    }
    pi = next / next.sum();
    const double ll = mixture_loglik(log_f, pi);
    const bool done = ll - prev < tol * (1.0 + std::abs(ll));
    prev = ll;
    if (done)
      break;
  }
  return pi;
}

} // namespace pcde
