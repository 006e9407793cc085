#include "pcde/simulate.hpp"

#include "pcde/errors.hpp"
#include "pcde/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <thread>

namespace pcde {

namespace {

std::string
format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string
quoted(const std::string& s)
{
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + '"';
}

DesignKey
tree_key(const PartitionTree& tree)
{
  return [tree](std::span<const double> x) { return static_cast<std::uint64_t>(tree.leaf_of(x)); };
}

Hyperrectangle
gmm_box(const SpatialGmm& model)
{
  const int p = model.dim_y();
  std::vector<double> lo(p, std::numeric_limits<double>::infinity());
  std::vector<double> hi(p, -std::numeric_limits<double>::infinity());
  auto cover = [&](const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma, const std::vector<int>& axes) {
    for (std::size_t j = 0; j < axes.size(); ++j) {
      const double half = 10.0 * std::sqrt(sigma(j, j));
      lo[axes[j]] = std::min(lo[axes[j]], mu(j) - half);
      hi[axes[j]] = std::max(hi[axes[j]], mu(j) + half);
    }
  };
  const auto axes = model.subspace().resolved(p);
  for (const auto& c : model.components())
    cover(c.mu, c.sigma(), axes);
  if (model.complement())
    cover(model.complement()->mu, model.complement()->sigma(), model.subspace().complement(p));
  return Hyperrectangle(lo, hi);
}

//! Runs f(r) for r in [0, count) on up to `threads` workers.
template<class F>
void
parallel_for(std::size_t count, std::size_t threads, F&& f)
{
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t r = 0; r < count; ++r)
      f(r);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t r = t; r < count; r += threads) {
        try {
          f(r);
        } catch (...) {
          errors[r] = std::current_exception();
        }
      }
    });
  for (auto& th : pool)
    th.join();
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

double
replicate_divergence(const GroundTruth& truth,
                     const FittedEstimate& est,
                     const RowMatrix& design,
                     const RiskOptions& opts,
                     std::uint64_t seed)
{
  if (est.is_truth)
    return 0.0;
  DivergenceConfig cfg = opts.div;
  cfg.seed = seed;
  const DesignKey tk = truth.design_key();
  DesignKey key;
  if (tk && est.key)
    key = [tk, ek = est.key](std::span<const double> x) { return (tk(x) << 32) ^ ek(x); };
  return tensorized(opts.divergence, truth.conditional(), est.density, design, truth.y_domain(), cfg, key).value;
}

struct MeanSe
{
  double mean = 0.0;
  double se = 0.0;
};

MeanSe
mean_se(const std::vector<double>& v)
{
  MeanSe out;
  if (v.empty())
    return out;
  for (double x : v)
    out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v)
      ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return out;
}

} // namespace

std::string_view
to_string(TruthKind kind)
{
  switch (kind) {
    case TruthKind::piecewise_constant:
      return "piecewise_constant";
    case TruthKind::piecewise_poly:
      return "piecewise_poly";
    case TruthKind::spatial_gmm:
      return "spatial_gmm";
    case TruthKind::custom:
      return "custom";
  }
  return "?";
}

GroundTruth
GroundTruth::piecewise_constant(PartitionTree x_tree,
                                std::vector<PartitionTree> y_trees,
                                const std::vector<std::vector<double>>& masses)
{
  if (y_trees.size() != x_tree.num_leaves() || masses.size() != x_tree.num_leaves())
    throw ContractError("piecewise_constant: one Y-partition and one mass vector per X-leaf");
  std::vector<std::vector<CellPoly>> cells(masses.size());
  for (std::size_t l = 0; l < masses.size(); ++l) {
    if (masses[l].size() != y_trees[l].num_leaves())
      throw ContractError("piecewise_constant: one mass per Y-cell");
    for (double m : masses[l]) {
      if (!(m >= 0.0))
        throw ContractError("piecewise_constant: masses must be nonnegative");
      cells[l].push_back(CellPoly{ { 1.0 }, m, 0, 0.0 });
    }
  }
  const DegreeVector r(static_cast<std::size_t>(y_trees.front().dim()), 0);
  GroundTruth t = piecewise_poly(PolyModel(std::move(x_tree), std::move(y_trees), r, std::move(cells)));
  t.kind_ = TruthKind::piecewise_constant;
  return t;
}

GroundTruth
GroundTruth::piecewise_poly(PolyModel model)
{
  GroundTruth t;
  t.kind_ = TruthKind::piecewise_poly;
  t.dim_x_ = model.dim_x();
  t.y_domain_ = Hyperrectangle::unit(model.dim_y());
  t.poly_ = std::move(model);
  t.check_normalized();
  return t;
}

GroundTruth
GroundTruth::spatial_gmm(SpatialGmm model)
{
  GroundTruth t;
  t.kind_ = TruthKind::spatial_gmm;
  t.dim_x_ = model.x_tree().dim();
  t.y_domain_ = gmm_box(model);
  t.gmm_ = std::move(model);
  t.check_normalized();
  return t;
}

GroundTruth
GroundTruth::custom(int dim_x, ConditionalDensity density, Hyperrectangle y_domain)
{
  if (!density.pdf || !density.sample)
    throw ContractError("custom truth needs both a density and a sampler");
  GroundTruth t;
  t.kind_ = TruthKind::custom;
  t.dim_x_ = dim_x;
  t.y_domain_ = std::move(y_domain);
  t.custom_ = std::move(density);
  t.check_normalized();
  return t;
}

ConditionalDensity
GroundTruth::conditional() const
{
  if (poly_) {
    const PolyModel* m = &*poly_;
    return { [m](std::span<const double> x, std::span<const double> y) { return m->density(x, y); },
             [m](std::span<const double> x, Rng& rng, std::span<double> y) { m->sample_y(x, rng, y); } };
  }
  if (gmm_) {
    const SpatialGmm* m = &*gmm_;
    return { [m](std::span<const double> x, std::span<const double> y) { return std::exp(m->log_density(x, y)); },
             [m](std::span<const double> x, Rng& rng, std::span<double> y) { m->sample_y(x, rng, y); } };
  }
  return custom_;
}

DesignKey
GroundTruth::design_key() const
{
  if (poly_)
    return tree_key(poly_->x_tree());
  if (gmm_)
    return tree_key(gmm_->x_tree());
  return {};
}

void
GroundTruth::check_normalized(double tolerance) const
{
  if (poly_) {
    for (std::size_t l = 0; l < poly_->cells().size(); ++l) {
      double mass = 0.0;
      for (const auto& c : poly_->cells()[l]) {
        double norm2 = 0.0;
        for (double v : c.coeffs)
          norm2 += v * v;
        mass += c.weight * norm2;
      }
      if (std::abs(mass - 1.0) > tolerance)
        throw ContractError("ground truth is not normalized on X-leaf " + std::to_string(l));
    }
    return;
  }
  if (gmm_) {
    for (const auto& pi : gmm_->proportions())
      if (std::abs(pi.sum() - 1.0) > tolerance || (pi.array() < 0.0).any())
        throw ContractError("ground truth proportions are not a probability vector");
    return;
  }
  const int p = dim_y();
  const TensorGrid grid(y_domain_, p <= 2 ? 64 : 8, 4);
  Rng rng = make_rng(0, 0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(dim_x_), 0.5);
  for (int probe = 0; probe < 4; ++probe) {
    const double mass = grid.integrate([&](std::span<const double> y) { return custom_.pdf(x, y); });
    if (std::abs(mass - 1.0) > tolerance)
      throw ContractError("ground truth integrates to " + format_double(mass) + " at a probe covariate");
    for (auto& v : x)
      v = u(rng);
  }
}

GroundTruth
builtin_scenario(std::string_view name)
{
  constexpr std::size_t nominal_n = std::size_t{ 1 } << 20;
  if (name == "histogram_1d") {
    const auto x_tree = PartitionTree::uniform(CollectionKind::rdp, 1, nominal_n, 1);
    const auto y_tree = PartitionTree::uniform(CollectionKind::rdp, 1, nominal_n, 2);
    return GroundTruth::piecewise_constant(
      x_tree, { y_tree, y_tree }, { { 0.4, 0.3, 0.2, 0.1 }, { 0.1, 0.1, 0.2, 0.6 } });
  }
  if (name == "poly_2d") {
    const auto x_tree = PartitionTree::uniform(CollectionKind::rdp, 2, nominal_n, 1);
    const auto y_tree = PartitionTree::root(CollectionKind::rdp, 1, nominal_n);
    std::vector<std::vector<CellPoly>> cells;
    for (double t : { 0.3, -0.5, 0.9, -0.1 })
      cells.push_back({ CellPoly{ { std::cos(t), std::sin(t) }, 1.0, 0, 0.0 } });
    return GroundTruth::piecewise_poly(
      PolyModel(x_tree, std::vector<PartitionTree>(4, y_tree), DegreeVector{ 1 }, std::move(cells)));
  }
  if (name == "gmm_2d") {
    const auto x_tree = PartitionTree::uniform(CollectionKind::rdp, 2, nominal_n, 1);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
    const std::vector<GaussianComponent> comps{ GaussianComponent::from_covariance(Eigen::Vector2d(-3.0, -3.0), eye),
                                                GaussianComponent::from_covariance(Eigen::Vector2d(3.0, 3.0), eye) };
    std::vector<Eigen::VectorXd> props;
    for (int leaf = 0; leaf < 4; ++leaf) {
      const bool even = ((leaf & 1) ^ (leaf >> 1)) == 0;
      props.push_back(even ? Eigen::Vector2d(0.8, 0.2) : Eigen::Vector2d(0.2, 0.8));
    }
    return GroundTruth::spatial_gmm(
      SpatialGmm(x_tree, comps, props, CovarianceSpec::parse("KKKK"), Subspace::full(), 2));
  }
  throw ContractError("unknown scenario '" + std::string(name) + "'");
}

std::vector<std::string>
builtin_scenarios()
{
  return { "histogram_1d", "poly_2d", "gmm_2d" };
}

RowMatrix
draw_design(const GroundTruth& truth, std::size_t n, Rng& rng)
{
  const int d = truth.dim_x();
  RowMatrix x(static_cast<Eigen::Index>(n), d);
  switch (truth.design) {
    case DesignLaw::uniform: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (int j = 0; j < d; ++j)
          x(i, j) = u(rng);
      break;
    }
    case DesignLaw::grid: {
      auto m = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n), 1.0 / d) - 1e-9));
      while (std::pow(static_cast<double>(m), d) < static_cast<double>(n))
        ++m;
      if (d == 1)
        m = n;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t rest = i;
        for (int j = d - 1; j >= 0; --j) {
          x(static_cast<Eigen::Index>(i), j) = (static_cast<double>(rest % m) + 0.5) / static_cast<double>(m);
          rest /= m;
        }
      }
      break;
    }
    case DesignLaw::custom:
      if (!truth.custom_design)
        throw ContractError("custom design law without a sampler");
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        truth.custom_design(rng, { x.data() + i * d, static_cast<std::size_t>(d) });
      break;
  }
  return x;
}

Dataset
sample(const GroundTruth& truth, std::size_t n, std::uint64_t seed)
{
  if (n < 1)
    throw ContractError("sample needs n >= 1");
  Dataset data;
  Rng design_rng = make_rng(seed, 0);
  data.x = draw_design(truth, n, design_rng);
  data.y.resize(static_cast<Eigen::Index>(n), truth.dim_y());
  Rng rng = make_rng(seed, 1);
  const ConditionalDensity cond = truth.conditional();
  const auto p = static_cast<std::size_t>(truth.dim_y());
  for (std::size_t i = 0; i < n; ++i)
    cond.sample(data.x_row(i), rng, { data.y.data() + i * p, p });
  return data;
}

Estimator
truth_estimator(const GroundTruth& truth)
{
  return [&truth](const Dataset&) {
    FittedEstimate e;
    e.density = truth.conditional();
    e.id = "truth";
    e.is_truth = true;
    return e;
  };
}

FittedEstimate
poly_estimate(const PolyModel& model)
{
  auto m = std::make_shared<PolyModel>(model);
  FittedEstimate e;
  e.density = { [m](std::span<const double> x, std::span<const double> y) { return m->density(x, y); },
                [m](std::span<const double> x, Rng& rng, std::span<double> y) { m->sample_y(x, rng, y); } };
  e.id = model_id(*m);
  e.dim = m->dimension().dim;
  e.key = tree_key(m->x_tree());
  return e;
}

FittedEstimate
gmm_estimate(const SpatialGmm& model)
{
  auto m = std::make_shared<SpatialGmm>(model);
  FittedEstimate e;
  e.density = { [m](std::span<const double> x, std::span<const double> y) { return std::exp(m->log_density(x, y)); },
                [m](std::span<const double> x, Rng& rng, std::span<double> y) { m->sample_y(x, rng, y); } };
  e.id = m->x_tree().id() + "|K=" + std::to_string(m->K()) + "|" + m->spec().code();
  e.dim = m->dimension();
  e.key = tree_key(m->x_tree());
  return e;
}

RiskRow
risk(const GroundTruth& truth,
     const Estimator& estimator,
     std::size_t n,
     std::size_t replicates,
     std::uint64_t seed,
     const RiskOptions& opts,
     std::string label)
{
  if (replicates < 3)
    throw ContractError("risk needs at least 3 replicates");
  std::vector<double> values(replicates), dims(replicates);
  parallel_for(replicates, opts.threads, [&](std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(seed, r);
    const Dataset data = sample(truth, n, rep_seed);
    const FittedEstimate est = estimator(data);
    values[r] = replicate_divergence(truth, est, data.x, opts, derive_seed(rep_seed, 7));
    dims[r] = static_cast<double>(est.dim);
  });
  const MeanSe m = mean_se(values);
  RiskRow row;
  row.n = n;
  row.model = std::move(label);
  row.risk = m.mean;
  row.std_error = m.se;
  row.replicates = replicates;
  row.mean_dim = mean_se(dims).mean;
  return row;
}

void
write_risk_csv(std::ostream& out, const std::vector<RiskRow>& rows)
{
  out << "n,model,risk,std_error,replicates,mean_dim\n";
  for (const auto& r : rows)
    out << r.n << ',' << quoted(r.model) << ',' << format_double(r.risk) << ',' << format_double(r.std_error) << ','
        << r.replicates << ',' << format_double(r.mean_dim) << '\n';
}

void
OracleTable::write_csv(std::ostream& out) const
{
  out << "model,dim,risk,std_error,score,oracle\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << quoted(r.model) << ',' << r.dim << ',' << format_double(r.risk) << ',' << format_double(r.std_error) << ','
        << format_double(r.score) << ',' << (i == oracle ? 1 : 0) << '\n';
  }
  out << quoted("selected") << ',' << format_double(selected.mean_dim) << ',' << format_double(selected.risk) << ','
      << format_double(selected.std_error) << ",," << format_double(ratio) << '\n';
}

OracleTable
oracle_table(const GroundTruth& truth,
             const std::vector<Estimator>& grid,
             const Estimator& selector,
             std::size_t n,
             std::size_t replicates,
             std::uint64_t seed,
             const RiskOptions& opts)
{
  if (grid.empty())
    throw ContractError("oracle_table needs a nonempty model grid");
  if (replicates < 3)
    throw ContractError("oracle_table needs at least 3 replicates");
  const std::size_t m = grid.size();
  // values[r][j]: divergence of grid model j (j == m: selector) on replicate r
  std::vector<std::vector<double>> values(replicates, std::vector<double>(m + 1));
  std::vector<std::vector<double>> scores(replicates, std::vector<double>(m + 1));
  std::vector<std::vector<double>> dims(replicates, std::vector<double>(m + 1));
  std::vector<std::string> ids(m);
  parallel_for(replicates, opts.threads, [&](std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(seed, r);
    const Dataset data = sample(truth, n, rep_seed);
    for (std::size_t j = 0; j <= m; ++j) {
      const FittedEstimate est = j < m ? grid[j](data) : selector(data);
      values[r][j] = replicate_divergence(truth, est, data.x, opts, derive_seed(rep_seed, 7));
      scores[r][j] = est.score;
      dims[r][j] = static_cast<double>(est.dim);
      if (r == 0 && j < m)
        ids[j] = est.id;
    }
  });

  OracleTable table;
  table.n = n;
  table.replicates = replicates;
  auto column = [&](const std::vector<std::vector<double>>& v, std::size_t j) {
    std::vector<double> out;
    for (const auto& row : v)
      out.push_back(row[j]);
    return out;
  };
  for (std::size_t j = 0; j < m; ++j) {
    const MeanSe rs = mean_se(column(values, j));
    OracleRow row;
    row.model = ids[j];
    row.dim = static_cast<long long>(std::llround(mean_se(column(dims, j)).mean));
    row.risk = rs.mean;
    row.std_error = rs.se;
    row.score = mean_se(column(scores, j)).mean;
    table.rows.push_back(row);
    if (row.risk < table.rows[table.oracle].risk)
      table.oracle = j;
  }
  const MeanSe sel = mean_se(column(values, m));
  table.selected.n = n;
  table.selected.model = "selected";
  table.selected.risk = sel.mean;
  table.selected.std_error = sel.se;
  table.selected.replicates = replicates;
  table.selected.mean_dim = mean_se(column(dims, m)).mean;
  const double oracle_risk = table.rows[table.oracle].risk;
  table.ratio = oracle_risk > 0.0 ? sel.mean / oracle_risk : (sel.mean > 0.0 ? INFINITY : 1.0);
  return table;
}

bool
u_shaped(const std::vector<double>& values, double slack)
{
  if (values.size() < 3)
    return false;
  const auto m = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  if (m == 0 || m + 1 == values.size())
    return false;
  for (std::size_t i = 0; i < m; ++i)
    if (values[i + 1] > values[i] + slack)
      return false;
  for (std::size_t i = m; i + 1 < values.size(); ++i)
    if (values[i + 1] < values[i] - slack)
      return false;
  return true;
}

} // namespace pcde
