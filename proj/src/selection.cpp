#include "pcde/selection.hpp"

#include "pcde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <set>

namespace pcde {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();
constexpr double score_tolerance = 1e-12;

std::string
format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool
scores_tie(double a, double b)
{
  return std::abs(a - b) <= score_tolerance * std::max({ 1.0, std::abs(a), std::abs(b) });
}

void
append_shape_id(const TreeShape& shape, std::string& out)
{
  if (!shape.split) {
    out += 'L';
    return;
  }
  if (shape.split->type == SplitDescriptor::Type::dyadic)
    out += 'D';
  else
    out += 'S' + std::to_string(shape.split->axis) + '@' + format_double(shape.split->position);
  out += '(';
  for (std::size_t c = 0; c < shape.children.size(); ++c) {
    if (c)
      out += ',';
    append_shape_id(*shape.children[c], out);
  }
  out += ')';
}

std::string
shape_id(const TreeShape& shape)
{
  std::string out;
  append_shape_id(shape, out);
  return out;
}

std::string
degree_id(const DegreeVector& r)
{
  std::string out = "r=";
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (j)
      out += ',';
    out += std::to_string(r[j]);
  }
  return out;
}

double
positive_part(double x)
{
  return std::max(0.0, x);
}

// ---------------------------------------------------------------- tree DP

//! Best sub-model found for a cell: a subtree plus per-leaf payloads.
//! While the children of a split are being combined, their subtrees are
//! collected in `forest`.
struct Choice
{
  double score = inf;
  long long dim = 0;
  double shape = 0.0;
  std::size_t cells = 0;
  std::size_t leaves = 0;
  double neg_loglik = 0.0;
  TreeShapePtr tree;
  std::vector<TreeShapePtr> forest;
  std::vector<TreeShapePtr> y_shapes;
  std::vector<Eigen::VectorXd> props;
};

std::string
choice_id(const Choice& c)
{
  std::string out;
  if (c.tree)
    out = shape_id(*c.tree);
  for (const auto& t : c.forest)
    out += shape_id(*t) + ',';
  for (const auto& y : c.y_shapes)
    out += '|' + shape_id(*y);
  return out;
}

bool
prefer(const Choice& a, const Choice& b)
{
  if (a.score == inf)
    return false;
  if (b.score == inf)
    return true;
  if (!scores_tie(a.score, b.score))
    return a.score < b.score;
  if (a.dim != b.dim)
    return a.dim < b.dim;
  return choice_id(a) < choice_id(b);
}

//! Adds `part` as the next sibling of the subtrees already in `into`.
void
append_sibling(Choice& into, const Choice& part)
{
  into.score += part.score;
  into.dim += part.dim;
  into.shape += part.shape;
  into.cells += part.cells;
  into.leaves += part.leaves;
  into.neg_loglik += part.neg_loglik;
  into.forest.push_back(part.tree);
  into.y_shapes.insert(into.y_shapes.end(), part.y_shapes.begin(), part.y_shapes.end());
  into.props.insert(into.props.end(), part.props.begin(), part.props.end());
}

Choice
empty_forest()
{
  Choice c;
  c.score = 0.0;
  return c;
}

//! Entry m holds the best choice with at most m leaves (entry 0 unused);
//! a single entry means the leaf count is unbounded.
using Table = std::vector<Choice>;
using Indices = std::vector<std::uint32_t>;

class TreeDp
{
public:
  using LeafFn = std::function<Choice(const Hyperrectangle&, const Indices&)>;
  using CoordFn = std::function<std::span<const double>(std::uint32_t)>;

  TreeDp(CollectionKind kind,
         int dim,
         std::size_t n,
         std::size_t max_leaves,
         std::size_t* counter,
         std::size_t budget,
         CoordFn coord,
         LeafFn leaf)
    : kind_(kind)
    , dim_(dim)
    , n_(n)
    , max_leaves_(max_leaves)
    , counter_(counter)
    , budget_(budget)
    , coord_(std::move(coord))
    , leaf_(std::move(leaf))
  {
    if (kind_ == CollectionKind::hrp)
      throw ContractError("HRP partitions are only available through exhaustive selection");
  }

  //! Best choice over the whole collection within the leaf bound.
  Choice solve(const Indices& idx)
  {
    const Table t = kind_ == CollectionKind::udp ? solve_uniform(idx) : node(Hyperrectangle::unit(dim_), idx);
    return t.back();
  }

private:
  std::size_t table_size() const { return max_leaves_ == 0 ? 1 : max_leaves_ + 1; }

  void tick()
  {
    if (++*counter_ > budget_)
      throw ResourceError("partition search exceeded its budget of " + std::to_string(budget_) + " node evaluations");
  }

  Choice leaf_choice(const Hyperrectangle& cell, const Indices& idx)
  {
    Choice c = leaf_(cell, idx);
    c.tree = TreeShape::leaf();
    c.leaves = 1;
    return c;
  }

  Table lift(const Table& child) const
  {
    Table out(table_size());
    for (std::size_t m = 0; m < child.size(); ++m) {
      if (child[m].score == inf)
        continue;
      out[m] = empty_forest();
      append_sibling(out[m], child[m]);
    }
    return out;
  }

  Table combine(const Table& a, const Table& b) const
  {
    Table out(table_size());
    if (max_leaves_ == 0) {
      out[0] = a[0];
      append_sibling(out[0], b[0]);
      return out;
    }
    for (std::size_t i = 1; i <= max_leaves_; ++i) {
      if (a[i].score == inf || (i > 1 && a[i].leaves == a[i - 1].leaves && a[i - 1].score != inf))
        continue;
      for (std::size_t j = 1; i + j <= max_leaves_; ++j) {
        if (b[j].score == inf || (j > 1 && b[j].leaves == b[j - 1].leaves && b[j - 1].score != inf))
          continue;
        Choice c = a[i];
        append_sibling(c, b[j]);
        if (prefer(c, out[i + j]))
          out[i + j] = std::move(c);
      }
    }
    for (std::size_t m = 2; m <= max_leaves_; ++m)
      if (prefer(out[m - 1], out[m]))
        out[m] = out[m - 1];
    return out;
  }

  Table node(const Hyperrectangle& cell, const Indices& idx)
  {
    auto key = std::make_pair(cell.lower(), cell.upper());
    if (auto it = memo_.find(key); it != memo_.end())
      return it->second;
    tick();
    Table best(table_size(), leaf_choice(cell, idx));
    if (max_leaves_ != 0)
      best[0] = Choice{};
    if (!idx.empty()) {
      for (const auto& split : admissible_splits(kind_, cell, n_)) {
        const auto cells = split.children(cell);
        if (max_leaves_ != 0 && cells.size() > max_leaves_)
          continue;
        std::vector<Indices> parts(cells.size());
        for (auto i : idx)
          parts[split.child_of(cell, coord_(i))].push_back(i);
        Table acc = lift(node(cells[0], parts[0]));
        for (std::size_t c = 1; c < cells.size(); ++c)
          acc = combine(acc, node(cells[c], parts[c]));
        for (std::size_t m = 0; m < acc.size(); ++m) {
          if (acc[m].score == inf)
            continue;
          acc[m].tree = TreeShape::node(split, std::move(acc[m].forest));
          acc[m].forest.clear();
          if (prefer(acc[m], best[m]))
            best[m] = std::move(acc[m]);
        }
      }
    }
    memo_.emplace(std::move(key), best);
    return best;
  }

  Table solve_uniform(const Indices& idx)
  {
    Table best(table_size());
    const int max_depth = udp_max_depth(n_, dim_);
    for (int depth = 0; depth <= max_depth; ++depth) {
      const std::size_t leaves = std::size_t{ 1 } << (dim_ * depth);
      if (max_leaves_ != 0 && leaves > max_leaves_)
        break;
      tick();
      if (grids_.size() <= static_cast<std::size_t>(depth)) {
        grids_.push_back(PartitionTree::uniform(kind_, dim_, n_, depth));
        grid_shapes_.push_back(grids_.back().shape());
      }
      const PartitionTree& grid = grids_[depth];
      std::vector<Indices> parts(leaves);
      for (auto i : idx)
        parts[grid.leaf_of(coord_(i))].push_back(i);
      Choice total = empty_forest();
      for (std::size_t l = 0; l < leaves; ++l) {
        const Choice c = leaf_(grid.leaf(l), parts[l]);
        total.score += c.score;
        total.dim += c.dim;
        total.shape += c.shape;
        total.cells += c.cells;
        total.leaves += 1;
        total.neg_loglik += c.neg_loglik;
        total.y_shapes.insert(total.y_shapes.end(), c.y_shapes.begin(), c.y_shapes.end());
        total.props.insert(total.props.end(), c.props.begin(), c.props.end());
      }
      total.tree = grid_shapes_[depth];
      for (std::size_t m = max_leaves_ == 0 ? 0 : leaves; m < best.size(); ++m)
        if (prefer(total, best[m]))
          best[m] = total;
    }
    return best;
  }

  CollectionKind kind_;
  int dim_;
  std::size_t n_;
  std::size_t max_leaves_;
  std::size_t* counter_;
  std::size_t budget_;
  CoordFn coord_;
  LeafFn leaf_;
  std::map<std::pair<std::vector<double>, std::vector<double>>, Table> memo_;
  std::vector<PartitionTree> grids_;
  std::vector<TreeShapePtr> grid_shapes_;
};

Indices
all_indices(std::size_t n)
{
  Indices idx(n);
  for (std::size_t i = 0; i < n; ++i)
    idx[i] = static_cast<std::uint32_t>(i);
  return idx;
}

std::vector<double>
gather_y(const Dataset& data, const Indices& idx)
{
  std::vector<double> out;
  out.reserve(idx.size() * static_cast<std::size_t>(data.dim_y()));
  for (auto i : idx) {
    auto y = data.y_row(i);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

std::vector<double>
cell_key(const Hyperrectangle& a, const Hyperrectangle& b)
{
  std::vector<double> key;
  key.reserve(2 * static_cast<std::size_t>(a.dim() + b.dim()));
  for (const auto* v : { &a.lower(), &a.upper(), &b.lower(), &b.upper() })
    key.insert(key.end(), v->begin(), v->end());
  return key;
}

//! Caches per-cell negative log-likelihoods of one degree vector; X-cells
//! determine their point sets, so (X-cell, Y-cell) is a valid key.
class PolyCellCache
{
public:
  PolyCellCache(const Dataset& data, DegreeVector r, PolyFitOptions opts)
    : data_(data)
    , r_(std::move(r))
    , opts_(std::move(opts))
  {}

  double neg_loglik(const Hyperrectangle& x_cell,
                    const Hyperrectangle& y_cell,
                    const Indices& idx,
                    std::size_t n_leaf)
  {
    if (idx.empty())
      return 0.0;
    auto key = cell_key(x_cell, y_cell);
    if (auto it = cache_.find(key); it != cache_.end())
      return it->second;
    const double v = fit_cell(gather_y(data_, idx), n_leaf, y_cell, r_, opts_).neg_loglik;
    cache_.emplace(std::move(key), v);
    return v;
  }

  const DegreeVector& degree() const { return r_; }

  struct UniformFit
  {
    double neg_loglik = 0.0;
    std::size_t cells = 1;
    TreeShapePtr shape;
  };

  //! -loglik of every uniform Y-grid of an X-cell with at most max_cells
  //! cells (0: no bound), by increasing depth.
  const std::vector<UniformFit>& uniform_y(const Hyperrectangle& x_cell,
                                           const Indices& idx,
                                           CollectionKind kind_y,
                                           std::size_t max_cells)
  {
    auto key = cell_key(x_cell, x_cell);
    if (auto it = uniform_.find(key); it != uniform_.end())
      return it->second;
    const int dim_y = data_.dim_y();
    const std::size_t n = data_.size();
    std::vector<UniformFit> fits;
    for (int depth = 0; depth <= udp_max_depth(n, dim_y); ++depth) {
      const std::size_t cells = std::size_t{ 1 } << (dim_y * depth);
      if (max_cells != 0 && cells > max_cells)
        break;
      if (grids_.size() <= static_cast<std::size_t>(depth)) {
        grids_.push_back(PartitionTree::uniform(kind_y, dim_y, n, depth));
        grid_shapes_.push_back(grids_.back().shape());
      }
      const PartitionTree& grid = grids_[depth];
      std::vector<Indices> parts(cells);
      for (auto i : idx)
        parts[grid.leaf_of(data_.y_row(i))].push_back(i);
      UniformFit f;
      f.cells = cells;
      f.shape = grid_shapes_[depth];
      for (std::size_t l = 0; l < cells; ++l)
        f.neg_loglik += neg_loglik(x_cell, grid.leaf(l), parts[l], idx.size());
      fits.push_back(std::move(f));
    }
    return uniform_.emplace(std::move(key), std::move(fits)).first->second;
  }

private:
  const Dataset& data_;
  DegreeVector r_;
  PolyFitOptions opts_;
  std::map<std::vector<double>, double> cache_;
  std::map<std::vector<double>, std::vector<UniformFit>> uniform_;
  std::vector<PartitionTree> grids_;
  std::vector<TreeShapePtr> grid_shapes_;
};

//! Best (X-partition, per-leaf Y-partitions) for one degree vector and one
//! additive penalty, by nested tree DPs.
Choice
poly_dp(const Dataset& data,
        CollectionKind kind_x,
        CollectionKind kind_y,
        PolyCellCache& cache,
        const PenaltySpec& pen,
        const PolySelectOptions& opts,
        std::size_t* counter)
{
  const std::size_t n = data.size();
  const auto p = static_cast<long long>(basis_size(cache.degree()));
  auto x_coord = [&](std::uint32_t i) { return data.x_row(i); };
  auto y_coord = [&](std::uint32_t i) { return data.y_row(i); };

  auto x_leaf = [&](const Hyperrectangle& x_cell, const Indices& idx) {
    Choice out;
    if (idx.empty()) {
      out.score = pen.per_leaf_unit + pen.per_cell_unit;
      out.dim = p - 1;
      out.shape = static_cast<double>(p);
      out.cells = 1;
      out.y_shapes.push_back(TreeShape::leaf());
      return out;
    }
    if (kind_y == CollectionKind::udp) {
      const PolyCellCache::UniformFit* best = nullptr;
      double best_score = inf;
      for (const auto& f : cache.uniform_y(x_cell, idx, kind_y, opts.max_y_leaves)) {
        const double score = f.neg_loglik + pen.per_cell_unit * static_cast<double>(f.cells);
        if (!best || (score < best_score && !scores_tie(score, best_score))) {
          best = &f;
          best_score = score;
        }
      }
      out.score = best_score + pen.per_leaf_unit;
      out.neg_loglik = best->neg_loglik;
      out.dim = static_cast<long long>(best->cells) * p - 1;
      out.shape = static_cast<double>(static_cast<long long>(best->cells) * p);
      out.cells = best->cells;
      out.y_shapes.push_back(best->shape);
      return out;
    }
    const std::size_t n_leaf = idx.size();
    auto y_leaf = [&](const Hyperrectangle& y_cell, const Indices& sub) {
      Choice c;
      c.neg_loglik = cache.neg_loglik(x_cell, y_cell, sub, n_leaf);
      c.score = c.neg_loglik + pen.per_cell_unit;
      c.dim = p;
      c.shape = static_cast<double>(p);
      c.cells = 1;
      return c;
    };
    TreeDp ydp(kind_y, data.dim_y(), n, opts.max_y_leaves, counter, opts.budget, y_coord, y_leaf);
    Choice y = ydp.solve(idx);
    out.score = y.score + pen.per_leaf_unit;
    out.neg_loglik = y.neg_loglik;
    out.dim = y.dim - 1;
    out.shape = y.shape;
    out.cells = y.cells;
    out.y_shapes.push_back(y.tree);
    return out;
  };

  TreeDp xdp(kind_x, data.dim_x(), n, opts.max_x_leaves, counter, opts.budget, x_coord, x_leaf);
  Choice best = xdp.solve(all_indices(n));
  best.score += pen.constant + pen.extra_total();
  return best;
}

PolyModel
build_poly_model(const Dataset& data,
                 CollectionKind kind_x,
                 CollectionKind kind_y,
                 const Choice& choice,
                 const DegreeVector& r,
                 const PolyFitOptions& fit_opts)
{
  const std::size_t n = data.size();
  const PartitionTree x_tree = PartitionTree::from_shape(kind_x, data.dim_x(), n, *choice.tree);
  std::vector<PartitionTree> y_trees;
  for (const auto& y : choice.y_shapes)
    y_trees.push_back(PartitionTree::from_shape(kind_y, data.dim_y(), n, *y));
  return fit(data, x_tree, y_trees, r, fit_opts);
}

ModelRecord
poly_record(const Dataset& data, const PolyModel& model, const PenaltySpec& pen)
{
  ModelRecord rec;
  rec.id = model_id(model);
  const PolyDimension d = model.dimension();
  rec.dim = d.dim;
  rec.shape = static_cast<double>(d.upper);
  rec.neg_loglik = -model.log_likelihood(data);
  std::size_t cells = 0;
  for (const auto& t : model.y_trees())
    cells += t.num_leaves();
  rec.penalty = pen.total(model.x_tree().num_leaves(), cells);
  rec.score = rec.neg_loglik + rec.penalty;
  return rec;
}

} // namespace

// ---------------------------------------------------------------- penalties

std::string_view
to_string(PenaltyMode mode)
{
  switch (mode) {
    case PenaltyMode::theoretical:
      return "theoretical";
    case PenaltyMode::slope:
      return "slope";
    case PenaltyMode::manual:
      return "manual";
  }
  return "?";
}

PenaltyMode
parse_penalty_mode(std::string_view text)
{
  if (text == "theoretical")
    return PenaltyMode::theoretical;
  if (text == "slope")
    return PenaltyMode::slope;
  if (text == "manual")
    return PenaltyMode::manual;
  throw ContractError("unknown penalty mode '" + std::string(text) + "'");
}

void
PenaltySpec::validate() const
{
  if (mode == PenaltyMode::theoretical && !(kappa > 0.0))
    throw ContractError("theoretical penalty mode requires kappa > 0");
  if (!(kappa >= 0.0) || per_leaf_unit < 0.0 || per_cell_unit < 0.0 || constant < 0.0)
    throw ContractError("penalty values must be nonnegative");
  for (const auto& [name, value] : extra_terms)
    if (!(value >= 0.0))
      throw ContractError("penalty term '" + name + "' must be nonnegative");
}

double
PenaltySpec::extra_total() const
{
  double total = 0.0;
  for (const auto& term : extra_terms)
    total += term.second;
  return total;
}

double
PenaltySpec::total(std::size_t leaves, std::size_t cells) const
{
  return constant + per_leaf_unit * static_cast<double>(leaves) + per_cell_unit * static_cast<double>(cells) +
         extra_total();
}

double
complexity_constant(double D, double V)
{
  if (!(D > 0.0))
    throw ContractError("complexity constant needs D > 0");
  const double r = std::sqrt(V / D) + std::sqrt(std::numbers::pi);
  return r * r;
}

double
complexity(const ComplexitySpec& spec)
{
  if (!(spec.D >= 0.0) || !(spec.V >= 0.0) || !(spec.n >= 1.0))
    throw ContractError("complexity needs D >= 0, V >= 0 and n >= 1");
  if (spec.D == 0.0)
    return spec.V;
  const double c = complexity_constant(spec.D, spec.V);
  if (spec.localized)
    return c * spec.D;
  return (2.0 * c + 1.0 + positive_part(std::log(spec.n / (std::numbers::e * c * spec.D)))) * spec.D;
}

double
poly_entropy_constant(const DegreeVector& r)
{
  double c = 0.5 * std::log(8.0 * std::numbers::pi * std::numbers::e);
  for (int k : r)
    c += std::log(std::numbers::sqrt2 * (k + 1.0));
  return c;
}

double
coding_constant_star()
{
  return 2.0 * std::numbers::ln2;
}

PenaltySpec
penalty_poly(const DegreeVector& r,
             CollectionKind kind_x,
             CollectionKind kind_y,
             int dim_x,
             int dim_y,
             std::size_t n,
             PenaltyMode mode,
             double kappa,
             const PolyPenaltyOptions& opts)
{
  if (n < 2)
    throw ContractError("penalty_poly needs n >= 2");
  if (static_cast<int>(r.size()) != dim_y)
    throw ContractError("penalty_poly: degree vector length differs from the response dimension");
  PenaltySpec pen;
  pen.mode = mode;
  pen.kappa = kappa;
  const double p = static_cast<double>(basis_size(r));
  if (mode != PenaltyMode::theoretical) {
    pen.per_cell_unit = kappa * p;
    pen.validate();
    return pen;
  }
  const auto cx = coding_constants(kind_x, n, dim_x);
  const auto cy = coding_constants(kind_y, n, dim_y);
  const double c_star = poly_entropy_constant(r);
  const double c_code = coding_constant_star();
  const bool drop_log = opts.shared_y_partition && kind_x == CollectionKind::udp && kind_y == CollectionKind::udp;
  const double log_term = drop_log ? 0.0 : 2.0 * std::log(static_cast<double>(n));
  if (opts.weaker_form) {
    pen.per_cell_unit = kappa * ((c_star + log_term) * p + c_code * cy.b0);
    pen.per_leaf_unit = kappa * c_code * (cx.b0 + cy.a0);
    pen.constant = kappa * c_code * cx.a0;
  } else {
    const double kappa_tilde = kappa * (c_star + c_code * (cx.a0 + cx.b0 + cy.a0 + cy.b0) + log_term);
    pen.per_cell_unit = kappa_tilde * p;
  }
  pen.validate();
  return pen;
}

PenaltySpec
penalty_gmm(std::size_t leaves,
            int K,
            const CovarianceSpec& spec,
            const Subspace& subspace,
            int p,
            CollectionKind kind_x,
            int dim_x,
            std::size_t n,
            PenaltyMode mode,
            double kappa,
            const GmmPenaltyOptions& opts)
{
  (void)leaves;
  const int e_dim = subspace.dim(p);
  const double theta = static_cast<double>(theta_dimension(K, spec, e_dim, p));
  const double d_e = variable_selection_weight(subspace.mode, e_dim, p);
  double k1 = kappa;
  double k2 = kappa;
  if (mode == PenaltyMode::theoretical) {
    const auto cx = coding_constants(kind_x, n, dim_x);
    const double c = opts.c_star;
    const double c_code = coding_constant_star();
    k1 = kappa * (2.0 * c + 1.0 + positive_part(std::log(static_cast<double>(n) / (std::numbers::e * c))) +
                  c_code * (cx.a0 + cx.b0 + 1.0));
    k2 = kappa * c_code;
  }
  PenaltySpec pen;
  pen.mode = mode;
  pen.kappa = kappa;
  pen.per_leaf_unit = k1 * (K - 1);
  pen.extra_terms = { { "theta", k1 * theta }, { "subspace", k2 * d_e } };
  pen.validate();
  return pen;
}

// ---------------------------------------------------------------- reports

void
SelectionReport::write_csv(std::ostream& out) const
{
  out << "id,dim,shape,neg_loglik,penalty,score,chosen\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << '"' << r.id << "\"," << r.dim << ',' << format_double(r.shape) << ',' << format_double(r.neg_loglik)
        << ',' << format_double(r.penalty) << ',' << format_double(r.score) << ',' << (i == chosen ? 1 : 0) << '\n';
  }
}

bool
better_record(const ModelRecord& a, const ModelRecord& b)
{
  if (!scores_tie(a.score, b.score))
    return a.score < b.score;
  if (a.dim != b.dim)
    return a.dim < b.dim;
  return a.id < b.id;
}

SelectionReport
exhaustive_select(std::vector<ModelRecord> records)
{
  if (records.empty())
    throw SelectionError("no candidate model to select from");
  SelectionReport report;
  report.records = std::move(records);
  for (std::size_t i = 1; i < report.records.size(); ++i)
    if (better_record(report.records[i], report.records[report.chosen]))
      report.chosen = i;
  return report;
}

namespace {

double
default_shape_cap(std::size_t n, double cap)
{
  if (cap > 0.0)
    return cap;
  const double nn = static_cast<double>(std::max<std::size_t>(n, 3));
  return nn / std::log(nn);
}

//! Path models entering the slope fit: shape at most `cap`, topped up with
//! the smallest remaining shapes when fewer than six qualify.
std::vector<SlopePoint>
slope_fit_points(const std::vector<ModelRecord>& path, double cap)
{
  std::vector<SlopePoint> all;
  for (const auto& rec : path)
    all.push_back({ rec.shape, rec.neg_loglik });
  std::sort(all.begin(), all.end(), [](const SlopePoint& a, const SlopePoint& b) { return a.dim < b.dim; });
  std::vector<SlopePoint> out;
  for (const auto& p : all)
    if (p.dim <= cap || out.size() < 6)
      out.push_back(p);
  return out;
}

} // namespace

SlopeDiagnostics
slope_calibrate(const std::vector<SlopePoint>& input)
{
  std::vector<SlopePoint> pts;
  for (const auto& p : input)
    if (std::isfinite(p.dim) && std::isfinite(p.neg_loglik))
      pts.push_back(p);
  std::sort(pts.begin(), pts.end(), [](const SlopePoint& a, const SlopePoint& b) {
    return a.dim < b.dim || (a.dim == b.dim && a.neg_loglik < b.neg_loglik);
  });
  if (pts.size() < 6)
    throw CalibrationError("slope heuristic needs at least 6 models; widen the model grid");
  const double lo = pts.front().dim, hi = pts.back().dim;
  if (!(hi > lo && hi >= 4.0 * lo))
    throw CalibrationError("slope heuristic needs model dimensions spanning a factor 4; widen the model grid");

  const std::size_t half = (pts.size() + 1) / 2;
  const std::vector<SlopePoint> top(pts.end() - static_cast<std::ptrdiff_t>(half), pts.end());
  std::vector<double> slopes;
  for (std::size_t i = 0; i < top.size(); ++i)
    for (std::size_t j = i + 1; j < top.size(); ++j)
      if (top[j].dim != top[i].dim)
        slopes.push_back((top[j].neg_loglik - top[i].neg_loglik) / (top[j].dim - top[i].dim));
  if (slopes.empty())
    throw CalibrationError("largest-dimension models share one dimension; widen the model grid");
  std::sort(slopes.begin(), slopes.end());
  const std::size_t m = slopes.size();
  const double median = m % 2 ? slopes[m / 2] : 0.5 * (slopes[m / 2 - 1] + slopes[m / 2]);

  SlopeDiagnostics diag;
  diag.kappa_hat = -median;
  if (!(diag.kappa_hat > 0.0))
    throw CalibrationError("-loglik does not decrease with dimension on the largest models");
  diag.kappa_tilde = 2.0 * diag.kappa_hat;
  diag.models = pts.size();

  const int steps = 60;
  double prev_dim = std::numeric_limits<double>::quiet_NaN();
  double biggest = -1.0;
  for (int s = 0; s <= steps; ++s) {
    const double kappa = diag.kappa_hat * std::pow(4.0, static_cast<double>(s) / steps);
    std::size_t best = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const double a = pts[i].neg_loglik + kappa * pts[i].dim;
      const double b = pts[best].neg_loglik + kappa * pts[best].dim;
      if (a < b && !scores_tie(a, b))
        best = i;
    }
    const double dim = pts[best].dim;
    diag.sweep.emplace_back(kappa, dim);
    if (!std::isnan(prev_dim) && prev_dim - dim > biggest) {
      biggest = prev_dim - dim;
      diag.jump_kappa = kappa;
      diag.dim_before_jump = prev_dim;
      diag.dim_after_jump = dim;
    }
    prev_dim = dim;
  }
  return diag;
}

// ---------------------------------------------------------------- piecewise polynomials

std::string
model_id(const PolyModel& model)
{
  std::string out = model.x_tree().id() + '|';
  for (std::size_t l = 0; l < model.y_trees().size(); ++l) {
    if (l)
      out += ';';
    out += model.y_trees()[l].id();
  }
  return out + '|' + degree_id(model.degree());
}

PolyPenaltyRule
poly_penalty_rule(CollectionKind kind_x,
                  CollectionKind kind_y,
                  int dim_x,
                  int dim_y,
                  std::size_t n,
                  PenaltyMode mode,
                  double kappa,
                  const PolyPenaltyOptions& opts)
{
  if (mode == PenaltyMode::slope)
    throw ContractError("slope mode is resolved by slope_select_poly");
  return [=](const DegreeVector& r) { return penalty_poly(r, kind_x, kind_y, dim_x, dim_y, n, mode, kappa, opts); };
}

PolySelection
dp_select_poly(const Dataset& data,
               CollectionKind kind_x,
               CollectionKind kind_y,
               const std::vector<DegreeVector>& r_candidates,
               const PolyPenaltyRule& penalty,
               const PolySelectOptions& opts)
{
  if (r_candidates.empty())
    throw ContractError("dp_select_poly needs at least one degree vector");
  if (data.size() == 0)
    throw DataError("dp_select_poly needs data");
  std::size_t counter = 0;
  std::vector<ModelRecord> records;
  std::vector<PolyModel> models;
  for (const auto& r : r_candidates) {
    opts.fit.validate(r);
    const PenaltySpec pen = penalty(r);
    PolyCellCache cache(data, r, opts.fit);
    const Choice best = poly_dp(data, kind_x, kind_y, cache, pen, opts, &counter);
    models.push_back(build_poly_model(data, kind_x, kind_y, best, r, opts.fit));
    records.push_back(poly_record(data, models.back(), pen));
  }
  PolySelection out;
  out.report = exhaustive_select(std::move(records));
  out.model = std::move(models[out.report.chosen]);
  return out;
}

PolySelection
slope_select_poly(const Dataset& data,
                  CollectionKind kind_x,
                  CollectionKind kind_y,
                  const std::vector<DegreeVector>& r_candidates,
                  const PolySelectOptions& opts)
{
  if (r_candidates.empty())
    throw ContractError("slope_select_poly needs at least one degree vector");
  const double shape_cap = default_shape_cap(data.size(), opts.slope_max_shape);
  std::vector<std::unique_ptr<PolyCellCache>> caches;
  for (const auto& r : r_candidates) {
    opts.fit.validate(r);
    caches.push_back(std::make_unique<PolyCellCache>(data, r, opts.fit));
  }
  // Penalized minimizer over every degree for the penalty kappa * shape.
  auto minimizer = [&](double kappa) {
    std::size_t counter = 0;
    std::optional<ModelRecord> best;
    for (std::size_t j = 0; j < r_candidates.size(); ++j) {
      const PenaltySpec pen = penalty_poly(r_candidates[j],
                                           kind_x,
                                           kind_y,
                                           data.dim_x(),
                                           data.dim_y(),
                                           std::max<std::size_t>(data.size(), 2),
                                           PenaltyMode::manual,
                                           kappa);
      const Choice choice = poly_dp(data, kind_x, kind_y, *caches[j], pen, opts, &counter);
      ModelRecord rec = poly_record(data, build_poly_model(data, kind_x, kind_y, choice, r_candidates[j], opts.fit), pen);
      if (!best || better_record(rec, *best))
        best = std::move(rec);
    }
    return *best;
  };

  std::vector<ModelRecord> path;
  std::set<std::string> seen;
  auto add = [&](const ModelRecord& rec) {
    if (seen.insert(rec.id).second)
      path.push_back(rec);
  };
  if (!opts.slope_grid.empty()) {
    for (double kappa : opts.slope_grid)
      add(minimizer(kappa));
  } else {
    // Every vertex of the penalized path: the minimizers of -loglik + kappa * shape
    // over kappa, found by probing the kappa where two known vertices tie.
    const double n = static_cast<double>(std::max<std::size_t>(data.size(), 2));
    double kappa_hi = std::log(n);
    ModelRecord simplest = minimizer(kappa_hi);
    for (int i = 0; i < 20; ++i) {
      kappa_hi *= 4.0;
      ModelRecord next = minimizer(kappa_hi);
      if (next.shape >= simplest.shape)
        break;
      simplest = std::move(next);
    }
    const ModelRecord richest = minimizer(1e-3 / std::log(n));
    add(richest);
    add(simplest);
    std::size_t probes = 0;
    std::vector<std::pair<ModelRecord, ModelRecord>> stack{ { richest, simplest } };
    while (!stack.empty() && probes < opts.slope_max_probes) {
      auto [a, b] = std::move(stack.back());
      stack.pop_back();
      if (a.shape <= b.shape || b.shape > 4.0 * shape_cap)
        continue;
      const double kappa = (b.neg_loglik - a.neg_loglik) / (a.shape - b.shape);
      if (!(kappa > 0.0) || !std::isfinite(kappa))
        continue;
      ++probes;
      ModelRecord c = minimizer(kappa);
      const double tie = b.neg_loglik + kappa * b.shape;
      const double sc = c.neg_loglik + kappa * c.shape;
      if (c.shape >= a.shape || c.shape <= b.shape || !(sc < tie) || scores_tie(sc, tie))
        continue;
      add(c);
      stack.emplace_back(a, c);
      stack.emplace_back(std::move(c), std::move(b));
    }
  }
  const auto points = slope_fit_points(path, shape_cap);
  SlopeDiagnostics diag = slope_calibrate(points);
  diag.models_fitted = path.size();

  const PolyPenaltyRule rule = [&](const DegreeVector& r) {
    PenaltySpec pen = penalty_poly(r,
                                   kind_x,
                                   kind_y,
                                   data.dim_x(),
                                   data.dim_y(),
                                   std::max<std::size_t>(data.size(), 2),
                                   PenaltyMode::manual,
                                   diag.kappa_tilde);
    pen.mode = PenaltyMode::slope;
    return pen;
  };
  PolySelection out = dp_select_poly(data, kind_x, kind_y, r_candidates, rule, opts);
  // Report the whole path scored under the calibrated penalty.
  const ModelRecord chosen = out.report.best();
  for (auto& rec : path) {
    rec.penalty = diag.kappa_tilde * rec.shape;
    rec.score = rec.neg_loglik + rec.penalty;
  }
  std::size_t chosen_index = path.size();
  for (std::size_t i = 0; i < path.size(); ++i)
    if (path[i].id == chosen.id)
      chosen_index = i;
  if (chosen_index == path.size()) {
    path.push_back(chosen);
    chosen_index = path.size() - 1;
  }
  out.report.records = std::move(path);
  out.report.chosen = chosen_index;
  out.report.slope = diag;
  return out;
}

PolySelection
exhaustive_select_poly(const Dataset& data,
                       CollectionKind kind_x,
                       CollectionKind kind_y,
                       const std::vector<DegreeVector>& r_candidates,
                       const PolyPenaltyRule& penalty,
                       const PolySelectOptions& opts)
{
  if (r_candidates.empty())
    throw ContractError("exhaustive_select_poly needs at least one degree vector");
  const std::size_t n = data.size();
  EnumerationOptions xe;
  xe.max_leaves = opts.max_x_leaves == 0 ? 8 : opts.max_x_leaves;
  EnumerationOptions ye;
  ye.max_leaves = opts.max_y_leaves == 0 ? 8 : opts.max_y_leaves;
  const auto x_trees = enumerate_partitions(kind_x, n, data.dim_x(), xe);
  const auto y_trees = enumerate_partitions(kind_y, n, data.dim_y(), ye);

  std::vector<ModelRecord> records;
  struct Candidate
  {
    std::size_t x;
    std::vector<std::size_t> y;
    DegreeVector r;
  };
  std::vector<Candidate> candidates;

  for (const auto& r : r_candidates) {
    opts.fit.validate(r);
    const PenaltySpec pen = penalty(r);
    const auto p = static_cast<long long>(basis_size(r));
    PolyCellCache cache(data, r, opts.fit);
    // Best Y-partition of an X-cell, memoized by the cell.
    std::map<std::string, std::pair<std::size_t, double>> leaf_memo;
    for (std::size_t xi = 0; xi < x_trees.size(); ++xi) {
      const auto& xt = x_trees[xi];
      std::vector<Indices> parts(xt.num_leaves());
      for (std::size_t i = 0; i < n; ++i)
        parts[xt.leaf_of(data.x_row(i))].push_back(static_cast<std::uint32_t>(i));
      Candidate cand{ xi, {}, r };
      for (std::size_t l = 0; l < xt.num_leaves(); ++l) {
        const Hyperrectangle& x_cell = xt.leaf(l);
        const std::string key = x_cell.str();
        auto it = leaf_memo.find(key);
        if (it == leaf_memo.end()) {
          std::size_t best = 0;
          double best_score = inf;
          long long best_dim = 0;
          std::string best_id;
          for (std::size_t yi = 0; yi < y_trees.size(); ++yi) {
            const auto& yt = y_trees[yi];
            std::vector<Indices> sub(yt.num_leaves());
            for (auto i : parts[l])
              sub[yt.leaf_of(data.y_row(i))].push_back(i);
            double score = 0.0;
            for (std::size_t k = 0; k < yt.num_leaves(); ++k)
              score += cache.neg_loglik(x_cell, yt.leaf(k), sub[k], parts[l].size()) + pen.per_cell_unit;
            const long long dim = static_cast<long long>(yt.num_leaves()) * p;
            const std::string id = yt.id();
            const bool take = best_score == inf || (!scores_tie(score, best_score) && score < best_score) ||
                              (scores_tie(score, best_score) && (dim < best_dim || (dim == best_dim && id < best_id)));
            if (take) {
              best = yi;
              best_score = score;
              best_dim = dim;
              best_id = id;
            }
            if (parts[l].empty())
              break; // the root is optimal for an empty leaf
          }
          it = leaf_memo.emplace(key, std::make_pair(best, best_score)).first;
        }
        cand.y.push_back(it->second.first);
      }
      std::vector<PartitionTree> ys;
      for (auto yi : cand.y)
        ys.push_back(y_trees[yi]);
      const PolyModel model = fit(data, xt, ys, r, opts.fit);
      records.push_back(poly_record(data, model, pen));
      candidates.push_back(std::move(cand));
    }
  }

  PolySelection out;
  out.report = exhaustive_select(std::move(records));
  const Candidate& c = candidates[out.report.chosen];
  std::vector<PartitionTree> ys;
  for (auto yi : c.y)
    ys.push_back(y_trees[yi]);
  out.model = fit(data, x_trees[c.x], ys, c.r, opts.fit);
  return out;
}

// ---------------------------------------------------------------- spatial mixtures

namespace {

struct GmmRun
{
  SpatialGmm model;
  ModelRecord record;
  std::vector<double> round_scores;
};

std::string
gmm_id(const SpatialGmm& model)
{
  std::string out = model.x_tree().id() + "|K=" + std::to_string(model.K()) + "|" + model.spec().code() + "|E=";
  const auto axes = model.subspace().resolved(model.dim_y());
  for (std::size_t j = 0; j < axes.size(); ++j) {
    if (j)
      out += ',';
    out += std::to_string(axes[j] + 1);
  }
  return out;
}

ModelRecord
gmm_record(const Dataset& data, const SpatialGmm& model, const PenaltySpec& pen, double neg_loglik)
{
  ModelRecord rec;
  rec.id = gmm_id(model);
  rec.dim = model.dimension();
  rec.shape =
    static_cast<double>(rec.dim) +
    variable_selection_weight(model.subspace().mode, model.subspace().dim(model.dim_y()), model.dim_y());
  rec.neg_loglik = neg_loglik;
  rec.penalty = pen.total(model.x_tree().num_leaves(), 0);
  rec.score = rec.neg_loglik + rec.penalty;
  (void)data;
  return rec;
}

PenaltySpec
gmm_penalty(const Dataset& data,
            const GmmCandidate& cand,
            CollectionKind kind_x,
            PenaltyMode mode,
            double kappa,
            const GmmSelectOptions& opts)
{
  return penalty_gmm(1,
                     cand.K,
                     cand.spec,
                     cand.subspace,
                     data.dim_y(),
                     kind_x,
                     data.dim_x(),
                     std::max<std::size_t>(data.size(), 2),
                     mode == PenaltyMode::theoretical ? PenaltyMode::theoretical : PenaltyMode::manual,
                     kappa,
                     opts.penalty);
}

//! EM on a fixed partition alternated with the partition DP on fixed
//! components, until the penalized score stops improving.
GmmRun
alternate(const Dataset& data,
          CollectionKind kind_x,
          const GmmCandidate& cand,
          const PenaltySpec& pen,
          const GmmSelectOptions& opts,
          std::size_t* counter)
{
  const std::size_t n = data.size();
  const PartitionTree root = PartitionTree::root(kind_x, data.dim_x(), n);
  GmmRun run;
  run.model = em_fit(data, root, cand.K, cand.spec, cand.subspace, opts.em);
  double neg_ll = -run.model.loglik_trace.back();
  run.record = gmm_record(data, run.model, pen, neg_ll);
  run.round_scores.push_back(run.record.score);

  const int K = cand.K;
  for (int round = 0; round < opts.max_rounds; ++round) {
    const Eigen::MatrixXd log_f = run.model.log_density_matrix(data.y);
    const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(K, 1.0 / K);
    auto x_coord = [&](std::uint32_t i) { return data.x_row(i); };
    auto leaf = [&](const Hyperrectangle&, const Indices& idx) {
      Choice c;
      c.dim = K - 1;
      if (idx.empty()) {
        c.score = pen.per_leaf_unit;
        c.props.push_back(uniform);
        return c;
      }
      Eigen::MatrixXd rows(static_cast<Eigen::Index>(idx.size()), K);
      for (std::size_t j = 0; j < idx.size(); ++j)
        rows.row(static_cast<Eigen::Index>(j)) = log_f.row(idx[j]);
      const Eigen::VectorXd pi = fit_leaf_proportions(rows, uniform, 1e-12, 2000);
      c.neg_loglik = -mixture_loglik(rows, pi);
      c.score = c.neg_loglik + pen.per_leaf_unit;
      c.props.push_back(pi);
      return c;
    };
    TreeDp xdp(kind_x, data.dim_x(), n, opts.max_x_leaves, counter, opts.budget, x_coord, leaf);
    const Choice best = xdp.solve(all_indices(n));
    const PartitionTree tree = PartitionTree::from_shape(kind_x, data.dim_x(), n, *best.tree);

    EmOptions em = opts.em;
    em.init_components = run.model.components();
    // Keep the proportions strictly inside the simplex so EM can move them.
    std::vector<Eigen::VectorXd> props = best.props;
    for (auto& pi : props) {
      pi = (pi.array() + 1e-12).matrix();
      pi /= pi.sum();
    }
    em.init_proportions = props;
    SpatialGmm next;
    try {
      next = em_fit(data, tree, K, cand.spec, cand.subspace, em);
    } catch (const DegenerateFitError&) {
      break;
    }
    const ModelRecord rec = gmm_record(data, next, pen, -next.loglik_trace.back());
    if (!(rec.score < run.record.score) || scores_tie(rec.score, run.record.score)) {
      break;
    }
    run.model = std::move(next);
    run.record = rec;
    run.round_scores.push_back(rec.score);
  }
  return run;
}

} // namespace

GmmSelection
dp_select_gmm(const Dataset& data,
              CollectionKind kind_x,
              const std::vector<GmmCandidate>& candidates,
              PenaltyMode mode,
              double kappa,
              const GmmSelectOptions& opts)
{
  if (candidates.empty())
    throw ContractError("dp_select_gmm needs at least one (K, spec, subspace) candidate");
  if (data.size() == 0)
    throw DataError("dp_select_gmm needs data");
  std::size_t counter = 0;

  auto run_all = [&](PenaltyMode m, double k, std::vector<GmmRun>& runs) {
    for (const auto& cand : candidates) {
      const PenaltySpec pen = gmm_penalty(data, cand, kind_x, m, k, opts);
      try {
        runs.push_back(alternate(data, kind_x, cand, pen, opts, &counter));
      } catch (const DegenerateFitError&) {
      } catch (const LinearAlgebraError&) {
      }
    }
  };

  std::optional<SlopeDiagnostics> diag;
  double kappa_used = kappa;
  std::vector<ModelRecord> path;
  if (mode == PenaltyMode::slope) {
    const double log_n = std::log(static_cast<double>(std::max<std::size_t>(data.size(), 2)));
    const std::vector<double> grid =
      opts.slope_grid.empty() ? std::vector<double>{ 0.01, 0.03, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0 }
                              : opts.slope_grid;
    std::set<std::string> seen;
    for (double g : grid) {
      std::vector<GmmRun> runs;
      run_all(PenaltyMode::manual, g * log_n, runs);
      for (auto& r : runs)
        if (seen.insert(r.record.id).second)
          path.push_back(r.record);
    }
    diag = slope_calibrate(slope_fit_points(path, default_shape_cap(data.size(), opts.slope_max_shape)));
    diag->models_fitted = path.size();
    kappa_used = diag->kappa_tilde;
  }

  std::vector<GmmRun> runs;
  run_all(mode == PenaltyMode::theoretical ? PenaltyMode::theoretical : PenaltyMode::manual, kappa_used, runs);
  if (runs.empty())
    throw SelectionError("every mixture candidate degenerated during fitting");

  std::vector<ModelRecord> records;
  for (const auto& r : runs)
    records.push_back(r.record);
  SelectionReport report = exhaustive_select(records);
  GmmSelection out;
  out.model = runs[report.chosen].model;
  out.round_scores = runs[report.chosen].round_scores;
  if (diag) {
    for (auto& rec : path) {
      rec.penalty = kappa_used * rec.shape;
      rec.score = rec.neg_loglik + rec.penalty;
    }
    for (const auto& rec : records)
      if (std::none_of(path.begin(), path.end(), [&](const ModelRecord& p) { return p.id == rec.id; }))
        path.push_back(rec);
    report.records = std::move(path);
    const std::string chosen = runs[report.chosen].record.id;
    for (std::size_t i = 0; i < report.records.size(); ++i)
      if (report.records[i].id == chosen)
        report.chosen = i;
    report.slope = diag;
  }
  out.report = std::move(report);
  return out;
}

} // namespace pcde
