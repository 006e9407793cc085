#include "pcde/geometry.hpp"

#include "pcde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <unordered_set>

namespace pcde {

namespace {

constexpr double volume_slack = 1e-12;

bool
at_least(double value, double threshold)
{
  return value >= threshold * (1.0 - volume_slack);
}

std::string
format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool
on_grid(double v, std::size_t n)
{
  const double scaled = v * static_cast<double>(n);
  return std::abs(scaled - std::round(scaled)) <= 1e-9;
}

} // namespace

std::string_view
to_string(CollectionKind kind)
{
  switch (kind) {
    case CollectionKind::udp:
      return "udp";
    case CollectionKind::rdp:
      return "rdp";
    case CollectionKind::rdsp:
      return "rdsp";
    case CollectionKind::rsp:
      return "rsp";
    case CollectionKind::hrp:
      return "hrp";
  }
  return "?";
}

CollectionKind
parse_collection(std::string_view text)
{
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "udp")
    return CollectionKind::udp;
  if (lower == "rdp")
    return CollectionKind::rdp;
  if (lower == "rdsp")
    return CollectionKind::rdsp;
  if (lower == "rsp")
    return CollectionKind::rsp;
  if (lower == "hrp")
    return CollectionKind::hrp;
  throw ContractError("unknown partition collection '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- Hyperrectangle

Hyperrectangle::Hyperrectangle(std::vector<double> lower, std::vector<double> upper)
  : lower_(std::move(lower))
  , upper_(std::move(upper))
{
  if (lower_.size() != upper_.size() || lower_.empty())
    throw ContractError("hyperrectangle bounds must be nonempty and of equal dimension");
  for (std::size_t j = 0; j < lower_.size(); ++j) {
    if (!(lower_[j] < upper_[j]))
      throw ContractError("hyperrectangle requires lower < upper on every axis");
  }
}

Hyperrectangle
Hyperrectangle::unit(int dim)
{
  return Hyperrectangle(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0));
}

double
Hyperrectangle::volume() const
{
  double v = 1.0;
  for (int j = 0; j < dim(); ++j)
    v *= extent(j);
  return v;
}

bool
Hyperrectangle::contains(std::span<const double> x, const Hyperrectangle& root) const
{
  for (int j = 0; j < dim(); ++j) {
    if (x[j] < lower_[j])
      return false;
    if (x[j] > upper_[j])
      return false;
    if (x[j] == upper_[j] && upper_[j] != root.upper_[j])
      return false;
  }
  return true;
}

bool
Hyperrectangle::contains_closed(std::span<const double> x) const
{
  for (int j = 0; j < dim(); ++j) {
    if (!(x[j] >= lower_[j] && x[j] <= upper_[j]))
      return false;
  }
  return true;
}

std::pair<Hyperrectangle, Hyperrectangle>
Hyperrectangle::split(int axis, double position) const
{
  if (axis < 0 || axis >= dim() || !(position > lower_[axis] && position < upper_[axis]))
    throw ContractError("split position must lie strictly inside the cell");
  auto left_upper = upper_;
  left_upper[axis] = position;
  auto right_lower = lower_;
  right_lower[axis] = position;
  return { Hyperrectangle(lower_, std::move(left_upper)), Hyperrectangle(std::move(right_lower), upper_) };
}

std::vector<Hyperrectangle>
Hyperrectangle::dyadic_children() const
{
  const int d = dim();
  std::vector<Hyperrectangle> out;
  out.reserve(std::size_t{ 1 } << d);
  for (std::size_t child = 0; child < (std::size_t{ 1 } << d); ++child) {
    std::vector<double> lo(d), hi(d);
    for (int j = 0; j < d; ++j) {
      const double mid = 0.5 * (lower_[j] + upper_[j]);
      if ((child >> j) & 1U) {
        lo[j] = mid;
        hi[j] = upper_[j];
      } else {
        lo[j] = lower_[j];
        hi[j] = mid;
      }
    }
    out.emplace_back(std::move(lo), std::move(hi));
  }
  return out;
}

std::string
Hyperrectangle::str() const
{
  std::string out = "[";
  for (int j = 0; j < dim(); ++j) {
    if (j)
      out += ",";
    out += format_double(lower_[j]) + ":" + format_double(upper_[j]);
  }
  return out + "]";
}

// ---------------------------------------------------------------- SplitDescriptor

std::vector<Hyperrectangle>
SplitDescriptor::children(const Hyperrectangle& cell) const
{
  if (type == Type::dyadic)
    return cell.dyadic_children();
  auto [left, right] = cell.split(axis, position);
  return { std::move(left), std::move(right) };
}

std::size_t
SplitDescriptor::child_of(const Hyperrectangle& cell, std::span<const double> x) const
{
  if (type == Type::axis)
    return x[axis] < position ? 0 : 1;
  std::size_t child = 0;
  for (int j = 0; j < cell.dim(); ++j) {
    const double mid = 0.5 * (cell.lower()[j] + cell.upper()[j]);
    if (x[j] >= mid)
      child |= std::size_t{ 1 } << j;
  }
  return child;
}

// ---------------------------------------------------------------- TreeShape

TreeShapePtr
TreeShape::leaf()
{
  static const TreeShapePtr shared = std::make_shared<const TreeShape>();
  return shared;
}

TreeShapePtr
TreeShape::node(SplitDescriptor split, std::vector<TreeShapePtr> children)
{
  auto out = std::make_shared<TreeShape>();
  out->split = split;
  out->leaves = 0;
  for (const auto& c : children)
    out->leaves += c->leaves;
  out->children = std::move(children);
  return out;
}

// ---------------------------------------------------------------- PartitionTree

PartitionTree
PartitionTree::root(CollectionKind kind, int dim, std::size_t n)
{
  return from_shape(kind, dim, n, *TreeShape::leaf());
}

PartitionTree
PartitionTree::uniform(CollectionKind kind, int dim, std::size_t n, int depth)
{
  std::function<TreeShapePtr(int)> grow = [&](int level) -> TreeShapePtr {
    if (level == 0)
      return TreeShape::leaf();
    std::vector<TreeShapePtr> children(std::size_t{ 1 } << dim, grow(level - 1));
    return TreeShape::node(SplitDescriptor{}, std::move(children));
  };
  return from_shape(kind, dim, n, *grow(depth));
}

PartitionTree
PartitionTree::from_shape(CollectionKind kind, int dim, std::size_t n, const TreeShape& shape)
{
  if (dim < 1)
    throw ContractError("partition dimension must be positive");
  if (n < 1)
    throw ContractError("sample size must be positive");
  PartitionTree tree;
  tree.kind_ = kind;
  tree.dim_ = dim;
  tree.n_ = n;
  tree.build(shape, Hyperrectangle::unit(dim), 0);
  return tree;
}

std::size_t
PartitionTree::build(const TreeShape& shape, const Hyperrectangle& cell, int depth)
{
  const std::size_t index = nodes_.size();
  nodes_.push_back(Node{ cell, shape.split, {}, -1, depth });
  if (!shape.split) {
    nodes_[index].leaf_index = static_cast<int>(leaves_.size());
    leaves_.push_back(index);
    return index;
  }
  const auto cells = shape.split->children(cell);
  if (cells.size() != shape.children.size())
    throw ContractError("tree shape arity does not match its split");
  std::vector<std::size_t> kids;
  kids.reserve(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c)
    kids.push_back(build(*shape.children[c], cells[c], depth + 1));
  nodes_[index].children = std::move(kids);
  return index;
}

PartitionTree
PartitionTree::from_cells(CollectionKind kind, int dim, std::size_t n, std::vector<Hyperrectangle> cells)
{
  if (cells.empty())
    throw ContractError("flat partition needs at least one cell");
  double total = 0.0;
  for (const auto& c : cells) {
    if (c.dim() != dim)
      throw ContractError("flat partition cell has the wrong dimension");
    total += c.volume();
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ContractError("flat partition cells do not tile the unit cube");
  std::sort(cells.begin(), cells.end(), [](const Hyperrectangle& a, const Hyperrectangle& b) {
    return a.lower() < b.lower();
  });
  PartitionTree tree;
  tree.kind_ = kind;
  tree.dim_ = dim;
  tree.n_ = n;
  tree.flat_ = true;
  tree.nodes_.push_back(Node{ Hyperrectangle::unit(dim), std::nullopt, {}, -1, 0 });
  if (cells.size() == 1) {
    tree.nodes_[0].leaf_index = 0;
    tree.leaves_.push_back(0);
    return tree;
  }
  for (auto& c : cells) {
    tree.nodes_[0].children.push_back(tree.nodes_.size());
    tree.leaves_.push_back(tree.nodes_.size());
    tree.nodes_.push_back(Node{ std::move(c), std::nullopt, {}, static_cast<int>(tree.leaves_.size() - 1), 1 });
  }
  return tree;
}

const Hyperrectangle&
PartitionTree::leaf(std::size_t index) const
{
  return nodes_.at(leaves_.at(index)).cell;
}

std::vector<Hyperrectangle>
PartitionTree::leaf_cells() const
{
  std::vector<Hyperrectangle> out;
  out.reserve(leaves_.size());
  for (auto idx : leaves_)
    out.push_back(nodes_[idx].cell);
  return out;
}

std::size_t
PartitionTree::leaf_of(std::span<const double> x) const
{
  if (static_cast<int>(x.size()) != dim_)
    throw DomainError("point dimension does not match the partition");
  const Hyperrectangle& root = nodes_.front().cell;
  if (!root.contains_closed(x))
    throw DomainError("point lies outside the root cell");
  if (flat_) {
    for (std::size_t l = 0; l < leaves_.size(); ++l) {
      if (nodes_[leaves_[l]].cell.contains(x, root))
        return l;
    }
    throw DomainError("flat partition does not cover the point");
  }
  std::size_t node = 0;
  while (nodes_[node].split)
    node = nodes_[node].children[nodes_[node].split->child_of(nodes_[node].cell, x)];
  return static_cast<std::size_t>(nodes_[node].leaf_index);
}

void
PartitionTree::append_id(std::size_t node, std::string& out) const
{
  const Node& nd = nodes_[node];
  if (!nd.split) {
    out += 'L';
    return;
  }
  if (nd.split->type == SplitDescriptor::Type::dyadic) {
    out += 'D';
  } else {
    out += 'S' + std::to_string(nd.split->axis) + '@' + format_double(nd.split->position);
  }
  out += '(';
  for (std::size_t c = 0; c < nd.children.size(); ++c) {
    if (c)
      out += ',';
    append_id(nd.children[c], out);
  }
  out += ')';
}

std::string
PartitionTree::id() const
{
  if (flat_) {
    std::string out = "F(";
    for (std::size_t l = 0; l < leaves_.size(); ++l) {
      if (l)
        out += ',';
      out += leaf(l).str();
    }
    return out + ")";
  }
  std::string out;
  append_id(0, out);
  return out;
}

std::string
PartitionTree::partition_key() const
{
  std::vector<std::string> parts;
  parts.reserve(leaves_.size());
  for (auto idx : leaves_)
    parts.push_back(nodes_[idx].cell.str());
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (const auto& p : parts)
    out += p;
  return out;
}

TreeShapePtr
PartitionTree::shape_of(std::size_t node) const
{
  const Node& nd = nodes_[node];
  if (!nd.split)
    return TreeShape::leaf();
  std::vector<TreeShapePtr> kids;
  for (auto c : nd.children)
    kids.push_back(shape_of(c));
  return TreeShape::node(*nd.split, std::move(kids));
}

TreeShapePtr
PartitionTree::shape() const
{
  if (flat_)
    throw ContractError("flat partitions have no tree shape");
  return shape_of(0);
}

bool
PartitionTree::admissible() const
{
  const double min_volume = 1.0 / static_cast<double>(n_);
  if (flat_) {
    if (kind_ != CollectionKind::hrp)
      return false;
    for (auto idx : leaves_) {
      const auto& c = nodes_[idx].cell;
      if (!at_least(c.volume(), min_volume))
        return false;
      for (int j = 0; j < dim_; ++j) {
        if (!on_grid(c.lower()[j], n_) || !on_grid(c.upper()[j], n_))
          return false;
      }
    }
    return true;
  }
  if (kind_ == CollectionKind::hrp) {
    // A tree whose leaves sit on the grid is also an HRP partition.
    for (auto idx : leaves_) {
      const auto& c = nodes_[idx].cell;
      if (!at_least(c.volume(), min_volume))
        return false;
      for (int j = 0; j < dim_; ++j) {
        if (!on_grid(c.lower()[j], n_) || !on_grid(c.upper()[j], n_))
          return false;
      }
    }
    return true;
  }
  if (kind_ == CollectionKind::udp) {
    const int depth = nodes_[leaves_.front()].depth;
    for (const auto& nd : nodes_) {
      if (nd.split && nd.split->type != SplitDescriptor::Type::dyadic)
        return false;
      if (!nd.split && nd.depth != depth)
        return false;
    }
    return depth <= udp_max_depth(n_, dim_);
  }
  for (const auto& nd : nodes_) {
    if (!nd.split)
      continue;
    const auto allowed = admissible_splits(kind_, nd.cell, n_);
    if (std::find(allowed.begin(), allowed.end(), *nd.split) == allowed.end())
      return false;
  }
  return true;
}

// ---------------------------------------------------------------- growth rules

std::vector<SplitDescriptor>
admissible_splits(CollectionKind kind, const Hyperrectangle& cell, std::size_t n)
{
  std::vector<SplitDescriptor> out;
  const double nd = static_cast<double>(n);
  const double volume = cell.volume();
  const int d = cell.dim();
  switch (kind) {
    case CollectionKind::udp:
    case CollectionKind::hrp:
      break;
    case CollectionKind::rdp:
      if (at_least(volume, std::ldexp(1.0, d) / nd))
        out.push_back(SplitDescriptor{});
      break;
    case CollectionKind::rdsp:
      if (at_least(volume, 2.0 / nd)) {
        for (int j = 0; j < d; ++j)
          out.push_back(SplitDescriptor{ SplitDescriptor::Type::axis, j, 0.5 * (cell.lower()[j] + cell.upper()[j]) });
      }
      break;
    case CollectionKind::rsp:
      if (at_least(volume, 2.0 / nd)) {
        for (int j = 0; j < d; ++j) {
          const double lo = cell.lower()[j];
          const double hi = cell.upper()[j];
          const double rest = volume / cell.extent(j);
          const auto k_first = static_cast<long long>(std::floor(lo * nd)) + 1;
          const auto k_last = static_cast<long long>(std::ceil(hi * nd)) - 1;
          for (long long k = k_first; k <= k_last; ++k) {
            const double pos = static_cast<double>(k) / nd;
            if (!(pos > lo && pos < hi))
              continue;
            if (at_least((pos - lo) * rest, 1.0 / nd) && at_least((hi - pos) * rest, 1.0 / nd))
              out.push_back(SplitDescriptor{ SplitDescriptor::Type::axis, j, pos });
          }
        }
      }
      break;
  }
  return out;
}

int
udp_max_depth(std::size_t n, int dim)
{
  int depth = 0;
  while (true) {
    const int bits = dim * (depth + 1);
    if (bits >= 63 || (std::size_t{ 1 } << bits) > n)
      return depth;
    ++depth;
  }
}

double
ceil_ln2(double x)
{
  const double ln2 = std::log(2.0);
  return ln2 * std::ceil(x / ln2 - 1e-12);
}

CodingConstants
coding_constants(CollectionKind kind, std::size_t n, int dim)
{
  const double ln2 = std::log(2.0);
  const double nd = static_cast<double>(n);
  const double d = static_cast<double>(dim);
  CodingConstants k;
  switch (kind) {
    case CollectionKind::udp: {
      const double levels = 1.0 + std::log(nd) / (d * ln2);
      k.a0 = std::log(std::max(2.0, levels));
      k.b0 = 0.0;
      k.c0 = 0.0;
      k.sigma0 = levels;
      break;
    }
    case CollectionKind::rdp: {
      const double two_d = std::ldexp(1.0, dim);
      k.a0 = 0.0;
      k.b0 = ln2;
      k.c0 = two_d / (two_d - 1.0);
      k.sigma0 = 2.0;
      break;
    }
    case CollectionKind::rdsp:
      k.a0 = 0.0;
      k.b0 = ceil_ln2(std::log(1.0 + d));
      k.c0 = 2.0;
      k.sigma0 = 2.0 * (1.0 + d);
      break;
    case CollectionKind::rsp:
      k.a0 = 0.0;
      k.b0 = ceil_ln2(std::log(1.0 + d)) + ceil_ln2(std::log(nd));
      k.c0 = 2.0;
      k.sigma0 = 4.0 * (1.0 + d) * nd;
      break;
    case CollectionKind::hrp:
      k.a0 = 0.0;
      k.b0 = d * ceil_ln2(std::log(nd));
      k.c0 = 1.0;
      k.sigma0 = std::pow(2.0 * nd, d);
      break;
  }
  return k;
}

double
coding_weight(const PartitionTree& tree, double c)
{
  const auto k = coding_constants(tree.kind(), tree.sample_size(), tree.dim());
  if (c < k.c0 - 1e-12)
    throw ContractError("coding constant c is below c0 for this collection; the Kraft bound no longer holds");
  return c * (k.a0 + k.b0 * static_cast<double>(tree.num_leaves()));
}

// ---------------------------------------------------------------- enumeration

namespace {

class ShapeEnumerator
{
public:
  ShapeEnumerator(CollectionKind kind, std::size_t n, std::size_t budget)
    : kind_(kind)
    , n_(n)
    , budget_(budget)
  {}

  const std::vector<TreeShapePtr>& subtrees(const Hyperrectangle& cell, std::size_t max_leaves)
  {
    auto key = std::make_tuple(cell.lower(), cell.upper(), max_leaves);
    if (auto it = memo_.find(key); it != memo_.end())
      return it->second;

    std::vector<TreeShapePtr> out{ TreeShape::leaf() };
    if (max_leaves >= 2) {
      for (const auto& split : admissible_splits(kind_, cell, n_)) {
        const auto cells = split.children(cell);
        const std::size_t arity = cells.size();
        if (arity > max_leaves)
          continue;
        std::vector<const std::vector<TreeShapePtr>*> options;
        for (const auto& c : cells)
          options.push_back(&subtrees(c, max_leaves - (arity - 1)));
        std::vector<TreeShapePtr> current;
        combine(split, options, 0, max_leaves, current, out);
      }
    }
    produced_ += out.size();
    if (produced_ > budget_)
      throw ResourceError("partition enumeration exceeded its budget of " + std::to_string(budget_));
    return memo_.emplace(std::move(key), std::move(out)).first->second;
  }

private:
  void combine(const SplitDescriptor& split,
               const std::vector<const std::vector<TreeShapePtr>*>& options,
               std::size_t child,
               std::size_t remaining,
               std::vector<TreeShapePtr>& current,
               std::vector<TreeShapePtr>& out)
  {
    if (child == options.size()) {
      out.push_back(TreeShape::node(split, current));
      if (out.size() > budget_)
        throw ResourceError("partition enumeration exceeded its budget of " + std::to_string(budget_));
      return;
    }
    const std::size_t reserve = options.size() - child - 1;
    for (const auto& sub : *options[child]) {
      if (sub->leaves + reserve > remaining)
        continue;
      current.push_back(sub);
      combine(split, options, child + 1, remaining - sub->leaves, current, out);
      current.pop_back();
    }
  }

  CollectionKind kind_;
  std::size_t n_;
  std::size_t budget_;
  std::size_t produced_ = 0;
  std::map<std::tuple<std::vector<double>, std::vector<double>, std::size_t>, std::vector<TreeShapePtr>> memo_;
};

// Exhaustive tilings of the integer grid {0..n}^d by boxes of at least
// n^{d-1} unit cells. The box covering the first free unit cell (in
// row-major order) is chosen at each step, so each tiling appears once.
class GridTiler
{
public:
  GridTiler(std::size_t n, int dim, std::size_t max_leaves, std::size_t budget)
    : n_(n)
    , dim_(dim)
    , max_leaves_(max_leaves)
    , budget_(budget)
    , occupied_(static_cast<std::size_t>(std::pow(static_cast<double>(n), dim)), false)
  {
    min_units_ = static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(n), dim - 1)));
  }

  std::vector<std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>> run()
  {
    recurse();
    return results_;
  }

private:
  std::size_t flat_index(const std::vector<std::size_t>& coord) const
  {
    std::size_t idx = 0;
    for (int j = 0; j < dim_; ++j)
      idx = idx * n_ + coord[j];
    return idx;
  }

  std::vector<std::size_t> coord_of(std::size_t idx) const
  {
    std::vector<std::size_t> coord(dim_);
    for (int j = dim_ - 1; j >= 0; --j) {
      coord[j] = idx % n_;
      idx /= n_;
    }
    return coord;
  }

  bool box_free(const std::vector<std::size_t>& lo, const std::vector<std::size_t>& hi) const
  {
    bool ok = true;
    for_each_unit(lo, hi, [&](std::size_t idx) { ok = ok && !occupied_[idx]; });
    return ok;
  }

  template<class F>
  void for_each_unit(const std::vector<std::size_t>& lo, const std::vector<std::size_t>& hi, F&& f) const
  {
    std::vector<std::size_t> c = lo;
    while (true) {
      f(flat_index(c));
      int j = dim_ - 1;
      while (j >= 0) {
        if (++c[j] < hi[j])
          break;
        c[j] = lo[j];
        --j;
      }
      if (j < 0)
        return;
    }
  }

  void set_box(const std::vector<std::size_t>& lo, const std::vector<std::size_t>& hi, bool value)
  {
    for_each_unit(lo, hi, [&](std::size_t idx) { occupied_[idx] = value; });
  }

  void recurse()
  {
    auto first = std::find(occupied_.begin(), occupied_.end(), false);
    if (first == occupied_.end()) {
      results_.push_back(current_);
      if (results_.size() > budget_)
        throw ResourceError("HRP enumeration exceeded its budget of " + std::to_string(budget_));
      return;
    }
    if (current_.size() >= max_leaves_)
      return;
    const auto lo = coord_of(static_cast<std::size_t>(first - occupied_.begin()));
    std::vector<std::size_t> hi(dim_);
    extend(lo, hi, 0);
  }

  void extend(const std::vector<std::size_t>& lo, std::vector<std::size_t>& hi, int axis)
  {
    if (axis == dim_) {
      std::size_t units = 1;
      for (int j = 0; j < dim_; ++j)
        units *= hi[j] - lo[j];
      if (units < min_units_ || !box_free(lo, hi))
        return;
      set_box(lo, hi, true);
      current_.emplace_back(lo, hi);
      recurse();
      current_.pop_back();
      set_box(lo, hi, false);
      return;
    }
    for (std::size_t h = lo[axis] + 1; h <= n_; ++h) {
      hi[axis] = h;
      extend(lo, hi, axis + 1);
    }
  }

  std::size_t n_;
  int dim_;
  std::size_t max_leaves_;
  std::size_t budget_;
  std::size_t min_units_ = 1;
  std::vector<bool> occupied_;
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> current_;
  std::vector<std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>> results_;
};

} // namespace

std::vector<PartitionTree>
enumerate_partitions(CollectionKind kind, std::size_t n, int dim, const EnumerationOptions& options)
{
  if (options.max_leaves < 1)
    throw ContractError("max_leaves must be at least 1");
  std::vector<PartitionTree> out;
  switch (kind) {
    case CollectionKind::udp: {
      const int depth_max = udp_max_depth(n, dim);
      for (int depth = 0; depth <= depth_max; ++depth) {
        const int bits = dim * depth;
        if (bits >= 63 || (std::size_t{ 1 } << bits) > options.max_leaves)
          break;
        out.push_back(PartitionTree::uniform(kind, dim, n, depth));
      }
      return out;
    }
    case CollectionKind::hrp: {
      if (options.max_leaves > 4 || n > 8)
        throw ContractError("HRP enumeration is exhaustive and limited to max_leaves <= 4 and n <= 8");
      GridTiler tiler(n, dim, options.max_leaves, options.budget);
      const double nd = static_cast<double>(n);
      for (const auto& tiling : tiler.run()) {
        std::vector<Hyperrectangle> cells;
        for (const auto& [lo, hi] : tiling) {
          std::vector<double> l(dim), u(dim);
          for (int j = 0; j < dim; ++j) {
            l[j] = static_cast<double>(lo[j]) / nd;
            u[j] = static_cast<double>(hi[j]) / nd;
          }
          cells.emplace_back(std::move(l), std::move(u));
        }
        out.push_back(PartitionTree::from_cells(kind, dim, n, std::move(cells)));
      }
      return out;
    }
    default:
      break;
  }

  ShapeEnumerator enumerator(kind, n, options.budget);
  const auto& shapes = enumerator.subtrees(Hyperrectangle::unit(dim), options.max_leaves);
  const bool may_repeat = kind == CollectionKind::rdsp || kind == CollectionKind::rsp;
  std::unordered_set<std::string> seen;
  out.reserve(shapes.size());
  for (const auto& shape : shapes) {
    auto tree = PartitionTree::from_shape(kind, dim, n, *shape);
    if (may_repeat && !seen.insert(tree.partition_key()).second)
      continue;
    out.push_back(std::move(tree));
  }
  return out;
}

double
kraft_sum(CollectionKind kind, std::size_t n, int dim, double c, const EnumerationOptions& options)
{
  double total = 0.0;
  for (const auto& tree : enumerate_partitions(kind, n, dim, options))
    total += std::exp(-coding_weight(tree, c));
  return total;
}

} // namespace pcde
