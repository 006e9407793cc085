#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pcde {

//! The five hyperrectangle partition collections of the unit cube.
enum class CollectionKind
{
  udp,  // uniform dyadic
  rdp,  // recursive dyadic
  rdsp, // recursive dyadic split
  rsp,  // recursive split on the (1/n) grid
  hrp   // free hyperrectangle partitions on the (1/n) grid
};

std::string_view to_string(CollectionKind kind);
CollectionKind parse_collection(std::string_view text);

//! Axis-aligned box [lower, upper] with lower[j] < upper[j].
class Hyperrectangle
{
public:
  Hyperrectangle() = default;
  Hyperrectangle(std::vector<double> lower, std::vector<double> upper);

  static Hyperrectangle unit(int dim);

  int dim() const { return static_cast<int>(lower_.size()); }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  double extent(int axis) const { return upper_[axis] - lower_[axis]; }
  double volume() const;

  //! Half-open membership: the cell owns its lower faces, and an upper face
  //! only when it lies on the upper boundary of `root`.
  bool contains(std::span<const double> x, const Hyperrectangle& root) const;
  bool contains_closed(std::span<const double> x) const;

  std::pair<Hyperrectangle, Hyperrectangle> split(int axis, double position) const;
  //! The 2^d midpoint children; bit j of the child index selects the upper
  //! half along axis j.
  std::vector<Hyperrectangle> dyadic_children() const;

  std::string str() const;

  friend bool operator==(const Hyperrectangle&, const Hyperrectangle&) = default;
  friend auto operator<=>(const Hyperrectangle&, const Hyperrectangle&) = default;

private:
  std::vector<double> lower_;
  std::vector<double> upper_;
};

struct SplitDescriptor
{
  enum class Type
  {
    dyadic, // 2^d midpoint children
    axis    // two children, cut at `position` along `axis`
  };
  Type type = Type::dyadic;
  int axis = -1;
  double position = 0.0;

  std::size_t arity(int dim) const { return type == Type::dyadic ? (std::size_t{ 1 } << dim) : 2; }
  std::vector<Hyperrectangle> children(const Hyperrectangle& cell) const;
  //! Child receiving x, under the half-open convention.
  std::size_t child_of(const Hyperrectangle& cell, std::span<const double> x) const;

  friend bool operator==(const SplitDescriptor&, const SplitDescriptor&) = default;
};

//! Immutable recursive description of a tree shape, shared between
//! enumerated trees.
struct TreeShape
{
  std::optional<SplitDescriptor> split;
  std::vector<std::shared_ptr<const TreeShape>> children;
  std::size_t leaves = 1;

  static std::shared_ptr<const TreeShape> leaf();
  static std::shared_ptr<const TreeShape> node(SplitDescriptor split,
                                               std::vector<std::shared_ptr<const TreeShape>> children);
};
using TreeShapePtr = std::shared_ptr<const TreeShape>;

//! Partition of a root cell, either as a split tree (UDP/RDP/RDSP/RSP) or
//! as a flat list of cells (HRP). Nodes are stored in depth-first preorder
//! and leaves are numbered in that order.
class PartitionTree
{
public:
  struct Node
  {
    Hyperrectangle cell;
    std::optional<SplitDescriptor> split;
    std::vector<std::size_t> children;
    int leaf_index = -1;
    int depth = 0;
  };

  PartitionTree() = default;

  //! Single-leaf partition of the unit cube.
  static PartitionTree root(CollectionKind kind, int dim, std::size_t n);
  //! Uniform dyadic grid of the given depth (2^{dim*depth} cubes).
  static PartitionTree uniform(CollectionKind kind, int dim, std::size_t n, int depth);
  static PartitionTree from_shape(CollectionKind kind, int dim, std::size_t n, const TreeShape& shape);
  //! Flat partition; the cells must tile the unit cube.
  static PartitionTree from_cells(CollectionKind kind, int dim, std::size_t n, std::vector<Hyperrectangle> cells);

  CollectionKind kind() const { return kind_; }
  int dim() const { return dim_; }
  std::size_t sample_size() const { return n_; }
  bool flat() const { return flat_; }

  std::size_t num_leaves() const { return leaves_.size(); }
  const Hyperrectangle& leaf(std::size_t index) const;
  std::vector<Hyperrectangle> leaf_cells() const;
  const std::vector<Node>& nodes() const { return nodes_; }
  const Hyperrectangle& root_cell() const { return nodes_.front().cell; }
  //! Node index of each leaf.
  const std::vector<std::size_t>& leaf_nodes() const { return leaves_; }

  //! Leaf containing x; throws DomainError outside the root cell.
  std::size_t leaf_of(std::span<const double> x) const;

  //! Structural identifier, e.g. "D(L,L)" or "S0@0.25(L,L)".
  std::string id() const;
  //! Canonical key of the partition (sorted leaf cells); two trees with
  //! the same leaves share it.
  std::string partition_key() const;
  TreeShapePtr shape() const;

  //! Checks the growth and stopping rules of the tree's collection kind.
  bool admissible() const;

private:
  std::size_t build(const TreeShape& shape, const Hyperrectangle& cell, int depth);
  void append_id(std::size_t node, std::string& out) const;
  TreeShapePtr shape_of(std::size_t node) const;

  CollectionKind kind_ = CollectionKind::rdp;
  int dim_ = 0;
  std::size_t n_ = 1;
  bool flat_ = false;
  std::vector<Node> nodes_;
  std::vector<std::size_t> leaves_;
};

//! Splits a cell may receive under the growth rules of `kind`. UDP and HRP
//! have no per-cell growth rule and return an empty list.
std::vector<SplitDescriptor> admissible_splits(CollectionKind kind, const Hyperrectangle& cell, std::size_t n);

//! Deepest uniform depth J with 2^{dJ} <= n.
int udp_max_depth(std::size_t n, int dim);

//! Smallest multiple of ln 2 not below x (with a 1e-12 slack).
double ceil_ln2(double x);

struct CodingConstants
{
  double a0 = 0.0;
  double b0 = 0.0;
  double c0 = 0.0;
  double sigma0 = 1.0;
};

CodingConstants coding_constants(CollectionKind kind, std::size_t n, int dim);

//! c * (A0 + B0 * |P|); throws ContractError when c < c0.
double coding_weight(const PartitionTree& tree, double c);

struct EnumerationOptions
{
  std::size_t max_leaves = 8;
  std::size_t budget = 2'000'000;
};

//! Every partition of the collection with at most max_leaves cells, each
//! exactly once, in a deterministic order.
std::vector<PartitionTree> enumerate_partitions(CollectionKind kind,
                                                std::size_t n,
                                                int dim,
                                                const EnumerationOptions& options = {});

//! Sum over the enumerated partitions of exp(-coding_weight).
double kraft_sum(CollectionKind kind, std::size_t n, int dim, double c, const EnumerationOptions& options = {});

} // namespace pcde
