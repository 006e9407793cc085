#include "pcde/cli.hpp"

#include "pcde/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace pcde::cli {

namespace {

using json = nlohmann::ordered_json;

// Non-finite doubles are stored as the strings "inf", "-inf" and "nan".
json
number(double v)
{
  if (std::isfinite(v))
    return v;
  if (std::isnan(v))
    return "nan";
  return v > 0 ? "inf" : "-inf";
}

double
to_number(const json& j)
{
  if (j.is_number())
    return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf")
      return std::numeric_limits<double>::infinity();
    if (s == "-inf")
      return -std::numeric_limits<double>::infinity();
    if (s == "nan")
      return std::numeric_limits<double>::quiet_NaN();
  }
  throw DataError("model document: expected a number, got " + j.dump());
}

json
vector_json(const Eigen::VectorXd& v)
{
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out.push_back(number(v(i)));
  return out;
}

Eigen::VectorXd
to_vector(const json& j)
{
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = to_number(j.at(i));
  return v;
}

//! Row-major list of rows.
json
matrix_json(const Eigen::MatrixXd& m)
{
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    out.push_back(vector_json(m.row(i).transpose()));
  return out;
}

Eigen::MatrixXd
to_matrix(const json& j)
{
  if (j.empty())
    return {};
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != cols)
      throw DataError("model document: ragged matrix");
    m.row(static_cast<Eigen::Index>(i)) = to_vector(j.at(i)).transpose();
  }
  return m;
}

json
doubles_json(const std::vector<double>& v)
{
  json out = json::array();
  for (double x : v)
    out.push_back(number(x));
  return out;
}

std::vector<double>
to_doubles(const json& j)
{
  std::vector<double> out;
  for (const auto& x : j)
    out.push_back(to_number(x));
  return out;
}

// ---------------------------------------------------------------- trees

json
node_json(const PartitionTree& tree, std::size_t index)
{
  const auto& node = tree.nodes()[index];
  json out;
  if (!node.split) {
    out["type"] = "leaf";
    return out;
  }
  if (node.split->type == SplitDescriptor::Type::dyadic) {
    out["type"] = "dyadic";
  } else {
    out["type"] = "axis";
    out["axis"] = node.split->axis;
    out["position"] = number(node.split->position);
  }
  out["children"] = json::array();
  for (std::size_t c : node.children)
    out["children"].push_back(node_json(tree, c));
  return out;
}

json
tree_json(const PartitionTree& tree)
{
  json out;
  out["collection"] = std::string(to_string(tree.kind()));
  out["dim"] = tree.dim();
  out["n"] = tree.sample_size();
  if (tree.flat()) {
    out["cells"] = json::array();
    for (const auto& cell : tree.leaf_cells())
      out["cells"].push_back(json{ { "lower", doubles_json(cell.lower()) }, { "upper", doubles_json(cell.upper()) } });
  } else {
    out["root"] = node_json(tree, 0);
  }
  return out;
}

TreeShapePtr
shape_from_json(const json& j)
{
  const auto type = j.at("type").get<std::string>();
  if (type == "leaf")
    return TreeShape::leaf();
  SplitDescriptor split;
  if (type == "axis") {
    split.type = SplitDescriptor::Type::axis;
    split.axis = j.at("axis").get<int>();
    split.position = to_number(j.at("position"));
  } else if (type != "dyadic") {
    throw DataError("model document: unknown node type '" + type + "'");
  }
  std::vector<TreeShapePtr> children;
  for (const auto& c : j.at("children"))
    children.push_back(shape_from_json(c));
  return TreeShape::node(split, std::move(children));
}

PartitionTree
tree_from_json(const json& j)
{
  const auto kind = parse_collection(j.at("collection").get<std::string>());
  const int dim = j.at("dim").get<int>();
  const auto n = j.at("n").get<std::size_t>();
  if (j.contains("cells")) {
    std::vector<Hyperrectangle> cells;
    for (const auto& c : j.at("cells"))
      cells.emplace_back(to_doubles(c.at("lower")), to_doubles(c.at("upper")));
    return PartitionTree::from_cells(kind, dim, n, std::move(cells));
  }
  return PartitionTree::from_shape(kind, dim, n, *shape_from_json(j.at("root")));
}

// ---------------------------------------------------------------- payloads

json
poly_json(const PolyModel& m)
{
  json out;
  out["degree"] = m.degree();
  out["x_tree"] = tree_json(m.x_tree());
  out["leaves"] = json::array();
  for (std::size_t l = 0; l < m.cells().size(); ++l) {
    json leaf;
    leaf["y_tree"] = tree_json(m.y_tree(l));
    leaf["cells"] = json::array();
    for (const auto& c : m.cells()[l])
      leaf["cells"].push_back(json{ { "weight", number(c.weight) },
                                    { "coeffs", doubles_json(c.coeffs) },
                                    { "count", c.count },
                                    { "neg_loglik", number(c.neg_loglik) } });
    out["leaves"].push_back(std::move(leaf));
  }
  return out;
}

PolyModel
poly_from_json(const json& j)
{
  auto x_tree = tree_from_json(j.at("x_tree"));
  std::vector<PartitionTree> y_trees;
  std::vector<std::vector<CellPoly>> cells;
  for (const auto& leaf : j.at("leaves")) {
    y_trees.push_back(tree_from_json(leaf.at("y_tree")));
    auto& row = cells.emplace_back();
    for (const auto& c : leaf.at("cells"))
      row.push_back(CellPoly{ to_doubles(c.at("coeffs")),
                              to_number(c.at("weight")),
                              c.at("count").get<std::size_t>(),
                              to_number(c.at("neg_loglik")) });
  }
  return PolyModel(std::move(x_tree), std::move(y_trees), j.at("degree").get<DegreeVector>(), std::move(cells));
}

json
component_json(const GaussianComponent& c)
{
  return json{ { "mu", vector_json(c.mu) }, { "L", number(c.L) }, { "D", matrix_json(c.D) }, { "A", vector_json(c.A) } };
}

GaussianComponent
component_from_json(const json& j)
{
  GaussianComponent c;
  c.mu = to_vector(j.at("mu"));
  c.L = to_number(j.at("L"));
  c.D = to_matrix(j.at("D"));
  c.A = to_vector(j.at("A"));
  return c;
}

std::string_view
subspace_mode_name(SubspaceMode mode)
{
  switch (mode) {
    case SubspaceMode::known:
      return "known";
    case SubspaceMode::ordered:
      return "ordered";
    case SubspaceMode::free:
      return "free";
  }
  return "known";
}

SubspaceMode
parse_subspace_mode(const std::string& s)
{
  if (s == "known")
    return SubspaceMode::known;
  if (s == "ordered")
    return SubspaceMode::ordered;
  if (s == "free")
    return SubspaceMode::free;
  throw DataError("model document: unknown subspace mode '" + s + "'");
}

json
gmm_json(const SpatialGmm& m)
{
  const auto& s = m.spec();
  json spec;
  spec["code"] = s.code();
  spec["known_means"] = matrix_json(s.known_means);
  spec["known_volume"] = number(s.known_volume);
  spec["known_basis"] = matrix_json(s.known_basis);
  spec["known_shape"] = vector_json(s.known_shape);
  spec["a"] = number(s.a);
  spec["L_minus"] = number(s.L_minus);
  spec["L_plus"] = number(s.L_plus);
  spec["lambda_minus"] = number(s.lambda_minus);
  spec["lambda_plus"] = number(s.lambda_plus);
  spec["enforce_bounds"] = s.enforce_bounds;

  json out;
  out["K"] = m.K();
  out["dim_y"] = m.dim_y();
  out["cov_spec"] = std::move(spec);
  out["subspace"] = json{ { "mode", std::string(subspace_mode_name(m.subspace().mode)) }, { "axes", m.subspace().axes } };
  out["x_tree"] = tree_json(m.x_tree());
  out["components"] = json::array();
  for (const auto& c : m.components())
    out["components"].push_back(component_json(c));
  out["complement"] = m.complement() ? component_json(*m.complement()) : json(nullptr);
  out["proportions"] = json::array();
  for (const auto& pi : m.proportions())
    out["proportions"].push_back(vector_json(pi));
  out["iterations"] = m.iterations;
  out["loglik_trace"] = doubles_json(m.loglik_trace);
  return out;
}

SpatialGmm
gmm_from_json(const json& j)
{
  const auto& s = j.at("cov_spec");
  CovarianceSpec spec = CovarianceSpec::parse(s.at("code").get<std::string>());
  spec.known_means = to_matrix(s.at("known_means"));
  spec.known_volume = to_number(s.at("known_volume"));
  spec.known_basis = to_matrix(s.at("known_basis"));
  spec.known_shape = to_vector(s.at("known_shape"));
  spec.a = to_number(s.at("a"));
  spec.L_minus = to_number(s.at("L_minus"));
  spec.L_plus = to_number(s.at("L_plus"));
  spec.lambda_minus = to_number(s.at("lambda_minus"));
  spec.lambda_plus = to_number(s.at("lambda_plus"));
  spec.enforce_bounds = s.at("enforce_bounds").get<bool>();

  Subspace sub;
  sub.mode = parse_subspace_mode(j.at("subspace").at("mode").get<std::string>());
  sub.axes = j.at("subspace").at("axes").get<std::vector<int>>();

  std::vector<GaussianComponent> comps;
  for (const auto& c : j.at("components"))
    comps.push_back(component_from_json(c));
  std::optional<GaussianComponent> complement;
  if (!j.at("complement").is_null())
    complement = component_from_json(j.at("complement"));
  std::vector<Eigen::VectorXd> props;
  for (const auto& pi : j.at("proportions"))
    props.push_back(to_vector(pi));
  if (j.at("K").get<int>() != static_cast<int>(comps.size()))
    throw DataError("model document: K differs from the number of components");

  SpatialGmm m(tree_from_json(j.at("x_tree")),
               std::move(comps),
               std::move(props),
               std::move(spec),
               std::move(sub),
               j.at("dim_y").get<int>(),
               std::move(complement));
  m.iterations = j.at("iterations").get<int>();
  m.loglik_trace = to_doubles(j.at("loglik_trace"));
  return m;
}

} // namespace

std::string
dump_model(const ModelDocument& doc)
{
  json out;
  out["schema_version"] = "1";
  if (const auto* poly = std::get_if<PolyModel>(&doc.model)) {
    out["kind"] = "piecewise_poly";
    out["model"] = poly_json(*poly);
  } else {
    out["kind"] = "spatial_gmm";
    out["model"] = gmm_json(std::get<SpatialGmm>(doc.model));
  }
  out["fit"] = json{ { "n", doc.meta.n },
                     { "loglik", number(doc.meta.loglik) },
                     { "penalty", number(doc.meta.penalty) },
                     { "score", number(doc.meta.score) },
                     { "dim", doc.meta.dim },
                     { "seed", doc.meta.seed } };
  return out.dump(2) + "\n";
}

ModelDocument
parse_model(const std::string& text)
{
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model document is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("schema_version") != "1")
      throw DataError("model document: unsupported schema_version " + j.at("schema_version").dump());
    ModelDocument doc;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "piecewise_poly")
      doc.model = poly_from_json(j.at("model"));
    else if (kind == "spatial_gmm")
      doc.model = gmm_from_json(j.at("model"));
    else
      throw DataError("model document: unknown kind '" + kind + "'");
    const auto& fit = j.at("fit");
    doc.meta.n = fit.at("n").get<std::size_t>();
    doc.meta.loglik = to_number(fit.at("loglik"));
    doc.meta.penalty = to_number(fit.at("penalty"));
    doc.meta.score = to_number(fit.at("score"));
    doc.meta.dim = fit.at("dim").get<long long>();
    doc.meta.seed = fit.at("seed").get<std::uint64_t>();
    return doc;
  } catch (const json::exception& e) {
    throw DataError(std::string("model document: ") + e.what());
  } catch (const ContractError& e) {
    throw DataError(std::string("model document is inconsistent: ") + e.what());
  }
}

void
save_model(const std::string& path, const ModelDocument& doc)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write model document '" + path + "'");
  out << dump_model(doc);
}

ModelDocument
load_model(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open model document '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

} // namespace pcde::cli
