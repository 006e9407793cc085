#include "pcde/cli.hpp"
#include "pcde/divergence.hpp"
#include "pcde/errors.hpp"
#include "pcde/geometry.hpp"
#include "pcde/polydens.hpp"
#include "pcde/selection.hpp"
#include "pcde/simulate.hpp"
#include "pcde/spatial_gmm.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace pcde;

namespace {

Dataset
make_dataset(const RowMatrix& x, const RowMatrix& y)
{
  if (x.rows() != y.rows())
    throw ContractError("x and y must have the same number of rows");
  return Dataset{ x, y };
}

Eigen::VectorXd
log_density_rows(const auto& model, const RowMatrix& x, const RowMatrix& y)
{
  const auto data = make_dataset(x, y);
  Eigen::VectorXd out(x.rows());
  for (std::size_t i = 0; i < data.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = model.log_density(data.x_row(i), data.y_row(i));
  return out;
}

py::dict
report_dict(const SelectionReport& report)
{
  py::list records;
  for (const auto& r : report.records) {
    py::dict d;
    d["id"] = r.id;
    d["dim"] = r.dim;
    d["shape"] = r.shape;
    d["neg_loglik"] = r.neg_loglik;
    d["penalty"] = r.penalty;
    d["score"] = r.score;
    records.append(d);
  }
  py::dict out;
  out["records"] = records;
  out["chosen"] = report.chosen;
  if (report.slope) {
    py::dict s;
    s["kappa_hat"] = report.slope->kappa_hat;
    s["kappa_tilde"] = report.slope->kappa_tilde;
    s["models"] = report.slope->models;
    s["jump_kappa"] = report.slope->jump_kappa;
    out["slope"] = s;
  }
  return out;
}

std::string
dump(const std::variant<PolyModel, SpatialGmm>& model)
{
  return cli::dump_model(cli::ModelDocument{ model, {} });
}

} // namespace

PYBIND11_MODULE(_core, m)
{
  m.doc() = "Partition-based conditional density estimation by penalized maximum likelihood.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  const py::tuple value_bases = py::make_tuple(base, py::handle(PyExc_ValueError));
  py::register_exception<ContractError>(m, "ContractError", value_bases.ptr());
  py::register_exception<DataError>(m, "DataError", value_bases.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<ResourceError>(m, "ResourceError", base.ptr());

  py::class_<PolyModel>(m, "PolyModel")
    .def_property_readonly("dimension", [](const PolyModel& p) { return p.dimension().dim; })
    .def_property_readonly("degree", &PolyModel::degree)
    .def_property_readonly("id", [](const PolyModel& p) { return model_id(p); })
    .def_property_readonly("x_leaves", [](const PolyModel& p) { return p.x_tree().num_leaves(); })
    .def("weights",
         [](const PolyModel& p, std::size_t leaf) {
           std::vector<double> w;
           for (const auto& c : p.cells().at(leaf))
             w.push_back(c.weight);
           return w;
         })
    .def("log_density", &log_density_rows<PolyModel>, py::arg("x"), py::arg("y"))
    .def("log_likelihood",
         [](const PolyModel& p, const RowMatrix& x, const RowMatrix& y) { return p.log_likelihood(make_dataset(x, y)); })
    .def("to_json", [](const PolyModel& p) { return dump(p); });

  py::class_<SpatialGmm>(m, "SpatialGmm")
    .def_property_readonly("K", &SpatialGmm::K)
    .def_property_readonly("dimension", &SpatialGmm::dimension)
    .def_property_readonly("x_leaves", [](const SpatialGmm& g) { return g.x_tree().num_leaves(); })
    .def_property_readonly("proportions", &SpatialGmm::proportions)
    .def_property_readonly("loglik_trace", [](const SpatialGmm& g) { return g.loglik_trace; })
    .def("log_density", &log_density_rows<SpatialGmm>, py::arg("x"), py::arg("y"))
    .def("segment",
         [](const SpatialGmm& g, const RowMatrix& x, const RowMatrix& y) { return g.segment(make_dataset(x, y)); })
    .def("to_json", [](const SpatialGmm& g) { return dump(g); });

  m.def("load_model",
        [](const std::string& text) -> py::object {
          auto doc = cli::parse_model(text);
          if (auto* p = std::get_if<PolyModel>(&doc.model))
            return py::cast(std::move(*p));
          return py::cast(std::move(std::get<SpatialGmm>(doc.model)));
        },
        py::arg("text"),
        "Model from a JSON model document.");

  m.def("scenarios", &builtin_scenarios);
  m.def(
    "sample",
    [](const std::string& scenario, std::size_t n, std::uint64_t seed) {
      const auto d = pcde::sample(builtin_scenario(scenario), n, seed);
      return py::make_tuple(d.x, d.y);
    },
    py::arg("scenario"),
    py::arg("n"),
    py::arg("seed") = 0,
    "Draws (x, y) from a shipped scenario.");

  m.def(
    "fit_poly",
    [](const RowMatrix& x, const RowMatrix& y, int x_depth, int y_depth, DegreeVector degree) {
      const auto data = make_dataset(x, y);
      if (degree.empty())
        degree.assign(static_cast<std::size_t>(data.dim_y()), 0);
      const auto x_tree = PartitionTree::uniform(CollectionKind::udp, data.dim_x(), data.size(), x_depth);
      const auto y_tree = PartitionTree::uniform(CollectionKind::udp, data.dim_y(), data.size(), y_depth);
      return fit(data, x_tree, y_tree, degree);
    },
    py::arg("x"),
    py::arg("y"),
    py::arg("x_depth") = 0,
    py::arg("y_depth") = 0,
    py::arg("degree") = DegreeVector{},
    "Piecewise polynomial fit on uniform dyadic grids.");

  m.def(
    "select_poly",
    [](const RowMatrix& x,
       const RowMatrix& y,
       std::vector<DegreeVector> degrees,
       const std::string& collection_x,
       const std::string& collection_y,
       const std::string& penalty_mode,
       double kappa,
       std::size_t max_x_leaves,
       std::size_t max_y_leaves) {
      const auto data = make_dataset(x, y);
      if (degrees.empty())
        degrees.push_back(DegreeVector(static_cast<std::size_t>(data.dim_y()), 0));
      const auto kx = parse_collection(collection_x);
      const auto ky = parse_collection(collection_y);
      const auto mode = parse_penalty_mode(penalty_mode);
      PolySelectOptions opts;
      opts.max_x_leaves = max_x_leaves;
      opts.max_y_leaves = max_y_leaves;
      PolySelection sel;
      {
        py::gil_scoped_release release;
        if (mode == PenaltyMode::slope)
          sel = slope_select_poly(data, kx, ky, degrees, opts);
        else
          sel = dp_select_poly(
            data, kx, ky, degrees, poly_penalty_rule(kx, ky, data.dim_x(), data.dim_y(), data.size(), mode, kappa), opts);
      }
      return py::make_tuple(sel.model, report_dict(sel.report));
    },
    py::arg("x"),
    py::arg("y"),
    py::arg("degrees") = std::vector<DegreeVector>{},
    py::arg("collection_x") = "rdp",
    py::arg("collection_y") = "rdp",
    py::arg("penalty_mode") = "slope",
    py::arg("kappa") = 1.0,
    py::arg("max_x_leaves") = 0,
    py::arg("max_y_leaves") = 0,
    "Penalized selection of a piecewise polynomial model; returns (model, report).");

  m.def(
    "select_gmm",
    [](const RowMatrix& x,
       const RowMatrix& y,
       const std::vector<int>& k_values,
       const std::string& cov_spec,
       const std::string& collection_x,
       const std::string& penalty_mode,
       double kappa,
       std::uint64_t seed) {
      const auto data = make_dataset(x, y);
      std::vector<GmmCandidate> candidates;
      for (int k : k_values)
        candidates.push_back({ k, CovarianceSpec::parse(cov_spec), Subspace::full() });
      GmmSelectOptions opts;
      opts.em.seed = seed;
      GmmSelection sel;
      {
        py::gil_scoped_release release;
        sel = dp_select_gmm(data, parse_collection(collection_x), candidates, parse_penalty_mode(penalty_mode), kappa, opts);
      }
      return py::make_tuple(sel.model, report_dict(sel.report));
    },
    py::arg("x"),
    py::arg("y"),
    py::arg("k_values") = std::vector<int>{ 1, 2, 3 },
    py::arg("cov_spec") = "KKKK",
    py::arg("collection_x") = "rdp",
    py::arg("penalty_mode") = "slope",
    py::arg("kappa") = 1.0,
    py::arg("seed") = 0,
    "Penalized selection of a spatial Gaussian mixture; returns (model, report).");

  using Pmf = std::vector<double>;
  m.def("kl", [](const Pmf& p, const Pmf& q) { return kl(p, q); }, py::arg("p"), py::arg("q"));
  m.def("jkl", [](const Pmf& p, const Pmf& q, double rho) { return jkl(p, q, rho); }, py::arg("p"), py::arg("q"), py::arg("rho") = 0.5);
  m.def("hellinger2", [](const Pmf& p, const Pmf& q) { return hellinger2(p, q); }, py::arg("p"), py::arg("q"));
  m.def("jkl_hellinger_constant", &jkl_hellinger_constant, py::arg("rho"));
  m.def("gaussian_hellinger2", &gaussian_hellinger2, py::arg("mu1"), py::arg("sigma1"), py::arg("mu2"), py::arg("sigma2"));
  m.def(
    "kraft_sum",
    [](const std::string& collection, std::size_t n, int dim, double c, std::size_t max_leaves) {
      return kraft_sum(parse_collection(collection), n, dim, c, { max_leaves, 2'000'000 });
    },
    py::arg("collection"),
    py::arg("n"),
    py::arg("dim"),
    py::arg("c"),
    py::arg("max_leaves") = 8);
  m.def("coding_c0",
        [](const std::string& collection, std::size_t n, int dim) {
          return coding_constants(parse_collection(collection), n, dim).c0;
        });
}
