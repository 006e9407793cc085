#include "pcde/cli.hpp"

#include "pcde/errors.hpp"
#include "pcde/selection.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace pcde::cli {

namespace {

namespace fs = std::filesystem;

struct Input
{
  Dataset data;
  std::optional<Cube> cube;
};

bool
is_cube(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  char magic[6] = {};
  in.read(magic, 6);
  return in.gcount() == 6 && std::string_view(magic, 6) == "CUBE1 ";
}

Input
load_input(const RunConfig& cfg)
{
  if (cfg.data.empty())
    throw ContractError("--data is required");
  if (!fs::exists(cfg.data))
    throw DataError("dataset '" + cfg.data + "' does not exist");
  Input in;
  if (is_cube(cfg.data)) {
    in.cube = read_cube(cfg.data);
    in.data = in.cube->data;
  } else {
    in.data = read_dataset_csv(cfg.data);
  }
  return in;
}

void
check_unit_responses(const Dataset& data)
{
  if ((data.y.array() < 0.0).any() || (data.y.array() > 1.0).any())
    throw DataError("piecewise polynomial models need responses in [0,1]");
}

std::vector<std::string>
split_list(const std::string& text)
{
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty())
      out.push_back(item);
  return out;
}

int
parse_int(std::string_view text)
{
  while (!text.empty() && text.front() == ' ')
    text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ')
    text.remove_suffix(1);
  int v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ContractError("'" + std::string(text) + "' is not an integer");
  return v;
}

fs::path
output_dir(const RunConfig& cfg)
{
  fs::path dir(cfg.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw DataError("cannot create output directory '" + cfg.out + "'");
  return dir;
}

std::ofstream
open_output(const fs::path& path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write '" + path.string() + "'");
  return out;
}

// ---------------------------------------------------------------- validated settings

struct Settings
{
  CollectionKind kind_x = CollectionKind::rdp;
  CollectionKind kind_y = CollectionKind::rdp;
  PenaltyMode mode = PenaltyMode::slope;
  double kappa = 1.0;
  std::vector<int> ks;
  std::vector<CovarianceSpec> specs;
  DivergenceConfig div;
};

Settings
validate(const RunConfig& cfg)
{
  Settings s;
  if (cfg.family != "poly" && cfg.family != "gmm")
    throw ContractError("--family must be poly or gmm");
  s.kind_x = parse_collection(cfg.collection_x);
  s.kind_y = parse_collection(cfg.collection_y);
  parse_degrees(cfg.degrees, 0);
  s.ks = parse_int_list(cfg.k_range);
  for (int k : s.ks)
    if (k < 1)
      throw ContractError("--k-range entries must be >= 1");
  for (const auto& code : split_list(cfg.cov_spec))
    s.specs.push_back(CovarianceSpec::parse(code));
  if (s.specs.empty())
    throw ContractError("--cov-spec is empty");
  s.mode = parse_penalty_mode(cfg.penalty_mode);
  if (s.mode == PenaltyMode::manual && !cfg.kappa)
    throw ContractError("--penalty-mode manual needs --kappa");
  if (cfg.kappa) {
    if (!(*cfg.kappa >= 0.0) || !std::isfinite(*cfg.kappa))
      throw ContractError("--kappa must be a finite nonnegative number");
    s.kappa = *cfg.kappa;
  }
  if (cfg.search != "dp" && cfg.search != "exhaustive")
    throw ContractError("--search must be dp or exhaustive");
  if (cfg.search == "exhaustive" && s.mode == PenaltyMode::slope)
    throw ContractError("--search exhaustive needs --penalty-mode manual or theoretical");
  if (cfg.threads < 1)
    throw ContractError("--threads must be >= 1");
  if (cfg.x_depth < 0 || cfg.y_depth < 0)
    throw ContractError("--x-depth and --y-depth must be >= 0");
  if (cfg.k < 1)
    throw ContractError("--k must be >= 1");
  if (cfg.estimator != "select" && cfg.estimator != "truth")
    throw ContractError("--estimator must be select or truth");
  if (cfg.samples < 1)
    throw ContractError("--samples must be >= 1");
  if (cfg.replicates < 3)
    throw ContractError("--replicates must be >= 3");
  for (int n : parse_int_list(cfg.sizes))
    if (n < 1)
      throw ContractError("--sizes entries must be >= 1");

  s.div.rho = cfg.rho;
  if (cfg.quadrature == "auto")
    s.div.quadrature = QuadratureKind::automatic;
  else if (cfg.quadrature == "grid")
    s.div.quadrature = QuadratureKind::grid;
  else if (cfg.quadrature == "mc")
    s.div.quadrature = QuadratureKind::monte_carlo;
  else
    throw ContractError("--quadrature must be auto, grid or mc");
  s.div.seed = cfg.seed;
  s.div.validate();
  return s;
}

// ---------------------------------------------------------------- selection

struct Selected
{
  SelectionReport report;
  std::variant<PolyModel, SpatialGmm> model;
};

Selected
run_selection(const Dataset& data, const RunConfig& cfg, const Settings& s)
{
  if (cfg.family == "poly") {
    check_unit_responses(data);
    const auto rs = parse_degrees(cfg.degrees, data.dim_y());
    PolySelectOptions opts;
    opts.max_x_leaves = cfg.max_x_leaves;
    opts.max_y_leaves = cfg.max_y_leaves;
    opts.fit.seed = cfg.seed;
    PolySelection sel;
    if (s.mode == PenaltyMode::slope) {
      sel = slope_select_poly(data, s.kind_x, s.kind_y, rs, opts);
    } else {
      const auto rule =
        poly_penalty_rule(s.kind_x, s.kind_y, data.dim_x(), data.dim_y(), data.size(), s.mode, s.kappa);
      sel = cfg.search == "exhaustive" ? exhaustive_select_poly(data, s.kind_x, s.kind_y, rs, rule, opts)
                                       : dp_select_poly(data, s.kind_x, s.kind_y, rs, rule, opts);
    }
    return { std::move(sel.report), std::move(sel.model) };
  }
  if (cfg.search == "exhaustive")
    throw ContractError("--search exhaustive is available for --family poly only");
  std::vector<GmmCandidate> cands;
  for (int k : s.ks)
    for (const auto& spec : s.specs)
      cands.push_back(GmmCandidate{ k, spec, Subspace::full() });
  GmmSelectOptions opts;
  opts.max_x_leaves = cfg.max_x_leaves;
  opts.em.seed = cfg.seed;
  auto sel = dp_select_gmm(data, s.kind_x, cands, s.mode, s.kappa, opts);
  return { std::move(sel.report), std::move(sel.model) };
}

FitMetadata
metadata(const ModelRecord& rec, std::size_t n, std::uint64_t seed)
{
  return FitMetadata{ n, -rec.neg_loglik, rec.penalty, rec.score, seed, rec.dim };
}

void
write_report(const fs::path& path, const std::string& command, const RunConfig& cfg, const std::string& id, const FitMetadata& meta)
{
  auto out = open_output(path);
  out << "command " << command << '\n'
      << "family " << cfg.family << '\n'
      << "model " << id << '\n'
      << "n " << meta.n << '\n'
      << "dim " << meta.dim << '\n'
      << "loglik " << format_number(meta.loglik) << '\n'
      << "penalty " << format_number(meta.penalty) << '\n'
      << "score " << format_number(meta.score) << '\n'
      << "penalty_mode " << cfg.penalty_mode << '\n'
      << "seed " << meta.seed << '\n';
}

void
write_slope_files(const fs::path& dir, const SelectionReport& report)
{
  const auto& d = *report.slope;
  {
    auto out = open_output(dir / "slope.csv");
    out << "kappa_hat,kappa_tilde,models,models_fitted,jump_kappa,dim_before_jump,dim_after_jump,chosen_dim\n"
        << format_number(d.kappa_hat) << ',' << format_number(d.kappa_tilde) << ',' << d.models << ','
        << d.models_fitted << ',' << format_number(d.jump_kappa) << ',' << format_number(d.dim_before_jump) << ','
        << format_number(d.dim_after_jump) << ',' << report.best().dim << '\n';
  }
  auto out = open_output(dir / "slope_sweep.csv");
  out << "kappa,dim\n";
  for (const auto& [kappa, dim] : d.sweep)
    out << format_number(kappa) << ',' << format_number(dim) << '\n';
}

// ---------------------------------------------------------------- truths

GroundTruth
truth_from(const RunConfig& cfg)
{
  if (!cfg.scenario.empty() && !cfg.model_path.empty())
    throw ContractError("give either --scenario or --model, not both");
  if (!cfg.scenario.empty())
    return builtin_scenario(cfg.scenario);
  if (cfg.model_path.empty())
    throw ContractError("--scenario or --model is required");
  const auto doc = load_model(cfg.model_path);
  if (const auto* poly = std::get_if<PolyModel>(&doc.model))
    return GroundTruth::piecewise_poly(*poly);
  return GroundTruth::spatial_gmm(std::get<SpatialGmm>(doc.model));
}

//! TOML-style config whose [sections] only group keys: every key applies to
//! the top-level flag of the same name, with '_' read as '-'.
class SectionedConfig : public CLI::ConfigTOML
{
public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override
  {
    static const std::set<std::string> sections{ "data",   "selection", "fit",      "simulation", "divergence",
                                                 "output", "select",    "segment",  "simulate",   "risk",
                                                 "slope" };
    std::vector<CLI::ConfigItem> out;
    for (auto item : CLI::ConfigTOML::from_config(input)) {
      if (item.name == "++" || item.name == "--")
        continue;
      if (item.parents.size() > 1 || (item.parents.size() == 1 && !sections.count(item.parents.front())))
        throw CLI::ConfigError("unknown config section '" + CLI::detail::join(item.parents, ".") + "'");
      item.parents.clear();
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      out.push_back(std::move(item));
    }
    return out;
  }
};

} // namespace

std::vector<int>
parse_int_list(const std::string& text)
{
  std::vector<int> out;
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const int a = parse_int(std::string_view(text).substr(0, colon));
    const int b = parse_int(std::string_view(text).substr(colon + 1));
    if (b < a)
      throw ContractError("range '" + text + "' is empty");
    for (int v = a; v <= b; ++v)
      out.push_back(v);
    return out;
  }
  for (const auto& item : split_list(text))
    out.push_back(parse_int(item));
  if (out.empty())
    throw ContractError("empty integer list");
  return out;
}

std::vector<DegreeVector>
parse_degrees(const std::string& text, int dim_y)
{
  std::vector<DegreeVector> out;
  for (const auto& item : split_list(text)) {
    DegreeVector r;
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ':'))
      r.push_back(parse_int(part));
    for (int v : r)
      if (v < 0)
        throw ContractError("degree '" + item + "' is negative");
    if (dim_y > 0) {
      if (r.size() == 1)
        r.assign(static_cast<std::size_t>(dim_y), r.front());
      if (static_cast<int>(r.size()) != dim_y)
        throw ContractError("degree '" + item + "' needs one entry per response axis");
      PolyFitOptions{}.validate(r);
    }
    out.push_back(std::move(r));
  }
  if (out.empty())
    throw ContractError("--degrees is empty");
  return out;
}

int
cmd_fit(const RunConfig& cfg)
{
  const auto s = validate(cfg);
  const auto in = load_input(cfg);
  const auto& data = in.data;
  const auto n = data.size();
  const auto x_tree = PartitionTree::uniform(s.kind_x, data.dim_x(), n, cfg.x_depth);
  const double kappa = s.mode == PenaltyMode::slope ? 0.0 : s.kappa;
  const auto pen_mode = s.mode == PenaltyMode::slope ? PenaltyMode::manual : s.mode;

  ModelDocument doc;
  std::string id;
  if (cfg.family == "poly") {
    check_unit_responses(data);
    const auto rs = parse_degrees(cfg.degrees, data.dim_y());
    if (rs.size() != 1)
      throw ContractError("fit takes a single degree entry");
    const auto y_tree = PartitionTree::uniform(s.kind_y, data.dim_y(), n, cfg.y_depth);
    PolyFitOptions opts;
    opts.seed = cfg.seed;
    auto model = fit(data, x_tree, y_tree, rs.front(), opts);
    const auto pen = penalty_poly(
      rs.front(), s.kind_x, s.kind_y, data.dim_x(), data.dim_y(), std::max<std::size_t>(n, 2), pen_mode, kappa);
    doc.meta.loglik = model.log_likelihood(data);
    doc.meta.penalty = pen.total(x_tree.num_leaves(), x_tree.num_leaves() * y_tree.num_leaves());
    doc.meta.dim = model.dimension().dim;
    id = model_id(model);
    doc.model = std::move(model);
  } else {
    EmOptions em;
    em.seed = cfg.seed;
    auto model = em_fit(data, x_tree, cfg.k, s.specs.front(), Subspace::full(), em);
    const auto pen = penalty_gmm(x_tree.num_leaves(),
                                 cfg.k,
                                 s.specs.front(),
                                 Subspace::full(),
                                 data.dim_y(),
                                 s.kind_x,
                                 data.dim_x(),
                                 std::max<std::size_t>(n, 2),
                                 pen_mode,
                                 kappa);
    doc.meta.loglik = model.log_likelihood(data);
    doc.meta.penalty = pen.total(x_tree.num_leaves(), 0);
    doc.meta.dim = model.dimension();
    id = gmm_estimate(model).id;
    doc.model = std::move(model);
  }
  doc.meta.n = n;
  doc.meta.seed = cfg.seed;
  doc.meta.score = -doc.meta.loglik + doc.meta.penalty;

  const auto dir = output_dir(cfg);
  save_model((dir / "model.json").string(), doc);
  write_report(dir / "report.txt", "fit", cfg, id, doc.meta);
  return 0;
}

int
cmd_select(const RunConfig& cfg)
{
  const auto s = validate(cfg);
  const auto in = load_input(cfg);
  auto sel = run_selection(in.data, cfg, s);
  const ModelDocument doc{ std::move(sel.model), metadata(sel.report.best(), in.data.size(), cfg.seed) };

  const auto dir = output_dir(cfg);
  {
    auto out = open_output(dir / "selection.csv");
    sel.report.write_csv(out);
  }
  save_model((dir / "model.json").string(), doc);
  write_report(dir / "report.txt", "select", cfg, sel.report.best().id, doc.meta);
  if (sel.report.slope)
    write_slope_files(dir, sel.report);
  return 0;
}

int
cmd_slope(const RunConfig& cfg)
{
  RunConfig c = cfg;
  c.penalty_mode = "slope";
  const auto s = validate(c);
  const auto in = load_input(c);
  const auto sel = run_selection(in.data, c, s);
  const auto dir = output_dir(c);
  write_slope_files(dir, sel.report);
  auto out = open_output(dir / "slope_path.csv");
  sel.report.write_csv(out);
  return 0;
}

int
cmd_segment(const RunConfig& cfg)
{
  validate(cfg);
  if (cfg.model_path.empty())
    throw ContractError("segment needs --model");
  const auto doc = load_model(cfg.model_path);
  const auto* gmm = std::get_if<SpatialGmm>(&doc.model);
  if (!gmm)
    throw ContractError("segment needs a spatial_gmm model document");
  const auto in = load_input(cfg);
  if (in.data.dim_x() != gmm->x_tree().dim() || in.data.dim_y() != gmm->dim_y())
    throw DataError("dataset dimensions differ from the model's");
  const auto labels = gmm->segment(in.data);
  const auto dir = output_dir(cfg);
  auto out = open_output(dir / "labels.csv");
  write_labels(out, labels, in.cube);
  return 0;
}

int
cmd_simulate(const RunConfig& cfg)
{
  validate(cfg);
  const auto truth = truth_from(cfg);
  const auto data = sample(truth, cfg.samples, cfg.seed);
  const auto dir = output_dir(cfg);
  auto out = open_output(dir / "data.csv");
  write_dataset_csv(out, data);
  return 0;
}

int
cmd_risk(const RunConfig& cfg)
{
  const auto s = validate(cfg);
  const auto truth = truth_from(cfg);
  RunConfig sel_cfg = cfg;
  sel_cfg.family = truth.kind() == TruthKind::spatial_gmm ? "gmm" : "poly";

  Estimator est;
  if (cfg.estimator == "truth") {
    est = truth_estimator(truth);
  } else {
    est = [sel_cfg, s](const Dataset& data) {
      auto sel = run_selection(data, sel_cfg, s);
      FittedEstimate e;
      if (const auto* poly = std::get_if<PolyModel>(&sel.model))
        e = poly_estimate(*poly);
      else
        e = gmm_estimate(std::get<SpatialGmm>(sel.model));
      e.id = sel.report.best().id;
      e.score = sel.report.best().score;
      return e;
    };
  }
  RiskOptions opts;
  opts.div = s.div;
  opts.threads = cfg.threads;
  std::vector<RiskRow> rows;
  for (int n : parse_int_list(cfg.sizes))
    rows.push_back(risk(truth, est, static_cast<std::size_t>(n), cfg.replicates, cfg.seed, opts, cfg.estimator == "truth" ? "truth" : "selected"));
  const auto dir = output_dir(cfg);
  auto out = open_output(dir / "risk.csv");
  write_risk_csv(out, rows);
  return 0;
}

int
run(int argc, const char* const* argv)
{
  CLI::App app{ "Partition-based conditional density estimation" };
  app.allow_config_extras(false);
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<SectionedConfig>());
  app.set_config("--config", "", "TOML-style config file (key = value); flags override it");

  RunConfig cfg;
  double kappa = 0.0;
  app.add_option("--data", cfg.data, "dataset CSV or CUBE1 file");
  app.add_option("--out", cfg.out, "output directory");
  app.add_option("--seed", cfg.seed, "master seed");
  app.add_option("--threads", cfg.threads, "worker cap");
  app.add_option("--family", cfg.family, "poly or gmm");
  app.add_option("--collection-x", cfg.collection_x, "udp, rdp, rdsp, rsp or hrp");
  app.add_option("--collection-y", cfg.collection_y, "udp, rdp, rdsp, rsp or hrp");
  app.add_option("--degrees", cfg.degrees, "degree list, e.g. 0,1 or 1:2");
  app.add_option("--k-range", cfg.k_range, "mixture sizes, a:b or a list");
  app.add_option("--cov-spec", cfg.cov_spec, "covariance codes, e.g. KKKK,K111");
  app.add_option("--penalty-mode", cfg.penalty_mode, "slope, theoretical or manual")
    ->check(CLI::IsMember({ "slope", "theoretical", "manual" }));
  auto* kappa_opt = app.add_option("--kappa", kappa, "penalty constant");
  app.add_option("--search", cfg.search, "dp or exhaustive");
  app.add_option("--max-x-leaves", cfg.max_x_leaves, "X-leaf cap (0: none)");
  app.add_option("--max-y-leaves", cfg.max_y_leaves, "Y-cell cap (0: none)");
  app.add_option("--x-depth", cfg.x_depth, "uniform X depth for fit");
  app.add_option("--y-depth", cfg.y_depth, "uniform Y depth for fit");
  app.add_option("--k", cfg.k, "mixture size for fit");
  app.add_option("--model", cfg.model_path, "model document");
  app.add_option("--scenario", cfg.scenario, "built-in truth: histogram_1d, poly_2d or gmm_2d");
  app.add_option("--samples", cfg.samples, "sample size for simulate");
  app.add_option("--sizes", cfg.sizes, "sample sizes for risk");
  app.add_option("--replicates", cfg.replicates, "replicates per size");
  app.add_option("--estimator", cfg.estimator, "select or truth");
  app.add_option("--rho", cfg.rho, "JKL mixing weight");
  app.add_option("--quadrature", cfg.quadrature, "auto, grid or mc");

  const std::vector<std::pair<std::string, int (*)(const RunConfig&)>> commands{
    { "fit", cmd_fit },       { "select", cmd_select }, { "segment", cmd_segment },
    { "simulate", cmd_simulate }, { "risk", cmd_risk }, { "slope", cmd_slope },
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, fn] : commands)
    subs.push_back(app.add_subcommand(name)->fallthrough());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  if (kappa_opt->count() > 0)
    cfg.kappa = kappa;

  try {
    for (std::size_t i = 0; i < subs.size(); ++i)
      if (subs[i]->parsed())
        return commands[i].second(cfg);
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}

} // namespace pcde::cli
