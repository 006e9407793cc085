#pragma once

#include "pcde/dataset.hpp"
#include "pcde/polydens.hpp"
#include "pcde/simulate.hpp"
#include "pcde/spatial_gmm.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace pcde::cli {

// ---------------------------------------------------------------- data files

//! Dataset CSV with header x1..x{d_X},y1..y{d_Y}; covariates must lie in [0,1].
Dataset read_dataset_csv(const std::string& path);
Dataset parse_dataset_csv(std::istream& in);
void write_dataset_csv(std::ostream& out, const Dataset& data);

//! Hyperspectral cube: pixel (row, col) becomes the covariate
//! ((col + 1/2)/width, (row + 1/2)/height) and its spectrum the response.
struct Cube
{
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  Dataset data; // rows in row-major pixel order
};

Cube read_cube(const std::string& path);
void write_cube(const std::string& path, std::size_t height, std::size_t width, std::size_t bands, std::span<const double> values);

//! Label map: (row, col, label) rows for cubes, a single label column otherwise.
void write_labels(std::ostream& out, const std::vector<int>& labels, const std::optional<Cube>& cube);

//! Shortest decimal text that reads back to the same double ('.' decimal point).
std::string format_number(double v);

// ---------------------------------------------------------------- model documents

struct FitMetadata
{
  std::size_t n = 0;
  double loglik = 0.0;
  double penalty = 0.0;
  double score = 0.0;
  std::uint64_t seed = 0;
  long long dim = 0;
};

//! Persisted model: schema_version "1", kind "piecewise_poly" or "spatial_gmm".
struct ModelDocument
{
  std::variant<PolyModel, SpatialGmm> model;
  FitMetadata meta;
};

std::string dump_model(const ModelDocument& doc);
ModelDocument parse_model(const std::string& text);
void save_model(const std::string& path, const ModelDocument& doc);
ModelDocument load_model(const std::string& path);

// ---------------------------------------------------------------- commands

//! Parameters of every command, mirrored by flags and config-file keys.
struct RunConfig
{
  std::string data;
  std::string out = ".";
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  std::string family = "poly"; // poly | gmm
  std::string collection_x = "rdp";
  std::string collection_y = "rdp";
  std::string degrees = "0";
  std::string k_range = "1:3";
  std::string cov_spec = "KKKK";
  std::string penalty_mode = "slope";
  std::optional<double> kappa;
  std::string search = "dp"; // dp | exhaustive
  std::size_t max_x_leaves = 0;
  std::size_t max_y_leaves = 0;
  int x_depth = 0;
  int y_depth = 0;
  int k = 2;

  std::string model_path; // model document read by segment, simulate and risk
  std::string scenario;   // built-in truth for simulate and risk
  std::size_t samples = 1000;
  std::string sizes = "200,800,3200";
  std::size_t replicates = 20;
  std::string estimator = "select"; // select | truth
  double rho = 0.5;
  std::string quadrature = "auto"; // auto | grid | mc
};

int cmd_fit(const RunConfig& cfg);
int cmd_select(const RunConfig& cfg);
int cmd_segment(const RunConfig& cfg);
int cmd_simulate(const RunConfig& cfg);
int cmd_risk(const RunConfig& cfg);
int cmd_slope(const RunConfig& cfg);

//! Degree list: comma-separated entries, each one integer (same degree on
//! every response axis) or integers joined by ':' (one per axis). With
//! dim_y = 0 only the syntax and signs are checked.
std::vector<DegreeVector> parse_degrees(const std::string& text, int dim_y);
//! "a:b" (inclusive range) or a comma-separated list.
std::vector<int> parse_int_list(const std::string& text);

//! Parses argv and runs a command; returns the process exit status
//! (0 ok, 1 usage, 2 data, 3 numerical).
int run(int argc, const char* const* argv);

} // namespace pcde::cli
