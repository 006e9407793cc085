#pragma once

#include "pcde/dataset.hpp"
#include "pcde/divergence.hpp"
#include "pcde/geometry.hpp"
#include "pcde/polydens.hpp"
#include "pcde/random.hpp"
#include "pcde/selection.hpp"
#include "pcde/spatial_gmm.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace pcde {

enum class TruthKind
{
  piecewise_constant,
  piecewise_poly,
  spatial_gmm,
  custom
};

enum class DesignLaw
{
  uniform, // iid uniform on [0,1]^d
  grid,    // fixed regular grid of cell centers
  custom   // iid from a user sampler
};

std::string_view to_string(TruthKind kind);

//! A known conditional density s0(y|x) together with its design law.
class GroundTruth
{
public:
  GroundTruth() = default;

  //! Histogram truth: masses[l][k] is the probability of Y-cell k of leaf l.
  static GroundTruth piecewise_constant(PartitionTree x_tree,
                                        std::vector<PartitionTree> y_trees,
                                        const std::vector<std::vector<double>>& masses);
  static GroundTruth piecewise_poly(PolyModel model);
  static GroundTruth spatial_gmm(SpatialGmm model);
  //! `y_domain` bounds the integration of divergences.
  static GroundTruth custom(int dim_x, ConditionalDensity density, Hyperrectangle y_domain);

  TruthKind kind() const { return kind_; }
  int dim_x() const { return dim_x_; }
  int dim_y() const { return y_domain_.dim(); }
  const Hyperrectangle& y_domain() const { return y_domain_; }
  const std::optional<PolyModel>& poly() const { return poly_; }
  const std::optional<SpatialGmm>& gmm() const { return gmm_; }

  DesignLaw design = DesignLaw::uniform;
  std::function<void(Rng&, std::span<double>)> custom_design;

  ConditionalDensity conditional() const;
  //! Key identifying design points with equal conditional laws.
  DesignKey design_key() const;

  //! Integrates s0(.|x) over the response domain at a few covariates and
  //! throws ContractError when it deviates from 1.
  void check_normalized(double tolerance = 1e-6) const;

private:
  TruthKind kind_ = TruthKind::custom;
  int dim_x_ = 0;
  Hyperrectangle y_domain_;
  std::optional<PolyModel> poly_;
  std::optional<SpatialGmm> gmm_;
  ConditionalDensity custom_;
};

//! Shipped scenarios: "histogram_1d" (two X-halves, histograms on Y-quarters),
//! "poly_2d" (degree-one densities on four X-quadrants) and "gmm_2d"
//! (two unit Gaussians at -3(1,1) and 3(1,1), proportions 0.8/0.2
//! alternating over four X-quadrants).
GroundTruth builtin_scenario(std::string_view name);
std::vector<std::string> builtin_scenarios();

//! Design of n points: grid designs in 1-D are (i - 1/2)/n; in higher
//! dimension the nearest full grid m^d >= n, truncated to n points.
RowMatrix draw_design(const GroundTruth& truth, std::size_t n, Rng& rng);

//! n pairs, reproducible under `seed`. Bit-identical for equal arguments.
Dataset sample(const GroundTruth& truth, std::size_t n, std::uint64_t seed);

//! The estimator evaluated by the risk harness: maps a dataset to a fitted
//! conditional density plus a label for the report.
struct FittedEstimate
{
  ConditionalDensity density;
  std::string id;
  long long dim = 0;
  double score = 0.0;
  DesignKey key;
  bool is_truth = false;
};
using Estimator = std::function<FittedEstimate(const Dataset&)>;

//! Estimator that ignores the data and returns the truth itself.
Estimator truth_estimator(const GroundTruth& truth);
FittedEstimate poly_estimate(const PolyModel& model);
FittedEstimate gmm_estimate(const SpatialGmm& model);

struct RiskRow
{
  std::size_t n = 0;
  std::string model;
  double risk = 0.0;
  double std_error = 0.0;
  std::size_t replicates = 0;
  double mean_dim = 0.0;
};

struct RiskOptions
{
  DivergenceKind divergence = DivergenceKind::jkl;
  DivergenceConfig div;
  std::size_t threads = 1;
};

//! Mean and standard error (sample standard deviation / sqrt(R)) over
//! replicates of the tensorized divergence between truth and estimate on
//! each replicate's design. Replicate r uses seed derive_seed(seed, r).
RiskRow risk(const GroundTruth& truth,
             const Estimator& estimator,
             std::size_t n,
             std::size_t replicates,
             std::uint64_t seed,
             const RiskOptions& opts = {},
             std::string label = "selected");

void write_risk_csv(std::ostream& out, const std::vector<RiskRow>& rows);

struct OracleRow
{
  std::string model;
  long long dim = 0;
  double risk = 0.0;
  double std_error = 0.0;
  //! Mean penalized score of the model on the replicates.
  double score = 0.0;
};

struct OracleTable
{
  std::size_t n = 0;
  std::size_t replicates = 0;
  std::vector<OracleRow> rows;
  std::size_t oracle = 0;
  RiskRow selected;
  double ratio = 0.0; // selected risk / oracle risk

  void write_csv(std::ostream& out) const;
};

//! Risk of every grid estimator and of the selection estimator on the same
//! replicates.
OracleTable oracle_table(const GroundTruth& truth,
                         const std::vector<Estimator>& grid,
                         const Estimator& selector,
                         std::size_t n,
                         std::size_t replicates,
                         std::uint64_t seed,
                         const RiskOptions& opts = {});

//! True when the sequence decreases to a minimum and increases after it,
//! allowing `slack` of non-monotone noise, with the minimum strictly inside.
bool u_shaped(const std::vector<double>& values, double slack = 0.0);

} // namespace pcde
