#pragma once

#include "pcde/dataset.hpp"
#include "pcde/geometry.hpp"
#include "pcde/polydens.hpp"
#include "pcde/spatial_gmm.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pcde {

enum class PenaltyMode
{
  theoretical, // kappa is the user constant in front of the theoretical bound
  slope,       // kappa is calibrated by the slope heuristic
  manual       // kappa multiplies the penalty shape directly
};

std::string_view to_string(PenaltyMode mode);
PenaltyMode parse_penalty_mode(std::string_view text);

//! Penalty of a model as constant + per_leaf_unit * |X-leaves| +
//! per_cell_unit * |(X-leaf, Y-cell) pairs| + extra terms.
struct PenaltySpec
{
  PenaltyMode mode = PenaltyMode::manual;
  double kappa = 0.0;
  double per_leaf_unit = 0.0;
  double per_cell_unit = 0.0;
  double constant = 0.0;
  std::vector<std::pair<std::string, double>> extra_terms;

  void validate() const;
  double extra_total() const;
  double total(std::size_t leaves, std::size_t cells) const;
};

struct ComplexitySpec
{
  double D = 0.0;
  double V = 0.0;
  double n = 1.0;
  bool localized = true;
};

//! Model complexity nσ²: V when D = 0, C*D (localized) or the global upper
//! bound (2C* + 1 + ln(n/(e C* D))_+) D, with C* = (sqrt(V/D) + sqrt(pi))^2.
double complexity(const ComplexitySpec& spec);
double complexity_constant(double D, double V);

// ---------------------------------------------------------------- penalties

struct PolyPenaltyOptions
{
  //! Per-cell, per-leaf and constant parts of the non-additive form.
  bool weaker_form = false;
  //! Every X-leaf shares one uniform Y-partition.
  bool shared_y_partition = false;
};

//! Upper bound on C* for squared polynomials of degree r.
double poly_entropy_constant(const DegreeVector& r);
//! 2 ln 2.
double coding_constant_star();

PenaltySpec penalty_poly(const DegreeVector& r,
                         CollectionKind kind_x,
                         CollectionKind kind_y,
                         int dim_x,
                         int dim_y,
                         std::size_t n,
                         PenaltyMode mode,
                         double kappa,
                         const PolyPenaltyOptions& opts = {});

struct GmmPenaltyOptions
{
  //! Entropy constant C* of the Gaussian mixture blocks.
  double c_star = 3.141592653589793;
};

PenaltySpec penalty_gmm(std::size_t leaves,
                        int K,
                        const CovarianceSpec& spec,
                        const Subspace& subspace,
                        int p,
                        CollectionKind kind_x,
                        int dim_x,
                        std::size_t n,
                        PenaltyMode mode,
                        double kappa,
                        const GmmPenaltyOptions& opts = {});

// ---------------------------------------------------------------- reports

struct ModelRecord
{
  std::string id;
  long long dim = 0;
  //! Quantity the slope heuristic multiplies (dimension-like).
  double shape = 0.0;
  double neg_loglik = 0.0;
  double penalty = 0.0;
  double score = 0.0;
};

struct SlopePoint
{
  double dim = 0.0;
  double neg_loglik = 0.0;
};

struct SlopeDiagnostics
{
  double kappa_hat = 0.0;
  double kappa_tilde = 0.0;
  std::size_t models = 0;
  std::size_t models_fitted = 0;
  //! Largest jump of the selected dimension as kappa sweeps [kappa_hat, 4 kappa_hat].
  double jump_kappa = 0.0;
  double dim_before_jump = 0.0;
  double dim_after_jump = 0.0;
  std::vector<std::pair<double, double>> sweep; // (kappa, selected dim)
};

struct SelectionReport
{
  std::vector<ModelRecord> records;
  std::size_t chosen = 0;
  std::optional<SlopeDiagnostics> slope;

  const ModelRecord& best() const { return records.at(chosen); }
  void write_csv(std::ostream& out) const;
};

//! a is preferred over b: lower score (relative tolerance 1e-12), then lower
//! dimension, then lexicographically smaller identifier.
bool better_record(const ModelRecord& a, const ModelRecord& b);

//! Argmin of the scores with the documented tie-break.
SelectionReport exhaustive_select(std::vector<ModelRecord> records);

//! Slope heuristic: Theil-Sen fit of -loglik against dimension over the
//! largest-dimension half; needs >= 6 models spanning a 4x dimension range.
SlopeDiagnostics slope_calibrate(const std::vector<SlopePoint>& points);

// ---------------------------------------------------------------- piecewise polynomials

using PolyPenaltyRule = std::function<PenaltySpec(const DegreeVector&)>;

//! Rule for manual / theoretical modes; slope mode is resolved by the
//! selection routine itself.
PolyPenaltyRule poly_penalty_rule(CollectionKind kind_x,
                                  CollectionKind kind_y,
                                  int dim_x,
                                  int dim_y,
                                  std::size_t n,
                                  PenaltyMode mode,
                                  double kappa,
                                  const PolyPenaltyOptions& opts = {});

struct PolySelectOptions
{
  std::size_t max_x_leaves = 0; // 0: unbounded
  std::size_t max_y_leaves = 0;
  PolyFitOptions fit;
  std::size_t budget = 20'000'000; // DP node evaluations
  //! Kappa values probed for the slope path; empty means every vertex of
  //! the penalized path.
  std::vector<double> slope_grid;
  //! Models with a larger penalty shape stay out of the slope fit (the
  //! likelihood saturates once cells hold single points); 0 means n / ln n.
  double slope_max_shape = 0.0;
  std::size_t slope_max_probes = 400;
};

struct PolySelection
{
  SelectionReport report;
  PolyModel model;
};

PolySelection dp_select_poly(const Dataset& data,
                             CollectionKind kind_x,
                             CollectionKind kind_y,
                             const std::vector<DegreeVector>& r_candidates,
                             const PolyPenaltyRule& penalty,
                             const PolySelectOptions& opts = {});

//! Slope mode: collects the penalized path over kappa, calibrates on its
//! models of shape at most slope_max_shape and selects with 2 kappa_hat.
PolySelection slope_select_poly(const Dataset& data,
                                CollectionKind kind_x,
                                CollectionKind kind_y,
                                const std::vector<DegreeVector>& r_candidates,
                                const PolySelectOptions& opts = {});

//! Brute force over every X-partition of the collection with at most
//! max_x_leaves leaves; each X-leaf independently picks its best
//! Y-partition among all those with at most max_y_leaves cells.
PolySelection exhaustive_select_poly(const Dataset& data,
                                     CollectionKind kind_x,
                                     CollectionKind kind_y,
                                     const std::vector<DegreeVector>& r_candidates,
                                     const PolyPenaltyRule& penalty,
                                     const PolySelectOptions& opts);

//! Identifier of a fitted piecewise polynomial model.
std::string model_id(const PolyModel& model);

// ---------------------------------------------------------------- spatial mixtures

struct GmmCandidate
{
  int K = 1;
  CovarianceSpec spec;
  Subspace subspace;
};

struct GmmSelectOptions
{
  std::size_t max_x_leaves = 0;
  int max_rounds = 10;
  EmOptions em;
  std::size_t budget = 20'000'000;
  GmmPenaltyOptions penalty;
  //! Kappa values (multiples of ln n) used to collect the slope path.
  std::vector<double> slope_grid;
  //! As in PolySelectOptions.
  double slope_max_shape = 0.0;
};

struct GmmSelection
{
  SelectionReport report;
  SpatialGmm model;
  //! Penalized score after each alternation round of the chosen candidate.
  std::vector<double> round_scores;
};

//! Alternates EM with the partition fixed and a partition DP with the
//! components fixed, for every candidate (K, spec, subspace).
GmmSelection dp_select_gmm(const Dataset& data,
                           CollectionKind kind_x,
                           const std::vector<GmmCandidate>& candidates,
                           PenaltyMode mode,
                           double kappa,
                           const GmmSelectOptions& opts = {});

} // namespace pcde
