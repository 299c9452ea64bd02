#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xsite/common.hpp"
#include "xsite/dataset.hpp"

namespace xsite::deconfound {

/// Huber loss H_delta(r).
double huber_loss(double residual, double delta);

/// Huber score psi_delta(r) = H'_delta(r).
double huber_score(double residual, double delta);

/// Robust scale: 1.4826 * median absolute deviation about the median.
double mad_scale(std::span<const double> values);

struct HuberOptions {
  // When set, delta is held fixed; otherwise delta = tuning * mad_scale(residuals),
  // re-estimated every IRLS iteration.
  std::optional<double> fixed_delta;
  double tuning = 1.345;
  int max_iterations = 50;
  double tolerance = 1e-8;  // max-norm coefficient change
  double ridge = 1e-8;      // damping applied to rank-deficient normal equations
  bool record_trace = false;
};

struct HuberFit {
  double intercept = 0.0;
  Vector gamma;
  double delta = 0.0;  // threshold the returned coefficients minimize under
  int iterations = 0;
  bool converged = false;
  bool rank_deficient = false;
  // Objective values of the fixed-delta phase, one per accepted iterate.
  std::vector<double> objective_trace;
};

/// Total Huber objective sum_i H_delta(y_i - b - q_i . gamma).
double huber_objective(std::span<const double> responses, const Matrix& design, double intercept,
                       const Vector& gamma, double delta);

/// Robust linear fit of one edge's FC values on standardized covariates.
/// Scale-adaptive IRLS, then IRLS and Newton refinement at the frozen delta.
HuberFit huber_fit_edge(std::span<const double> responses, const Matrix& design,
                        const HuberOptions& options = {});

enum class ResidualKind { site_residual, inference_residual };

struct ResidualFc {
  std::vector<double> values;
  ResidualKind kind = ResidualKind::site_residual;
};

struct SiteDeconfounder {
  std::string site_id;
  Vector intercept;  // b, length M
  Matrix gamma;      // d x M, one column per edge
  Vector delta;      // per-edge Huber threshold
  std::size_t subjects = 0;
  std::size_t rank_deficient_edges = 0;
  std::size_t nonconverged_edges = 0;

  std::size_t edges() const { return static_cast<std::size_t>(intercept.size()); }
};

/// Fits every edge of one site independently. fc[i] is subject i's FC vector,
/// covariates[i] its standardized covariate vector.
/// Throws ContractError when the site has fewer than d + 2 subjects.
SiteDeconfounder fit_site_deconfounder(std::string site_id, std::span<const std::vector<double>> fc,
                                       std::span<const Vector> covariates, const HuberOptions& options = {},
                                       std::size_t workers = 1);

/// r_site = fc - b - Gamma^T q. `subject_site` must match the deconfounder's site.
ResidualFc residualize_site(std::span<const double> fc, const Vector& covariates, const SiteDeconfounder& dec,
                            std::string_view subject_site);

struct SkippedSite {
  std::string site_id;
  std::string reason;
};

class DeconfounderBank {
 public:
  /// Adds a fitted site. Replaces an existing entry with the same id.
  void add(SiteDeconfounder site);
  void skip(std::string site_id, std::string reason);

  /// Equal-site averages over every fitted site.
  void aggregate();

  bool aggregated() const { return aggregated_; }
  const std::vector<SiteDeconfounder>& sites() const { return sites_; }
  const std::vector<SkippedSite>& skipped() const { return skipped_; }
  const SiteDeconfounder& site(std::string_view site_id) const;
  const SiteDeconfounder* find(std::string_view site_id) const;

  const Vector& mean_intercept() const;
  const Matrix& mean_gamma() const;

  /// Restores a previously aggregated state (deserialization).
  void set_aggregate(Vector mean_intercept, Matrix mean_gamma);

 private:
  std::vector<SiteDeconfounder> sites_;
  std::vector<SkippedSite> skipped_;
  Vector mean_intercept_;
  Matrix mean_gamma_;
  bool aggregated_ = false;
};

struct SiteData {
  std::string site_id;
  std::vector<std::vector<double>> fc;
  std::vector<Vector> covariates;  // standardized
};

/// Fits a deconfounder for every site with at least d + 2 subjects, records the
/// rest as skipped, then aggregates.
DeconfounderBank fit_bank(std::span<const SiteData> sites, const HuberOptions& options = {},
                          std::size_t workers = 1);

/// Single deconfounder fitted on all sites pooled together (comparison baseline).
SiteDeconfounder fit_pooled_deconfounder(std::span<const SiteData> sites, const HuberOptions& options = {},
                                         std::size_t workers = 1);

/// r_res = fc - b_bar - Gamma_bar^T q. Throws StateError if the bank is not aggregated.
ResidualFc residualize_inference(std::span<const double> fc, const Vector& covariates,
                                 const DeconfounderBank& bank);

/// Residual against an arbitrary (b, Gamma) pair, e.g. a pooled fit. No kind checks.
std::vector<double> residualize_with(std::span<const double> fc, const Vector& covariates,
                                     const Vector& intercept, const Matrix& gamma);

}  // namespace xsite::deconfound
