#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xsite/common.hpp"
#include "xsite/deconfound.hpp"

namespace xsite::scaffold {

/// How the Huber threshold of a robust location estimate is chosen.
struct DeltaPolicy {
  enum class Kind { scale_adaptive, fixed };
  Kind kind = Kind::scale_adaptive;
  double value = 0.0;     // used when kind == fixed
  double tuning = 1.345;  // used when kind == scale_adaptive

  static DeltaPolicy scale_adaptive(double tuning = 1.345) { return {Kind::scale_adaptive, 0.0, tuning}; }
  static DeltaPolicy fixed(double delta) { return {Kind::fixed, delta, 1.345}; }
};

/// Exact minimizer of sum_i H_delta(x_i - mu). When the minimizers form an
/// interval, its midpoint is returned.
double huber_location(std::span<const double> values, double delta);

/// Huber location with the threshold picked by `policy`. A scale-adaptive policy
/// uses delta = tuning * 1.4826 * MAD and falls back to the median when MAD = 0.
double robust_mean(std::span<const double> values, const DeltaPolicy& policy = DeltaPolicy::scale_adaptive());

inline int sgn(double v) { return (v > 0.0) - (v < 0.0); }

struct SiteContrast {
  std::string site_id;
  std::vector<double> values;  // d_e, one entry per edge
  std::size_t n_case = 0;
  std::size_t n_control = 0;
};

/// d_e = robust mean over cases - robust mean over controls, per edge.
/// Throws ContractError when either class is absent.
SiteContrast site_contrast(std::string site_id, std::span<const std::vector<double>> residuals,
                           std::span<const int> labels, const DeltaPolicy& policy = DeltaPolicy::scale_adaptive());

/// Weighted median: sort by value, accumulate weights, take the first value whose
/// cumulative weight reaches half the total; an exact half takes the midpoint with
/// the next value carrying positive weight.
double weighted_median(std::span<const double> values, std::span<const double> weights);

/// Component-wise median across sites (the unit-weight weighted median).
std::vector<double> consensus_median(std::span<const SiteContrast> contrasts);

/// kappa_j: fraction of sites whose contrast sign matches the consensus sign.
std::vector<double> sign_consistency(std::span<const SiteContrast> contrasts, std::span<const double> consensus);

/// Multiplicity weights of B site bootstrap draws (B x sites, row-major).
/// Draw b depends only on (seed, b).
std::vector<std::vector<double>> bootstrap_weights(std::size_t sites, std::size_t draws, std::uint64_t seed);

struct BootstrapResult {
  std::vector<double> stability;                // pi_j
  std::vector<double> min_abs_consensus;        // min_b |d_com^(b)_j|
};

BootstrapResult bootstrap_consensus(std::span<const SiteContrast> contrasts, std::span<const double> consensus,
                                    std::size_t draws, std::uint64_t seed, std::size_t workers = 1);

/// pi_j: fraction of bootstrap consensus signs matching the consensus sign.
std::vector<double> bootstrap_stability(std::span<const SiteContrast> contrasts, std::span<const double> consensus,
                                        std::size_t draws, std::uint64_t seed, std::size_t workers = 1);

struct ScaffoldStatistics {
  std::vector<double> consensus;  // d_com
  std::vector<double> kappa;
  std::vector<double> pi;
  std::size_t bootstrap_draws = 0;
  std::uint64_t seed = 0;
};

ScaffoldStatistics compute_statistics(std::span<const SiteContrast> contrasts, std::size_t draws,
                                      std::uint64_t seed, std::size_t workers = 1);

struct Thresholds {
  double tau = 0.0;   // strict lower bound on |d_com|
  double eta = 0.75;  // minimum sign consistency
  double zeta = 0.70; // minimum bootstrap stability
};

/// Linear-interpolation percentile (q in [0, 100]).
double percentile(std::vector<double> values, double q);

/// tau = tau_percentile-th percentile of |d_com| over all edges.
Thresholds default_thresholds(const ScaffoldStatistics& stats, double tau_percentile = 80.0, double eta = 0.75,
                              double zeta = 0.70);

/// Edges passing |d_com| > tau, kappa >= eta and pi >= zeta, ascending.
std::vector<std::size_t> select_edges(const ScaffoldStatistics& stats, const Thresholds& thresholds);

struct Scaffold {
  std::size_t rois = 0;
  std::vector<std::size_t> selected;
  Thresholds thresholds;
  ScaffoldStatistics stats;

  std::size_t size() const { return selected.size(); }
  bool contains(std::size_t edge) const;
};

/// Throws ContractError for invalid thresholds or an empty selection.
Scaffold extract_scaffold(const ScaffoldStatistics& stats, const Thresholds& thresholds, std::size_t rois);

// ---------------------------------------------------------------------------
// Margin stability

struct MarginSite {
  std::string site_id;
  std::vector<std::vector<double>> fc;
  std::vector<Vector> covariates;  // standardized
  std::vector<int> labels;
  Vector oracle_intercept;  // planted b*
  Matrix oracle_gamma;      // planted Gamma*, d x M
};

struct MarginCheckConfig {
  Thresholds thresholds;
  std::size_t bootstrap_draws = 1000;
  std::uint64_t empirical_seed = 0;
  std::uint64_t oracle_seed = 0;
  // The guarantee is stated for one shared Huber threshold; pass a fixed policy.
  DeltaPolicy delta = DeltaPolicy::fixed(0.1);
};

struct MarginReport {
  std::vector<double> perturbation;  // Delta_j
  std::vector<double> margin;        // m*_j
  std::vector<bool> empirical;       // j in S
  std::vector<bool> oracle;          // j in S*
  std::vector<bool> agreement;

  std::size_t covered() const;     // edges with Delta_j < m*_j
  std::size_t violations() const;  // covered edges whose decisions disagree
};

/// Recomputes the scaffold decision per edge from fitted and from planted nuisance
/// parameters with identical bootstrap draws and reports the margin quantities.
MarginReport margin_stability_check(std::span<const MarginSite> sites, const deconfound::DeconfounderBank& fitted,
                                    const MarginCheckConfig& config, std::size_t workers = 1);

}  // namespace xsite::scaffold
