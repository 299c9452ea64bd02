#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xsite/common.hpp"
#include "xsite/dataset.hpp"
#include "xsite/deconfound.hpp"

namespace xsite::synth {

// ---------------------------------------------------------------------------
// Edge-level generator: r = b*_e + Gamma*_e^T q + s* + eps, sampled directly.

struct SynthEdgeSpec {
  std::size_t sites = 4;
  std::size_t per_class = 250;       // subjects per class per site
  std::size_t covariates = 2;        // d
  std::size_t edges = 12;            // M
  std::size_t confounded_edges = 6;  // leading edges carrying site-specific Gamma*
  std::size_t signal_edges = 4;      // leading edges carrying the class signal
  double signal = 0.2;               // case minus control mean on signal edges
  double noise = 0.05;               // sigma_eps
  double intercept_range = 0.3;      // b* ~ U(-range, range)
  double min_site_gap = 0.5;         // minimum pairwise gap of Gamma* across sites
  bool heterogeneous = true;         // false: every site shares site 0's b*, Gamma*
  double covariate_site_shift = 0.5; // raw covariate mean shift between sites
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthEdgeSite {
  std::string site_id;
  std::vector<std::vector<double>> fc;
  std::vector<Vector> raw_covariates;
  std::vector<Vector> covariates;  // standardized with the pooled standardizer
  std::vector<int> labels;
  std::vector<std::vector<double>> signal;  // s* per subject
  Vector oracle_intercept;                  // b*
  Matrix oracle_gamma;                      // Gamma*, d x M
};

struct SynthEdgeDataset {
  std::vector<SynthEdgeSite> sites;
  dataset::CovariateStandardizer standardizer;
  SynthEdgeSpec spec;

  std::vector<deconfound::SiteData> site_data() const;
};

SynthEdgeDataset synth_edge_dataset(const SynthEdgeSpec& spec);

// ---------------------------------------------------------------------------
// Time-series generator. ROIs of a module load on one shared latent signal:
//   x_k(t) = sqrt(1 - g) [ sqrt(1 - sum_m w_m(t)) e_k(t) + sum_m sqrt(w_m(t)) z_m(t) ] + sqrt(g) G(t)
// where the sums run over the modules containing k and g is the site's global
// signal share. Two ROIs of one module have correlation (1 - g) w + g at time t.

struct ModuleSpec {
  std::vector<std::size_t> rois;
  double control = 0.1;  // mean coupling w for controls
  double case_ = 0.4;    // mean coupling w for cases
  double control_oscillation = 0.0;  // amplitude of the sinusoidal part of w(t)
  double case_oscillation = 0.0;
  std::vector<double> covariate_effect;  // dw / dq_k, averaged over sites; missing entries are 0
};

struct SynthTimeSeriesSpec {
  std::size_t rois = 16;
  std::size_t sites = 4;
  std::size_t per_class = 40;
  std::vector<std::size_t> time_points = {150};  // per site, cycled
  std::size_t covariates = 1;
  std::vector<ModuleSpec> modules;
  double covariate_site_shift = 0.5;   // site k has raw covariate mean shift * (k - (sites - 1) / 2)
  double covariate_site_spread = 0.0;  // site deviation of covariate effects, U(-spread, spread)
  double global_signal_max = 0.0;      // site global-signal share g ~ U(0, max)
  double oscillation_period = 40.0;    // time points per coupling cycle
  std::uint64_t seed = 0;

  void validate() const;

  /// Spec used by the end-to-end tests: one class-discriminative module whose
  /// coupling also depends on the covariates with site-specific slopes.
  static SynthTimeSeriesSpec planted_module(std::size_t sites, std::size_t per_class, std::uint64_t seed);
};

std::vector<dataset::SubjectRecord> synth_timeseries_dataset(const SynthTimeSeriesSpec& spec);

}  // namespace xsite::synth
