#include "xsite/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace xsite::synth {

namespace {

double site_offset(std::size_t site, std::size_t sites) {
  return static_cast<double>(site) - 0.5 * static_cast<double>(sites - 1);
}

// Evenly spaced values in [-1, 1] with a random offset, one per site, shuffled.
std::vector<double> spaced_coefficients(std::size_t sites, double gap, std::mt19937_64& rng) {
  if (sites == 1) return {std::uniform_real_distribution<double>(-1.0, 1.0)(rng)};
  gap = std::min(gap, 2.0 / static_cast<double>(sites - 1));
  const double slack = std::max(0.0, 2.0 - gap * static_cast<double>(sites - 1));
  const double start = -1.0 + std::uniform_real_distribution<double>(0.0, slack)(rng);
  std::vector<double> out(sites);
  for (std::size_t s = 0; s < sites; ++s) out[s] = std::min(1.0, start + gap * static_cast<double>(s));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::string subject_name(std::size_t site, std::size_t subject) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "s%zu_%05zu", site, subject);
  return buf;
}

}  // namespace

void SynthEdgeSpec::validate() const {
  if (sites == 0 || per_class == 0 || edges == 0) throw ContractError("SynthEdgeSpec: sites, per_class and edges must be positive");
  if (confounded_edges > edges || signal_edges > edges) throw ContractError("SynthEdgeSpec: planted edges exceed edge count");
  if (noise < 0.0 || intercept_range < 0.0 || min_site_gap < 0.0)
    throw ContractError("SynthEdgeSpec: noise, intercept_range and min_site_gap must be non-negative");
  if (sites > 1 && min_site_gap * static_cast<double>(sites - 1) > 2.0 + 1e-12)
    throw ContractError("SynthEdgeSpec: min_site_gap too large to fit every site's slope in [-1, 1]");
}

std::vector<deconfound::SiteData> SynthEdgeDataset::site_data() const {
  std::vector<deconfound::SiteData> out;
  out.reserve(sites.size());
  for (const auto& s : sites) out.push_back({s.site_id, s.fc, s.covariates});
  return out;
}

SynthEdgeDataset synth_edge_dataset(const SynthEdgeSpec& spec) {
  spec.validate();
  const std::size_t S = spec.sites, M = spec.edges, d = spec.covariates;
  const auto Mi = static_cast<Eigen::Index>(M), di = static_cast<Eigen::Index>(d);

  SynthEdgeDataset out;
  out.spec = spec;
  out.sites.resize(S);

  std::mt19937_64 param_rng(mix_seed(spec.seed, 0));
  std::uniform_real_distribution<double> intercept(-spec.intercept_range, spec.intercept_range);
  for (std::size_t s = 0; s < S; ++s) {
    auto& site = out.sites[s];
    site.site_id = "site" + std::to_string(s);
    site.oracle_intercept = Vector::Zero(Mi);
    site.oracle_gamma = Matrix::Zero(di, Mi);
    for (Eigen::Index j = 0; j < Mi; ++j) site.oracle_intercept[j] = intercept(param_rng);
  }
  for (std::size_t j = 0; j < spec.confounded_edges; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      const auto values = spaced_coefficients(S, spec.min_site_gap, param_rng);
      for (std::size_t s = 0; s < S; ++s)
        out.sites[s].oracle_gamma(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = values[s];
    }
  }
  if (!spec.heterogeneous) {
    for (std::size_t s = 1; s < S; ++s) {
      out.sites[s].oracle_intercept = out.sites[0].oracle_intercept;
      out.sites[s].oracle_gamma = out.sites[0].oracle_gamma;
    }
  }

  // Raw covariates first: the pooled standardizer needs all of them.
  const std::size_t n = 2 * spec.per_class;
  std::vector<std::vector<std::mt19937_64>> subject_rng(S);
  std::vector<Vector> pooled;
  for (std::size_t s = 0; s < S; ++s) {
    auto& site = out.sites[s];
    const std::uint64_t site_seed = mix_seed(spec.seed, s + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& rng = subject_rng[s].emplace_back(mix_seed(site_seed, i));
      Vector q(di);
      for (Eigen::Index k = 0; k < di; ++k) q[k] = spec.covariate_site_shift * site_offset(s, S) + normal(rng);
      site.raw_covariates.push_back(q);
      site.labels.push_back(static_cast<int>(i % 2));
      pooled.push_back(q);
    }
  }
  out.standardizer = dataset::fit_standardizer(pooled);

  for (std::size_t s = 0; s < S; ++s) {
    auto& site = out.sites[s];
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& rng = subject_rng[s][i];
      const Vector q = out.standardizer.standardize(site.raw_covariates[i]);
      const Vector confound = site.oracle_gamma.transpose() * q;
      std::vector<double> signal(M, 0.0), fc(M);
      const double half = (site.labels[i] == 1 ? 0.5 : -0.5) * spec.signal;
      for (std::size_t j = 0; j < spec.signal_edges; ++j) signal[j] = half;
      for (std::size_t j = 0; j < M; ++j) {
        const auto e = static_cast<Eigen::Index>(j);
        fc[j] = site.oracle_intercept[e] + confound[e] + signal[j] + spec.noise * normal(rng);
      }
      site.covariates.push_back(q);
      site.signal.push_back(std::move(signal));
      site.fc.push_back(std::move(fc));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void SynthTimeSeriesSpec::validate() const {
  if (rois < 2 || sites == 0 || per_class == 0) throw ContractError("SynthTimeSeriesSpec: need rois >= 2, sites and per_class > 0");
  if (time_points.empty()) throw ContractError("SynthTimeSeriesSpec: time_points is empty");
  for (auto t : time_points)
    if (t < 3) throw ContractError("SynthTimeSeriesSpec: every site needs at least 3 time points");
  if (!(oscillation_period > 0.0)) throw ContractError("SynthTimeSeriesSpec: oscillation_period must be positive");
  if (global_signal_max < 0.0 || global_signal_max >= 1.0)
    throw ContractError("SynthTimeSeriesSpec: global_signal_max must lie in [0, 1)");
  if (covariate_site_spread < 0.0) throw ContractError("SynthTimeSeriesSpec: covariate_site_spread must be non-negative");
  for (const auto& m : modules) {
    if (m.rois.size() < 2) throw ContractError("SynthTimeSeriesSpec: a module needs at least two ROIs");
    auto sorted = m.rois;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ContractError("SynthTimeSeriesSpec: duplicate ROI inside a module");
    if (sorted.back() >= rois) throw ContractError("SynthTimeSeriesSpec: module ROI out of range");
    for (double w : {m.control, m.case_})
      if (w < 0.0 || w > 1.0) throw ContractError("SynthTimeSeriesSpec: couplings must lie in [0, 1]");
    if (m.control_oscillation < 0.0 || m.case_oscillation < 0.0)
      throw ContractError("SynthTimeSeriesSpec: oscillation amplitudes must be non-negative");
    if (m.covariate_effect.size() > covariates) throw ContractError("SynthTimeSeriesSpec: more covariate effects than covariates");
  }
}

SynthTimeSeriesSpec SynthTimeSeriesSpec::planted_module(std::size_t sites, std::size_t per_class, std::uint64_t seed) {
  SynthTimeSeriesSpec spec;
  spec.rois = 16;
  spec.sites = sites;
  spec.per_class = per_class;
  spec.time_points = {150, 170, 140, 160};
  spec.covariates = 2;
  spec.seed = seed;
  spec.covariate_site_shift = 0.5;
  spec.covariate_site_spread = 0.02;
  spec.global_signal_max = 0.05;

  ModuleSpec signal;
  signal.rois = {0, 1, 2, 3, 4};
  signal.control = 0.25;
  signal.case_ = 0.40;
  signal.case_oscillation = 0.10;
  signal.covariate_effect = {0.12, -0.06};

  ModuleSpec confound;
  confound.rois = {8, 9, 10, 11};
  confound.control = 0.30;
  confound.case_ = 0.30;
  confound.covariate_effect = {0.15, 0.0};

  spec.modules = {signal, confound};
  return spec;
}

std::vector<dataset::SubjectRecord> synth_timeseries_dataset(const SynthTimeSeriesSpec& spec) {
  spec.validate();
  const std::size_t P = spec.rois, S = spec.sites, d = spec.covariates, nm = spec.modules.size();

  std::vector<std::size_t> membership(P, 0);
  for (const auto& m : spec.modules)
    for (auto k : m.rois) ++membership[k];
  std::vector<double> cap(nm);
  for (std::size_t m = 0; m < nm; ++m) {
    std::size_t most = 1;
    for (auto k : spec.modules[m].rois) most = std::max(most, membership[k]);
    cap[m] = (1.0 - 1e-3) / static_cast<double>(most);
  }

  std::vector<dataset::SubjectRecord> out;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t s = 0; s < S; ++s) {
    // Site parameters come from their own stream so subject counts never shift them.
    std::mt19937_64 site_rng(mix_seed(mix_seed(spec.seed, 0), s));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double g = spec.global_signal_max * unit(site_rng);
    std::vector<std::vector<double>> slope(nm, std::vector<double>(d, 0.0));
    for (std::size_t m = 0; m < nm; ++m) {
      for (std::size_t k = 0; k < d; ++k) {
        const double common = k < spec.modules[m].covariate_effect.size() ? spec.modules[m].covariate_effect[k] : 0.0;
        slope[m][k] = common + spec.covariate_site_spread * (2.0 * unit(site_rng) - 1.0);
      }
    }

    const std::size_t T = spec.time_points[s % spec.time_points.size()];
    const std::uint64_t site_seed = mix_seed(spec.seed, s + 1);
    for (std::size_t i = 0; i < 2 * spec.per_class; ++i) {
      std::mt19937_64 rng(mix_seed(site_seed, i));
      std::normal_distribution<double> normal(0.0, 1.0);

      dataset::SubjectRecord rec;
      rec.subject_id = subject_name(s, i);
      rec.site_id = "site" + std::to_string(s);
      rec.label = static_cast<int>(i % 2);
      rec.covariates.resize(static_cast<Eigen::Index>(d));
      for (std::size_t k = 0; k < d; ++k)
        rec.covariates[static_cast<Eigen::Index>(k)] = spec.covariate_site_shift * site_offset(s, S) + normal(rng);

      std::vector<double> base(nm), amplitude(nm), phase(nm);
      for (std::size_t m = 0; m < nm; ++m) {
        const auto& mod = spec.modules[m];
        base[m] = rec.label == 1 ? mod.case_ : mod.control;
        amplitude[m] = rec.label == 1 ? mod.case_oscillation : mod.control_oscillation;
        for (std::size_t k = 0; k < d; ++k) base[m] += slope[m][k] * rec.covariates[static_cast<Eigen::Index>(k)];
        phase[m] = two_pi * unit(rng);
      }

      rec.bold.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(P));
      std::vector<double> w(nm), z(nm), loading(P);
      for (std::size_t t = 0; t < T; ++t) {
        std::fill(loading.begin(), loading.end(), 0.0);
        for (std::size_t m = 0; m < nm; ++m) {
          const double wave = std::sin(two_pi * static_cast<double>(t) / spec.oscillation_period + phase[m]);
          w[m] = std::clamp(base[m] + amplitude[m] * wave, 0.0, cap[m]);
          z[m] = normal(rng);
          for (auto k : spec.modules[m].rois) loading[k] += w[m];
        }
        const double global = normal(rng);
        for (std::size_t k = 0; k < P; ++k) {
          double x = std::sqrt(std::max(0.0, 1.0 - loading[k])) * normal(rng);
          for (std::size_t m = 0; m < nm; ++m) {
            const auto& r = spec.modules[m].rois;
            if (std::find(r.begin(), r.end(), k) != r.end()) x += std::sqrt(w[m]) * z[m];
          }
          rec.bold(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) =
              std::sqrt(1.0 - g) * x + std::sqrt(g) * global;
        }
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace xsite::synth
