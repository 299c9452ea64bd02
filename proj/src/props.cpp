#include "xsite/props.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "xsite/deconfound.hpp"
#include "xsite/linegraph.hpp"
#include "xsite/model.hpp"
#include "xsite/scaffold.hpp"

namespace xsite::harness {

ResidualBiasResult residual_bias_check(const synth::SynthEdgeSpec& spec, std::size_t workers) {
  const auto data = synth::synth_edge_dataset(spec);
  const auto sites = data.site_data();
  const auto bank = deconfound::fit_bank(sites, {}, workers);
  const auto pooled = deconfound::fit_pooled_deconfounder(sites, {}, workers);

  ResidualBiasResult out;
  out.planted_edges = spec.confounded_edges;
  double pooled_sum = 0.0, site_sum = 0.0;
  std::size_t terms = 0;
  for (const auto& s : sites) {
    const auto& dec = bank.site(s.site_id);
    const std::size_t n = s.fc.size();
    std::vector<std::vector<double>> r_pool(n), r_site(n);
    for (std::size_t i = 0; i < n; ++i) {
      r_pool[i] = deconfound::residualize_with(s.fc[i], s.covariates[i], pooled.intercept, pooled.gamma);
      r_site[i] = deconfound::residualize_with(s.fc[i], s.covariates[i], dec.intercept, dec.gamma);
    }
    for (std::size_t j = 0; j < spec.confounded_edges; ++j) {
      std::vector<double> a(n), b(n), q(n);
      for (std::size_t k = 0; k < spec.covariates; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
          a[i] = r_pool[i][j];
          b[i] = r_site[i][j];
          q[i] = s.covariates[i][static_cast<Eigen::Index>(k)];
        }
        pooled_sum += std::abs(dataset::pearson(a, q));
        site_sum += std::abs(dataset::pearson(b, q));
        ++terms;
      }
    }
  }
  if (terms > 0) {
    out.pooled = pooled_sum / static_cast<double>(terms);
    out.site_aware = site_sum / static_cast<double>(terms);
  }
  return out;
}

namespace {

struct TrialCounts {
  std::size_t edges = 0, covered = 0, violations = 0, disagreements = 0;
};

TrialCounts margin_trial(std::uint64_t trial_seed, std::size_t draws) {
  std::mt19937_64 rng(trial_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  synth::SynthEdgeSpec spec;
  spec.sites = pick(3, 7);
  spec.per_class = pick(6, 16);
  spec.covariates = 2;
  spec.edges = 24;
  spec.confounded_edges = 24;
  spec.signal_edges = 12;
  spec.signal = 0.05 + 0.35 * unit(rng);
  spec.noise = 0.02 + 0.18 * unit(rng);
  spec.min_site_gap = std::min(0.5, 2.0 / static_cast<double>(spec.sites - 1));
  spec.seed = rng();
  const auto data = synth::synth_edge_dataset(spec);

  // Fitted nuisance = planted + uniform noise at a random log scale.
  const double scale = std::pow(10.0, -4.0 + 3.5 * unit(rng));
  deconfound::DeconfounderBank fitted;
  std::vector<scaffold::MarginSite> sites;
  for (const auto& s : data.sites) {
    deconfound::SiteDeconfounder dec;
    dec.site_id = s.site_id;
    dec.subjects = s.fc.size();
    dec.intercept = s.oracle_intercept;
    dec.gamma = s.oracle_gamma;
    for (Eigen::Index j = 0; j < dec.intercept.size(); ++j) dec.intercept[j] += scale * (2.0 * unit(rng) - 1.0);
    for (Eigen::Index k = 0; k < dec.gamma.size(); ++k) dec.gamma.data()[k] += scale * (2.0 * unit(rng) - 1.0);
    dec.delta = Vector::Zero(dec.intercept.size());
    fitted.add(std::move(dec));
    sites.push_back({s.site_id, s.fc, s.covariates, s.labels, s.oracle_intercept, s.oracle_gamma});
  }

  scaffold::MarginCheckConfig cfg;
  cfg.thresholds.tau = 0.3 * unit(rng);
  cfg.thresholds.eta = unit(rng) < 0.5 ? 0.6 : 0.75;
  cfg.thresholds.zeta = 0.5 + 0.4 * unit(rng);
  cfg.bootstrap_draws = draws;
  cfg.empirical_seed = cfg.oracle_seed = rng();
  cfg.delta = scaffold::DeltaPolicy::fixed(1.345 * spec.noise);

  const auto report = scaffold::margin_stability_check(sites, fitted, cfg, 1);
  TrialCounts c;
  c.edges = report.margin.size();
  c.covered = report.covered();
  c.violations = report.violations();
  for (std::size_t j = 0; j < c.edges; ++j)
    if (!report.agreement[j] && !(report.perturbation[j] < report.margin[j])) ++c.disagreements;
  return c;
}

}  // namespace

MarginTrialsResult margin_trials(std::size_t trials, std::uint64_t seed, std::size_t bootstrap_draws,
                                 std::size_t workers) {
  std::vector<TrialCounts> counts(trials);
  parallel_for(trials, workers, [&](std::size_t t) { counts[t] = margin_trial(mix_seed(seed, t), bootstrap_draws); });
  MarginTrialsResult out;
  out.trials = trials;
  for (const auto& c : counts) {
    out.edges += c.edges;
    out.covered += c.covered;
    out.violations += c.violations;
    out.disagreements += c.disagreements;
  }
  return out;
}

GradientSuiteResult gradient_suite(std::size_t seeds, std::size_t nodes, std::size_t hidden, std::uint64_t seed) {
  GradientSuiteResult out;
  out.seeds = seeds;
  for (std::size_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(mix_seed(seed, s));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Random distinct ROI pairs over a handful of ROIs.
    const std::size_t rois = nodes + 1;
    std::vector<linegraph::RoiPair> all;
    for (std::size_t u = 0; u < rois; ++u)
      for (std::size_t v = u + 1; v < rois; ++v) all.emplace_back(u, v);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(nodes);
    std::vector<double> magnitude(nodes);
    for (auto& a : magnitude) a = unit(rng);
    const auto scores = linegraph::prior_scores(magnitude);
    const auto graph = linegraph::normalize_propagation(linegraph::build_adjacency(all, scores.mu0));

    model::ModelConfig mc;
    mc.hidden = hidden;
    mc.layers = 2;
    mc.lambda = 0.5 + unit(rng);
    mc.tau = 0.5 + 1.5 * unit(rng);
    mc.seed = rng();
    const model::GatedGnnModel gnn(mc);

    model::Batch batch;
    for (std::size_t i = 0; i < 4; ++i) {
      Matrix x(static_cast<Eigen::Index>(nodes), 3);
      for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = normal(rng);
      batch.features.push_back(x);
      batch.labels.push_back(static_cast<int>(i % 2));
    }
    const model::Objective objective{1.0 + 3.0 * unit(rng), 0.1};
    const auto report = model::grad_check(gnn, batch, {graph.propagation, scores.mu0}, objective);
    out.per_seed.push_back(report.max_relative_error);
    out.max_relative_error = std::max(out.max_relative_error, report.max_relative_error);
  }
  return out;
}

}  // namespace xsite::harness
