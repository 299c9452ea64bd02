#include "xsite/scaffold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace xsite::scaffold {

namespace {

double huber_psi_sum(std::span<const double> values, double mu, double delta) {
  double total = 0.0;
  for (double x : values) total += std::clamp(x - mu, -delta, delta);
  return total;
}

}  // namespace

double huber_location(std::span<const double> values, double delta) {
  if (values.empty()) throw ContractError("huber_location: empty input");
  if (!(delta > 0.0)) throw ContractError("huber_location: delta must be positive");
  if (values.size() == 1) return values.front();

  // Psi(mu) = sum clamp(x_i - mu, -delta, delta) is non-increasing and piecewise
  // linear with kinks at x_i +- delta; locate its zero set between kinks.
  std::vector<double> kinks;
  kinks.reserve(2 * values.size());
  for (double x : values) {
    kinks.push_back(x - delta);
    kinks.push_back(x + delta);
  }
  std::sort(kinks.begin(), kinks.end());
  const auto eval = [&](std::size_t k) { return huber_psi_sum(values, kinks[k], delta); };

  // Psi(first kink) = n * delta > 0 and Psi(last kink) = -n * delta < 0. Bisect for
  // the kink pairs bracketing the left and right ends of the zero set.
  std::size_t a = 0;
  std::size_t b = kinks.size() - 1;
  while (b - a > 1) {
    const std::size_t mid = a + (b - a) / 2;
    (eval(mid) > 0.0 ? a : b) = mid;
  }
  const double pa = eval(a);
  const double pb = eval(a + 1);
  const double left = kinks[a] + pa * (kinks[a + 1] - kinks[a]) / (pa - pb);

  a = 0;
  b = kinks.size() - 1;
  while (b - a > 1) {
    const std::size_t mid = a + (b - a) / 2;
    (eval(mid) < 0.0 ? b : a) = mid;
  }
  const double qa = eval(b - 1);
  const double qb = eval(b);
  const double right = kinks[b - 1] + qa * (kinks[b] - kinks[b - 1]) / (qa - qb);
  return 0.5 * (left + right);
}

double robust_mean(std::span<const double> values, const DeltaPolicy& policy) {
  if (values.empty()) throw ContractError("robust_mean: empty input");
  if (policy.kind == DeltaPolicy::Kind::fixed) return huber_location(values, policy.value);
  const double delta = policy.tuning * deconfound::mad_scale(values);
  if (!(delta > 0.0)) return median(std::vector<double>(values.begin(), values.end()));
  return huber_location(values, delta);
}

SiteContrast site_contrast(std::string site_id, std::span<const std::vector<double>> residuals,
                           std::span<const int> labels, const DeltaPolicy& policy) {
  if (residuals.size() != labels.size()) throw SchemaError("site_contrast: one label per residual");
  SiteContrast out;
  out.site_id = std::move(site_id);
  for (int y : labels) (y == 1 ? out.n_case : out.n_control)++;
  if (out.n_case == 0 || out.n_control == 0) {
    throw ContractError("site " + out.site_id + " lacks one of the two classes");
  }
  const std::size_t m = residuals.front().size();
  out.values.resize(m);
  std::vector<double> cases(out.n_case);
  std::vector<double> controls(out.n_control);
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t a = 0;
    std::size_t b = 0;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
      if (labels[i] == 1) cases[a++] = residuals[i][j]; else controls[b++] = residuals[i][j];
    }
    out.values[j] = robust_mean(cases, policy) - robust_mean(controls, policy);
  }
  return out;
}

double weighted_median(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size() || values.empty()) {
    throw ContractError("weighted_median: need matching, nonempty inputs");
  }
  std::vector<std::size_t> order;
  order.reserve(values.size());
  double total = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (weights[k] > 0.0) {
      order.push_back(k);
      total += weights[k];
    }
  }
  if (order.empty()) throw ContractError("weighted_median: all weights are zero");
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double half = 0.5 * total;
  double cumulative = 0.0;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    cumulative += weights[order[pos]];
    if (cumulative == half && pos + 1 < order.size()) {
      return 0.5 * (values[order[pos]] + values[order[pos + 1]]);
    }
    if (cumulative >= half) return values[order[pos]];
  }
  return values[order.back()];
}

std::vector<double> consensus_median(std::span<const SiteContrast> contrasts) {
  if (contrasts.empty()) throw ContractError("consensus_median: no site contrasts");
  const std::size_t m = contrasts.front().values.size();
  const std::vector<double> unit(contrasts.size(), 1.0);
  std::vector<double> column(contrasts.size());
  std::vector<double> out(m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t e = 0; e < contrasts.size(); ++e) column[e] = contrasts[e].values.at(j);
    out[j] = weighted_median(column, unit);
  }
  return out;
}

std::vector<double> sign_consistency(std::span<const SiteContrast> contrasts, std::span<const double> consensus) {
  if (contrasts.empty()) throw ContractError("sign_consistency: no site contrasts");
  std::vector<double> kappa(consensus.size(), 0.0);
  for (const auto& c : contrasts) {
    if (c.values.size() != consensus.size()) throw SchemaError("sign_consistency: edge count mismatch");
    for (std::size_t j = 0; j < consensus.size(); ++j) {
      if (sgn(c.values[j]) == sgn(consensus[j])) kappa[j] += 1.0;
    }
  }
  for (auto& k : kappa) k /= static_cast<double>(contrasts.size());
  return kappa;
}

std::vector<std::vector<double>> bootstrap_weights(std::size_t sites, std::size_t draws, std::uint64_t seed) {
  std::vector<std::vector<double>> out(draws, std::vector<double>(sites, 0.0));
  for (std::size_t b = 0; b < draws; ++b) {
    std::mt19937_64 rng(mix_seed(seed, b));
    std::uniform_int_distribution<std::size_t> pick(0, sites - 1);
    for (std::size_t k = 0; k < sites; ++k) out[b][pick(rng)] += 1.0;
  }
  return out;
}

BootstrapResult bootstrap_consensus(std::span<const SiteContrast> contrasts, std::span<const double> consensus,
                                    std::size_t draws, std::uint64_t seed, std::size_t workers) {
  if (draws == 0) throw ContractError("bootstrap: need at least one draw");
  if (contrasts.empty()) throw ContractError("bootstrap: no site contrasts");
  const std::size_t n = contrasts.size();
  const std::size_t m = consensus.size();
  const auto weights = bootstrap_weights(n, draws, seed);

  BootstrapResult out;
  out.stability.assign(m, 0.0);
  out.min_abs_consensus.assign(m, std::numeric_limits<double>::infinity());
  parallel_for(m, workers, [&](std::size_t j) {
    std::vector<double> column(n);
    for (std::size_t e = 0; e < n; ++e) column[e] = contrasts[e].values.at(j);
    std::size_t hits = 0;
    double smallest = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < draws; ++b) {
      const double value = weighted_median(column, weights[b]);
      if (sgn(value) == sgn(consensus[j])) ++hits;
      smallest = std::min(smallest, std::abs(value));
    }
    out.stability[j] = static_cast<double>(hits) / static_cast<double>(draws);
    out.min_abs_consensus[j] = smallest;
  });
  return out;
}

std::vector<double> bootstrap_stability(std::span<const SiteContrast> contrasts, std::span<const double> consensus,
                                        std::size_t draws, std::uint64_t seed, std::size_t workers) {
  return bootstrap_consensus(contrasts, consensus, draws, seed, workers).stability;
}

ScaffoldStatistics compute_statistics(std::span<const SiteContrast> contrasts, std::size_t draws,
                                      std::uint64_t seed, std::size_t workers) {
  ScaffoldStatistics stats;
  stats.consensus = consensus_median(contrasts);
  stats.kappa = sign_consistency(contrasts, stats.consensus);
  stats.pi = bootstrap_stability(contrasts, stats.consensus, draws, seed, workers);
  stats.bootstrap_draws = draws;
  stats.seed = seed;
  return stats;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile of empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw ContractError("percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto below = static_cast<std::size_t>(std::floor(pos));
  const std::size_t above = std::min(below + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(below);
  return values[below] + frac * (values[above] - values[below]);
}

Thresholds default_thresholds(const ScaffoldStatistics& stats, double tau_percentile, double eta, double zeta) {
  std::vector<double> magnitude(stats.consensus.size());
  std::transform(stats.consensus.begin(), stats.consensus.end(), magnitude.begin(),
                 [](double v) { return std::abs(v); });
  return {percentile(std::move(magnitude), tau_percentile), eta, zeta};
}

std::vector<std::size_t> select_edges(const ScaffoldStatistics& stats, const Thresholds& t) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < stats.consensus.size(); ++j) {
    if (std::abs(stats.consensus[j]) > t.tau && stats.kappa[j] >= t.eta && stats.pi[j] >= t.zeta) out.push_back(j);
  }
  return out;
}

bool Scaffold::contains(std::size_t edge) const {
  return std::binary_search(selected.begin(), selected.end(), edge);
}

Scaffold extract_scaffold(const ScaffoldStatistics& stats, const Thresholds& thresholds, std::size_t rois) {
  if (!std::isfinite(thresholds.tau) || !(thresholds.eta >= 0.0 && thresholds.eta <= 1.0) ||
      !(thresholds.zeta >= 0.0 && thresholds.zeta <= 1.0)) {
    throw ContractError("extract_scaffold: tau must be finite, eta and zeta in [0, 1]");
  }
  if (rois * (rois - 1) / 2 != stats.consensus.size()) {
    throw SchemaError("extract_scaffold: statistics do not match the ROI count");
  }
  Scaffold s{rois, select_edges(stats, thresholds), thresholds, stats};
  if (s.selected.empty()) {
    throw ContractError("scaffold is empty; relax tau_E, eta_E or zeta_E");
  }
  return s;
}

std::size_t MarginReport::covered() const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < perturbation.size(); ++j) n += perturbation[j] < margin[j];
  return n;
}

std::size_t MarginReport::violations() const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < perturbation.size(); ++j) n += (perturbation[j] < margin[j]) && !agreement[j];
  return n;
}

MarginReport margin_stability_check(std::span<const MarginSite> sites, const deconfound::DeconfounderBank& fitted,
                                    const MarginCheckConfig& config, std::size_t workers) {
  if (config.empirical_seed != config.oracle_seed) {
    throw ContractError("margin_stability_check: empirical and oracle bootstrap must share one seed");
  }
  if (sites.empty()) throw ContractError("margin_stability_check: no sites");
  const std::size_t m = sites.front().fc.front().size();

  std::vector<SiteContrast> empirical;
  std::vector<SiteContrast> oracle;
  std::vector<double> perturbation(m, 0.0);
  for (const auto& site : sites) {
    const auto& dec = fitted.site(site.site_id);
    std::vector<std::vector<double>> res_hat;
    std::vector<std::vector<double>> res_star;
    for (std::size_t i = 0; i < site.fc.size(); ++i) {
      res_hat.push_back(deconfound::residualize_with(site.fc[i], site.covariates[i], dec.intercept, dec.gamma));
      res_star.push_back(
          deconfound::residualize_with(site.fc[i], site.covariates[i], site.oracle_intercept, site.oracle_gamma));
    }
    const bool has_case = std::count(site.labels.begin(), site.labels.end(), 1) > 0;
    const bool has_control = std::count(site.labels.begin(), site.labels.end(), 0) > 0;
    if (!has_case || !has_control) continue;
    empirical.push_back(site_contrast(site.site_id, res_hat, site.labels, config.delta));
    oracle.push_back(site_contrast(site.site_id, res_star, site.labels, config.delta));

    // Sum over classes of the largest per-subject nuisance error.
    const Vector db = dec.intercept - site.oracle_intercept;
    const Matrix dg = dec.gamma - site.oracle_gamma;
    for (std::size_t j = 0; j < m; ++j) {
      double sup[2] = {0.0, 0.0};
      const auto col = static_cast<Eigen::Index>(j);
      for (std::size_t i = 0; i < site.fc.size(); ++i) {
        const double err = std::abs(db[col] + site.covariates[i].dot(dg.col(col)));
        auto& slot = sup[site.labels[i] == 1 ? 1 : 0];
        slot = std::max(slot, err);
      }
      perturbation[j] = std::max(perturbation[j], sup[0] + sup[1]);
    }
  }
  if (empirical.empty()) throw ContractError("margin_stability_check: no site has both classes");

  const auto stats_hat = compute_statistics(empirical, config.bootstrap_draws, config.empirical_seed, workers);
  ScaffoldStatistics stats_star;
  stats_star.consensus = consensus_median(oracle);
  stats_star.kappa = sign_consistency(oracle, stats_star.consensus);
  const auto boot_star =
      bootstrap_consensus(oracle, stats_star.consensus, config.bootstrap_draws, config.oracle_seed, workers);
  stats_star.pi = boot_star.stability;
  stats_star.bootstrap_draws = config.bootstrap_draws;
  stats_star.seed = config.oracle_seed;

  MarginReport report;
  report.perturbation = std::move(perturbation);
  report.margin.resize(m);
  report.empirical.assign(m, false);
  report.oracle.assign(m, false);
  report.agreement.resize(m);
  for (std::size_t j : select_edges(stats_hat, config.thresholds)) report.empirical[j] = true;
  for (std::size_t j : select_edges(stats_star, config.thresholds)) report.oracle[j] = true;
  for (std::size_t j = 0; j < m; ++j) {
    const double com = std::abs(stats_star.consensus[j]);
    double margin = std::min({com, std::abs(com - config.thresholds.tau), boot_star.min_abs_consensus[j]});
    for (const auto& c : oracle) margin = std::min(margin, std::abs(c.values[j]));
    report.margin[j] = margin;
    report.agreement[j] = report.empirical[j] == report.oracle[j];
  }
  return report;
}

}  // namespace xsite::scaffold
