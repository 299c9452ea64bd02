#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "xsite/scaffold.hpp"
#include "xsite/synth.hpp"

using namespace xsite;
using namespace xsite::scaffold;

namespace {

std::vector<SiteContrast> contrasts_from(const std::vector<std::vector<double>>& per_site) {
  std::vector<SiteContrast> out;
  for (std::size_t s = 0; s < per_site.size(); ++s) out.push_back({"s" + std::to_string(s), per_site[s], 5, 5});
  return out;
}

ScaffoldStatistics stats_of(std::vector<double> consensus, std::vector<double> kappa, std::vector<double> pi) {
  ScaffoldStatistics s;
  s.consensus = std::move(consensus);
  s.kappa = std::move(kappa);
  s.pi = std::move(pi);
  return s;
}

std::vector<MarginSite> margin_sites(const synth::SynthEdgeDataset& data) {
  std::vector<MarginSite> out;
  for (const auto& s : data.sites)
    out.push_back({s.site_id, s.fc, s.covariates, s.labels, s.oracle_intercept, s.oracle_gamma});
  return out;
}

deconfound::DeconfounderBank oracle_bank(const synth::SynthEdgeDataset& data) {
  deconfound::DeconfounderBank bank;
  for (const auto& s : data.sites)
    bank.add({s.site_id, s.oracle_intercept, s.oracle_gamma, Vector::Ones(s.oracle_intercept.size()), s.fc.size(), 0, 0});
  bank.aggregate();
  return bank;
}

}  // namespace

TEST_CASE("robust mean examples") {
  CHECK(robust_mean(std::vector<double>{1, 2, 3}) == doctest::Approx(2.0).epsilon(1e-14));
  const std::vector<double> skewed{0, 0, 0, 100};
  CHECK(robust_mean(skewed) < 5.0);
  CHECK(robust_mean(std::vector<double>{-4.25}) == -4.25);
  CHECK_THROWS_AS(robust_mean(std::vector<double>{}), ContractError);
  // Three clean points pull with slope 3, the outlier with constant delta: mu = delta / 3.
  CHECK(robust_mean(skewed, DeltaPolicy::fixed(1.0)) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(std::abs(robust_mean(skewed, DeltaPolicy::fixed(1.0)) - oracle::golden_location(skewed, 1.0)) < 1e-6);
}

TEST_CASE("exact Huber location agrees with golden-section search") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 2 + rep % 17;
    std::vector<double> x(n);
    for (auto& v : x) v = unit(rng) < 0.15 ? 30.0 * normal(rng) : normal(rng);
    const double delta = 0.05 + 2.0 * unit(rng);
    const double mu = huber_location(x, delta);
    const double ref = oracle::golden_location(x, delta);
    // Compare objective values: both can sit anywhere in a flat minimizer interval.
    double fa = 0.0, fb = 0.0;
    for (double v : x) {
      fa += oracle::huber(v - mu, delta);
      fb += oracle::huber(v - ref, delta);
    }
    CHECK(fa <= fb + 1e-9);
  }
}

TEST_CASE("site contrast examples") {
  std::vector<std::vector<double>> r{{1.0, 0.3}, {1.0, 0.3}, {0.0, 0.3}, {0.0, 0.3}};
  const std::vector<int> labels{1, 1, 0, 0};
  const auto c = site_contrast("a", r, labels);
  CHECK(c.values[0] == 1.0);
  CHECK(c.values[1] == 0.0);
  CHECK(c.n_case == 2);
  CHECK(c.n_control == 2);
  CHECK_THROWS_AS(site_contrast("b", r, std::vector<int>{1, 1, 1, 1}), ContractError);
  CHECK_THROWS_AS(site_contrast("b", r, std::vector<int>{1, 0}), SchemaError);
}

TEST_CASE("planted contrast of 0.4 is recovered within 0.05") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<std::vector<double>> r;
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) {
    labels.push_back(i < 50 ? 1 : 0);
    r.push_back({(i < 50 ? 0.4 : 0.0) + noise(rng), noise(rng)});
  }
  const auto c = site_contrast("a", r, labels);
  CHECK(std::abs(c.values[0] - 0.4) < 0.05);
  CHECK(std::abs(c.values[1]) < 0.05);
}

TEST_CASE("consensus median examples") {
  const auto odd = consensus_median(contrasts_from({{1.0}, {2.0}, {10.0}}));
  CHECK(odd[0] == 2.0);
  const auto even = consensus_median(contrasts_from({{1.0}, {3.0}}));
  CHECK(even[0] == 2.0);
  CHECK_THROWS_AS(consensus_median(std::vector<SiteContrast>{}), ContractError);
}

TEST_CASE("consensus median minimizes the L1 objective against a grid search") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t sites = 1 + rep % 7;
    std::vector<std::vector<double>> vals(sites, std::vector<double>(3));
    for (auto& v : vals)
      for (auto& x : v) x = normal(rng);
    const auto med = consensus_median(contrasts_from(vals));
    for (std::size_t j = 0; j < 3; ++j) {
      std::vector<double> column;
      for (const auto& v : vals) column.push_back(v[j]);
      double best = std::numeric_limits<double>::infinity();
      for (int g = -40000; g <= 40000; ++g) best = std::min(best, oracle::l1_cost(column, g * 1e-4));
      CHECK(oracle::l1_cost(column, med[j]) <= best + 1e-12);
      CHECK(med[j] == doctest::Approx(oracle::median(column)).epsilon(1e-15));
    }
  }
}

TEST_CASE("weighted median rules") {
  const std::vector<double> v{3.0, 1.0, 2.0};
  CHECK(weighted_median(v, std::vector<double>{1, 1, 1}) == 2.0);
  CHECK(weighted_median(v, std::vector<double>{0, 3, 0}) == 1.0);
  // Cumulative weight hits exactly half at 1; midpoint with the next weighted value 3.
  CHECK(weighted_median(v, std::vector<double>{1, 1, 0}) == 2.0);
  CHECK(weighted_median(v, std::vector<double>{2, 1, 1}) == 2.5);
  CHECK_THROWS_AS(weighted_median(v, std::vector<double>{0, 0, 0}), ContractError);
  CHECK_THROWS_AS(weighted_median(v, std::vector<double>{1, 1}), ContractError);
}

TEST_CASE("sign consistency examples") {
  const std::vector<double> plus{1.0};
  CHECK(sign_consistency(contrasts_from({{0.2}, {0.5}, {3.0}}), plus)[0] == 1.0);
  CHECK(sign_consistency(contrasts_from({{0.2}, {0.5}, {-3.0}}), plus)[0] == doctest::Approx(2.0 / 3.0));
  CHECK(sign_consistency(contrasts_from({{0.0}}), plus)[0] == 0.0);
  CHECK(sgn(0.0) == 0);
}

TEST_CASE("bootstrap stability examples and determinism") {
  const auto same = contrasts_from({{0.3, -0.1}, {0.3, -0.1}, {0.3, -0.1}});
  const auto cons = consensus_median(same);
  for (double p : bootstrap_stability(same, cons, 200, 5)) CHECK(p == 1.0);
  const auto single = contrasts_from({{0.7, -0.2}});
  for (double p : bootstrap_stability(single, consensus_median(single), 50, 9)) CHECK(p == 1.0);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.1, 1.0);
  std::vector<std::vector<double>> vals(6, std::vector<double>(20));
  for (auto& v : vals)
    for (auto& x : v) x = normal(rng);
  const auto mixed = contrasts_from(vals);
  const auto c = consensus_median(mixed);
  const auto a = bootstrap_stability(mixed, c, 300, 42, 1);
  const auto b = bootstrap_stability(mixed, c, 300, 42, 4);
  CHECK(a == b);
  CHECK(a == bootstrap_stability(mixed, c, 300, 42, 1));
  CHECK(a != bootstrap_stability(mixed, c, 300, 43, 1));
}

TEST_CASE("bootstrap draws are counter-based multinomial resamples") {
  const auto w10 = bootstrap_weights(5, 10, 77);
  const auto w3 = bootstrap_weights(5, 3, 77);
  for (std::size_t b = 0; b < 3; ++b) CHECK(w10[b] == w3[b]);
  for (const auto& row : w10) {
    REQUIRE(row.size() == 5);
    double total = 0.0;
    for (double x : row) {
      CHECK(x == std::floor(x));
      total += x;
    }
    CHECK(total == 5.0);
  }
}

TEST_CASE("kappa and pi are invariant to a common positive rescaling") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.05, 1.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> vals(5, std::vector<double>(15));
    for (auto& v : vals)
      for (auto& x : v) x = normal(rng);
    auto scaled = vals;
    const double k = scale(rng);
    for (auto& v : scaled)
      for (auto& x : v) x *= k;
    const auto a = compute_statistics(contrasts_from(vals), 100, 3);
    const auto b = compute_statistics(contrasts_from(scaled), 100, 3);
    CHECK(a.kappa == b.kappa);
    CHECK(a.pi == b.pi);
  }
}

TEST_CASE("percentile uses linear interpolation") {
  CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
  CHECK(percentile({1, 2, 3, 4}, 50) == 2.5);
  CHECK(percentile({4, 1}, 100) == 4.0);
  CHECK(percentile({0, 10}, 80) == doctest::Approx(8.0));
  CHECK_THROWS_AS(percentile({}, 50), ContractError);
  CHECK_THROWS_AS(percentile({1}, 101), ContractError);
}

TEST_CASE("selection is a conjunction with a strict contrast threshold") {
  // P = 3 gives three edges.
  const auto stats = stats_of({1.0, 0.1, -0.9}, {1.0, 1.0, 0.5}, {1.0, 1.0, 1.0});
  const Thresholds t{0.5, 0.75, 0.7};
  const auto s = extract_scaffold(stats, t, 3);
  CHECK(s.selected == std::vector<std::size_t>{0});
  CHECK(s.contains(0));
  CHECK_FALSE(s.contains(2));
  CHECK(select_edges(stats, {1.0, 0.0, 0.0}).empty());
  CHECK(select_edges(stats, {0.9, 0.0, 0.0}) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(extract_scaffold(stats, {2.0, 0.75, 0.7}, 3), ContractError);
  CHECK_THROWS_AS(extract_scaffold(stats, {0.5, 1.5, 0.7}, 3), ContractError);
  CHECK_THROWS_AS(extract_scaffold(stats, t, 4), SchemaError);
}

TEST_CASE("raising any threshold never adds edges") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    ScaffoldStatistics st;
    for (int j = 0; j < 30; ++j) {
      st.consensus.push_back(normal(rng));
      st.kappa.push_back(std::round(unit(rng) * 5) / 5);
      st.pi.push_back(unit(rng));
    }
    const Thresholds base{unit(rng), unit(rng), unit(rng)};
    const auto sel = select_edges(st, base);
    for (int which = 0; which < 3; ++which) {
      Thresholds up = base;
      (which == 0 ? up.tau : which == 1 ? up.eta : up.zeta) += 0.2 * unit(rng);
      for (std::size_t j : select_edges(st, up)) CHECK(std::find(sel.begin(), sel.end(), j) != sel.end());
    }
  }
}

TEST_CASE("default thresholds take the tau percentile of |d_com|") {
  auto stats = stats_of({-5, 1, 2, 3, 4, 0}, std::vector<double>(6, 1.0), std::vector<double>(6, 1.0));
  const auto t = default_thresholds(stats, 80.0);
  CHECK(t.tau == doctest::Approx(4.0));
  CHECK(t.eta == 0.75);
  CHECK(t.zeta == 0.70);
  CHECK(select_edges(stats, t) == std::vector<std::size_t>{0});
}

TEST_CASE("margin check with the oracle as the fitted bank agrees everywhere") {
  synth::SynthEdgeSpec spec;
  spec.per_class = 10;
  spec.edges = 15;
  spec.seed = 7;
  const auto data = synth::synth_edge_dataset(spec);
  const auto sites = margin_sites(data);
  MarginCheckConfig cfg;
  cfg.thresholds = {0.05, 0.75, 0.7};
  cfg.bootstrap_draws = 200;
  cfg.empirical_seed = cfg.oracle_seed = 3;
  cfg.delta = DeltaPolicy::fixed(1.345 * spec.noise);
  const auto report = margin_stability_check(sites, oracle_bank(data), cfg);
  for (double d : report.perturbation) CHECK(d == 0.0);
  for (bool a : report.agreement) CHECK(a);
  CHECK(report.violations() == 0);

  cfg.oracle_seed = 4;
  CHECK_THROWS_AS(margin_stability_check(sites, oracle_bank(data), cfg), ContractError);
}

TEST_CASE("a 1e-6 intercept perturbation flips no decision") {
  synth::SynthEdgeSpec spec;
  spec.per_class = 15;
  spec.edges = 15;
  spec.seed = 8;
  const auto data = synth::synth_edge_dataset(spec);
  auto bank = oracle_bank(data);
  auto moved = bank.site("site1");
  moved.intercept.array() += 1e-6;
  bank.add(moved);
  bank.aggregate();
  MarginCheckConfig cfg;
  cfg.thresholds = {0.05, 0.75, 0.7};
  cfg.bootstrap_draws = 200;
  cfg.delta = DeltaPolicy::fixed(1.345 * spec.noise);
  const auto report = margin_stability_check(margin_sites(data), bank, cfg);
  for (double d : report.perturbation) CHECK(d == doctest::Approx(1e-6).epsilon(1e-6));
  for (bool a : report.agreement) CHECK(a);
  CHECK(report.covered() > 0);
}

TEST_CASE("fitted deconfounders respect the margin guarantee") {
  synth::SynthEdgeSpec spec;
  spec.per_class = 12;
  spec.edges = 20;
  spec.confounded_edges = 20;
  spec.signal_edges = 10;
  spec.seed = 9;
  const auto data = synth::synth_edge_dataset(spec);
  const auto bank = deconfound::fit_bank(data.site_data());
  MarginCheckConfig cfg;
  cfg.thresholds = {0.05, 0.75, 0.7};
  cfg.bootstrap_draws = 300;
  cfg.delta = DeltaPolicy::fixed(1.345 * spec.noise);
  const auto report = margin_stability_check(margin_sites(data), bank, cfg, 2);
  CHECK(report.violations() == 0);
}
