// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <thread>

#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xsite/deconfound.hpp"
#include "xsite/linegraph.hpp"
#include "xsite/model.hpp"
#include "xsite/pipeline.hpp"
#include "xsite/props.hpp"
#include "xsite/serialize.hpp"
#include "xsite/synth.hpp"
#include "xsite/transient.hpp"

using namespace xsite;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

void report(int id, bool ok, const std::string& what) {
  if (!ok) ++failures;
  std::printf("[%s] %d. %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::size_t workers() { return std::max(2u, std::min(8u, std::thread::hardware_concurrency())); }

// 1. Pooled residuals stay correlated with covariates, site-aware residuals do not.
void residual_bias() {
  const auto t0 = clock_type::now();
  synth::SynthEdgeSpec spec;
  spec.sites = 4;
  spec.covariates = 2;
  spec.per_class = 250;
  spec.noise = 0.05;
  spec.min_site_gap = 0.5;
  spec.seed = 2024;
  const auto data = synth::synth_edge_dataset(spec);
  const auto sites = data.site_data();
  const auto bank = deconfound::fit_bank(sites, {}, workers());
  const auto pooled = deconfound::fit_pooled_deconfounder(sites, {}, workers());

  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < spec.confounded_edges; ++j)
    for (Eigen::Index k = 0; k < 2; ++k)
      for (std::size_t a = 0; a < spec.sites; ++a)
        for (std::size_t b = a + 1; b < spec.sites; ++b)
          gap = std::min(gap, std::abs(data.sites[a].oracle_gamma(k, static_cast<Eigen::Index>(j)) -
                                       data.sites[b].oracle_gamma(k, static_cast<Eigen::Index>(j))));

  double site_sum = 0.0, pooled_sum = 0.0;
  int terms = 0;
  for (const auto& s : data.sites) {
    const auto& dec = bank.site(s.site_id);
    for (std::size_t j = 0; j < spec.confounded_edges; ++j) {
      const auto e = static_cast<Eigen::Index>(j);
      for (Eigen::Index k = 0; k < 2; ++k) {
        std::vector<double> r_site, r_pool, q;
        for (std::size_t i = 0; i < s.fc.size(); ++i) {
          r_site.push_back(s.fc[i][j] - dec.intercept[e] - s.covariates[i].dot(dec.gamma.col(e)));
          r_pool.push_back(s.fc[i][j] - pooled.intercept[e] - s.covariates[i].dot(pooled.gamma.col(e)));
          q.push_back(s.covariates[i][k]);
        }
        site_sum += std::abs(oracle::pearson(r_site, q));
        pooled_sum += std::abs(oracle::pearson(r_pool, q));
        ++terms;
      }
    }
  }
  const double site_aware = site_sum / terms, pooled_corr = pooled_sum / terms;
  const double elapsed = seconds_since(t0);
  report(1, pooled_corr > 0.2 && site_aware < 0.02 && gap >= 0.5 - 1e-12 && elapsed < 30.0,
         fmt("residual bias: pooled |corr| %.4f (> 0.2), site-aware |corr| %.5f (< 0.02), min site gap %.3f, %.1fs",
             pooled_corr, site_aware, gap, elapsed));
}

// 2. No covered edge flips between fitted and oracle scaffolds.
void margin_stability() {
  const auto t0 = clock_type::now();
  const auto r = harness::margin_trials(1000, 99, 1000, workers());
  const double elapsed = seconds_since(t0);
  report(2, r.trials == 1000 && r.violations == 0 && r.covered > 0 && elapsed < 60.0,
         fmt("margin stability: %zu trials, %zu/%zu edges covered, %zu violations (%zu uncovered disagreements), %.1fs",
             r.trials, r.covered, r.edges, r.violations, r.disagreements, elapsed));
}

// 3. Huber regression against nested bisection on the score equations.
void huber_oracle() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < 200; ++inst) {
    const int n = 20 + static_cast<int>(unit(rng) * 80);
    const bool contaminated = inst % 2 == 1;
    const double b = 2.0 * normal(rng), g = 2.0 * normal(rng), sigma = 0.05 + unit(rng);
    std::vector<double> q(n), y(n);
    Matrix design(n, 1);
    for (int i = 0; i < n; ++i) {
      q[i] = normal(rng);
      design(i, 0) = q[i];
      y[i] = b + g * q[i] + sigma * normal(rng);
    }
    if (contaminated)
      for (int i = 0; i < n / 10; ++i) y[static_cast<std::size_t>(unit(rng) * n)] += 50.0 * normal(rng);

    const auto fit = deconfound::huber_fit_edge(y, design);
    const auto ref = oracle::huber_line(y, q, fit.delta);
    worst = std::max({worst, std::abs(fit.intercept - ref.intercept), std::abs(fit.gamma[0] - ref.slope)});

    deconfound::HuberOptions fixed;
    fixed.fixed_delta = 0.1 + unit(rng);
    const auto fit2 = deconfound::huber_fit_edge(y, design, fixed);
    const auto ref2 = oracle::huber_line(y, q, *fixed.fixed_delta);
    worst = std::max({worst, std::abs(fit2.intercept - ref2.intercept), std::abs(fit2.gamma[0] - ref2.slope)});
  }
  report(3, worst < 1e-6,
         fmt("Huber oracle: 200 instances (100 contaminated), adaptive and fixed thresholds, max coefficient error %.2e "
             "(< 1e-6)",
             worst));
}

// 4. Analytic gradients against central differences computed here.
void gradients() {
  double worst = 0.0;
  std::string worst_group;
  std::size_t groups = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(500 + seed);
    const std::size_t rois = 5;
    const dataset::EdgeIndexMap map(rois);
    std::vector<std::size_t> all(map.edges());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<linegraph::RoiPair> pairs;
    for (std::size_t k = 0; k < 6; ++k) pairs.push_back(map.pair(all[k]));
    const Vector mu0 = testutil::random_matrix(rng, 6, 1).col(0);
    const auto lg = linegraph::normalize_propagation(linegraph::build_adjacency(pairs, mu0));
    const model::GraphView view{lg.propagation, mu0};

    model::Batch batch;
    for (int i = 0; i < 4; ++i) {
      batch.features.push_back(testutil::random_matrix(rng, 6, 3));
      batch.labels.push_back(i % 2);
    }
    model::ModelConfig cfg;
    cfg.hidden = 8;
    cfg.layers = 2;
    cfg.seed = seed;
    model::GatedGnnModel m(cfg);
    const model::Objective obj{1.5 + 0.1 * static_cast<double>(seed % 5), seed % 2 ? 0.2 : 0.0};

    model::Parameters analytic;
    model::loss_and_gradient(m, batch, view, obj, &analytic);
    auto theta = m.params().blocks();
    auto grad = analytic.blocks();
    std::map<std::string, double> d_sq, a_sq, n_sq;
    // Five-point central stencil; a two-point stencil at small h is roundoff-bound for
    // groups whose gradient norm is ~1e-5.
    const double h = 1e-4;
    for (std::size_t blk = 0; blk < theta.size(); ++blk) {
      for (std::size_t k = 0; k < theta[blk].size; ++k) {
        const double saved = theta[blk].data[k];
        const auto f = [&](double x) {
          theta[blk].data[k] = x;
          return model::batch_loss(m, batch, view, obj);
        };
        const double numeric = (f(saved - 2 * h) - 8 * f(saved - h) + 8 * f(saved + h) - f(saved + 2 * h)) / (12 * h);
        theta[blk].data[k] = saved;
        const double a = grad[blk].data[k];
        d_sq[theta[blk].group] += (a - numeric) * (a - numeric);
        a_sq[theta[blk].group] += a * a;
        n_sq[theta[blk].group] += numeric * numeric;
      }
    }
    for (const auto& [group, d] : d_sq) {
      const double denom = std::max({std::sqrt(a_sq[group]), std::sqrt(n_sq[group]), 1e-12});
      const double rel = std::sqrt(d) / denom;
      if (rel > worst) {
        worst = rel;
        worst_group = group;
      }
    }
    groups = d_sq.size();
  }
  report(4, worst < 1e-5 && groups >= 6,
         fmt("gradient check: 20 seeds, 6-node line graph, %zu parameter groups, max relative error %.2e (< 1e-5, worst "
             "%s)",
             groups, worst, worst_group.c_str()));
}

// 5. Descriptor offset invariance and trajectory affine invariance.
void descriptor_invariance() {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.05, 20.0), shift(-100.0, 100.0);
  double worst_desc = 0.0, worst_traj = 0.0;
  transient::WindowConfig cfg;
  for (int c = 0; c < 500; ++c) {
    std::vector<double> traj(2 + static_cast<std::size_t>(c % 40));
    for (auto& v : traj) v = normal(rng);
    const double k = shift(rng);
    auto moved = traj;
    for (auto& v : moved) v += k;
    const auto a = transient::temporal_descriptors(traj), b = transient::temporal_descriptors(moved);
    worst_desc = std::max({worst_desc, std::abs(a.volatility - b.volatility), std::abs(a.flexibility - b.flexibility)});

    const Matrix bold = testutil::random_matrix(rng, 60 + c % 50, 2);
    Matrix rescaled = bold;
    rescaled.col(c % 2) = scale(rng) * rescaled.col(c % 2).array() + shift(rng);
    const auto ta = transient::window_trajectory(bold, {0, 1}, cfg);
    const auto tb = transient::window_trajectory(rescaled, {0, 1}, cfg);
    for (std::size_t w = 0; w < ta.size(); ++w) worst_traj = std::max(worst_traj, std::abs(ta[w] - tb[w]));
  }
  report(5, worst_desc < 1e-12 && worst_traj < 1e-12,
         fmt("descriptor invariance: 500 cases, max s/f change %.2e, max trajectory change %.2e (< 1e-12)", worst_desc,
             worst_traj));
}

// 6. Spectral radius of the normalized propagation matrix, by dense eigendecomposition.
void propagation_spectrum() {
  std::mt19937_64 rng(66);
  double worst = 0.0;
  std::size_t largest = 0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t rois = 4 + static_cast<std::size_t>(c % 30);
    const dataset::EdgeIndexMap map(rois);
    const std::size_t cap = std::min<std::size_t>(200, map.edges());
    const std::size_t n = c == 0 ? cap : std::uniform_int_distribution<std::size_t>(1, cap)(rng);
    std::vector<std::size_t> all(map.edges());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<linegraph::RoiPair> pairs;
    for (std::size_t k = 0; k < n; ++k) pairs.push_back(map.pair(all[k]));
    const Vector mu0 = testutil::random_matrix(rng, static_cast<Eigen::Index>(n), 1).col(0);
    const auto lg = linegraph::normalize_propagation(linegraph::build_adjacency(pairs, mu0));
    const Matrix dense(lg.propagation);
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(dense, Eigen::EigenvaluesOnly);
    worst = std::max(worst, eig.eigenvalues().cwiseAbs().maxCoeff());
    largest = std::max(largest, n);
  }
  report(6, worst <= 1.0 + 1e-9,
         fmt("propagation spectrum: 100 random scaffolds (largest M_S = %zu), max spectral radius %.12f (<= 1 + 1e-9)",
             largest, worst));
}

// 7. End-to-end LOSO with and without deconfounding.
void end_to_end() {
  const auto records = synth::synth_timeseries_dataset(synth::SynthTimeSeriesSpec::planted_module(4, 40, 1));
  harness::PipelineConfig full;
  full.workers = 4;
  auto t0 = clock_type::now();
  const auto a = harness::run_loso(records, full);
  const double t_full = seconds_since(t0);

  auto ablation = full;
  ablation.deconfound = false;
  ablation.model.lambda = 0.0;
  t0 = clock_type::now();
  const auto b = harness::run_loso(records, ablation);
  const double t_abl = seconds_since(t0);

  report(7, a.evaluated == 4 && b.evaluated == 4 && a.mean_auc >= 0.90 && a.mean_auc - b.mean_auc >= 0.05 &&
                t_full + t_abl < 300.0,
         fmt("end-to-end LOSO: full AUC %.4f (>= 0.90), ablation AUC %.4f, gap %.4f (>= 0.05), %.0fs + %.0fs",
             a.mean_auc, b.mean_auc, a.mean_auc - b.mean_auc, t_full, t_abl));
}

// 8. Bit-identical reports across repeated runs and worker counts.
void determinism() {
  const auto records = synth::synth_timeseries_dataset(synth::SynthTimeSeriesSpec::planted_module(4, 12, 8));
  harness::PipelineConfig cfg;
  cfg.scaffold.bootstrap_draws = 300;
  cfg.scaffold.seed = 8;
  cfg.model.hidden = 16;
  cfg.model.seed = 8;
  cfg.train.epochs = 20;
  cfg.train.seed = 8;
  cfg.train.batch_size = 16;
  const auto strip = [](harness::EvalReport r) {
    auto j = io::to_json(r);
    j["config"].erase("workers");
    return j.dump();
  };
  const auto first = strip(harness::run_loso(records, cfg));
  const auto second = strip(harness::run_loso(records, cfg));
  auto wide = cfg;
  wide.workers = workers();
  const auto parallel = strip(harness::run_loso(records, wide));
  report(8, first == second && first == parallel,
         fmt("determinism: repeated run %s, 1 vs %zu workers %s", first == second ? "identical" : "DIFFERS",
             wide.workers, first == parallel ? "identical" : "DIFFERS"));
}

// 9. Loss identities.
void loss_identities() {
  const std::vector<Vector> gates{(Vector(4) << 0.25, 0.5, 0.125, 0.125).finished()};
  const std::vector<int> label{1};
  const double at_budget = model::loss_total(std::vector<double>{0.0}, label, gates, 1.0, 0.7);
  const double ce_only = model::loss_total(std::vector<double>{0.0}, label, gates, 1.0, 0.0);
  const double off_budget = model::loss_total(std::vector<double>{0.0}, label, gates, 1.5, 0.7);
  const bool sparse_zero = at_budget == ce_only;
  const bool log2 = std::abs(ce_only - std::log(2.0)) < 1e-15;
  const bool sparse_active = std::abs(off_budget - ce_only - 0.7 * 0.5) < 1e-15;
  report(9, sparse_zero && log2 && sparse_active,
         fmt("loss identities: sparse term at sum g = K is %s, loss(logit 0, label 1, gamma 0) = %.16f (log 2 = %.16f)",
             sparse_zero ? "exactly 0" : "NONZERO", ce_only, std::log(2.0)));
}

}  // namespace

int main() {
  const auto run = [](int id, void (*fn)()) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  };
  run(1, residual_bias);
  run(2, margin_stability);
  run(3, huber_oracle);
  run(4, gradients);
  run(5, descriptor_invariance);
  run(6, propagation_spectrum);
  run(7, end_to_end);
  run(8, determinism);
  run(9, loss_identities);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
