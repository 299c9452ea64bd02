#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xsite/dataset.hpp"
#include "xsite/synth.hpp"
#include "xsite/transient.hpp"

using namespace xsite;
using namespace xsite::transient;

namespace {

scaffold::Scaffold scaffold_on(std::size_t rois, std::vector<std::size_t> selected) {
  scaffold::Scaffold s;
  s.rois = rois;
  s.selected = std::move(selected);
  s.stats.consensus.assign(rois * (rois - 1) / 2, 0.0);
  return s;
}

}  // namespace

TEST_CASE("window count examples and loop oracle") {
  WindowConfig cfg;
  CHECK(window_count(146, cfg) == 24);
  CHECK(window_count(30, cfg) == 1);
  CHECK(window_count(34, cfg) == 1);
  CHECK(window_count(35, cfg) == 2);
  CHECK_THROWS_AS(window_count(29, cfg), ContractError);
  for (std::size_t w = 3; w <= 20; ++w)
    for (std::size_t s = 1; s <= 7; ++s)
      for (std::size_t t = w; t <= 80; ++t) {
        WindowConfig c;
        c.length = w;
        c.stride = s;
        CHECK(window_count(t, c) == oracle::window_count_loop(t, w, s));
      }
}

TEST_CASE("window config validation") {
  WindowConfig cfg;
  cfg.length = 2;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  cfg.stride = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  cfg.rho_clamp = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("Fisher z values") {
  CHECK(fisher_z(0.0) == 0.0);
  CHECK(fisher_z(0.5) == doctest::Approx(0.5493).epsilon(1e-4));
  CHECK(fisher_z(0.5) == doctest::Approx(0.5 * std::log(3.0)).epsilon(1e-15));
  CHECK(fisher_z(-0.3) == doctest::Approx(-fisher_z(0.3)));
}

TEST_CASE("trajectory matches windowed Pearson oracle and saturates at the clamp") {
  std::mt19937_64 rng(1);
  WindowConfig cfg;
  cfg.length = 12;
  cfg.stride = 4;
  const Matrix bold = testutil::random_matrix(rng, 60, 3);
  const auto traj = window_trajectory(bold, {0, 2}, cfg);
  REQUIRE(traj.size() == window_count(60, cfg));
  for (std::size_t w = 0; w < traj.size(); ++w) {
    std::vector<double> x, y;
    for (std::size_t t = w * cfg.stride; t < w * cfg.stride + cfg.length; ++t) {
      x.push_back(bold(static_cast<Eigen::Index>(t), 0));
      y.push_back(bold(static_cast<Eigen::Index>(t), 2));
    }
    CHECK(traj[w] == doctest::Approx(std::atanh(oracle::pearson(x, y))).epsilon(1e-12));
  }

  Matrix same = bold;
  same.col(1) = same.col(0);
  for (double c : window_trajectory(same, {0, 1}, cfg)) CHECK(c == doctest::Approx(std::atanh(cfg.rho_clamp)));
  same.col(1).setConstant(1.0);
  for (double c : window_trajectory(same, {0, 1}, cfg)) CHECK(c == 0.0);
  CHECK_THROWS_AS(window_trajectory(bold.topRows(10), {0, 1}, cfg), ContractError);
  CHECK_THROWS_AS(window_trajectory(bold, {0, 3}, cfg), ContractError);
}

TEST_CASE("trajectories are invariant to positive affine maps of either ROI") {
  std::mt19937_64 rng(2);
  WindowConfig cfg;
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix bold = testutil::random_matrix(rng, 80, 2);
    Matrix moved = bold;
    moved.col(0) = 3.5 * moved.col(0).array() - 20.0;
    moved.col(1) = 0.01 * moved.col(1).array() + 7.0;
    const auto a = window_trajectory(bold, {0, 1}, cfg);
    const auto b = window_trajectory(moved, {0, 1}, cfg);
    for (std::size_t w = 0; w < a.size(); ++w) CHECK(std::abs(a[w] - b[w]) < 1e-12);
  }
}

TEST_CASE("temporal descriptor examples") {
  const auto d = temporal_descriptors(std::vector<double>{0.0, 1.0});
  CHECK(d.mean == 0.5);
  CHECK(d.volatility == 0.5);
  CHECK(d.flexibility == 1.0);
  const auto c = temporal_descriptors(std::vector<double>(7, 0.3));
  CHECK(c.mean == doctest::Approx(0.3));
  CHECK(c.volatility == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(c.flexibility == 0.0);
  CHECK_THROWS_AS(temporal_descriptors(std::vector<double>{}), ContractError);
}

TEST_CASE("descriptor offset invariance and range bounds the population std") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> len(2, 40);
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<double> t(static_cast<std::size_t>(len(rng)));
    for (auto& v : t) v = normal(rng);
    const double k = 10.0 * normal(rng);
    auto shifted = t;
    for (auto& v : shifted) v += k;
    const auto a = temporal_descriptors(t), b = temporal_descriptors(shifted);
    CHECK(std::abs(a.volatility - b.volatility) < 1e-12);
    CHECK(std::abs(a.flexibility - b.flexibility) < 1e-12);
    CHECK(std::abs(b.mean - a.mean - k) < 1e-12);
    CHECK(a.flexibility >= 0.0);
    CHECK(a.flexibility >= a.volatility);
  }
}

TEST_CASE("node features with a single window hit the log floor") {
  std::mt19937_64 rng(4);
  WindowConfig cfg;
  const Matrix bold = testutil::random_matrix(rng, 30, 4);
  const auto s = scaffold_on(4, {1, 4});
  deconfound::ResidualFc res{std::vector<double>(6, 0.0), deconfound::ResidualKind::site_residual};
  const Matrix h = build_node_features(res, bold, s, cfg, Phase::training);
  REQUIRE(h.rows() == 2);
  REQUIRE(h.cols() == 3);
  for (Eigen::Index p = 0; p < 2; ++p) {
    CHECK(h(p, 0) == 0.0);
    CHECK(h(p, 1) == std::log(cfg.eps_feature));
    CHECK(h(p, 2) == std::log(cfg.eps_feature));
  }
}

TEST_CASE("node features follow scaffold order and check residual kind") {
  std::mt19937_64 rng(5);
  WindowConfig cfg;
  const Matrix bold = testutil::random_matrix(rng, 100, 4);
  const auto s = scaffold_on(4, {0, 3, 5});
  deconfound::ResidualFc res{{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, deconfound::ResidualKind::inference_residual};
  const Matrix h = build_node_features(res, bold, s, cfg, Phase::inference);
  CHECK(h(0, 0) == 0.1);
  CHECK(h(1, 0) == 0.4);
  CHECK(h(2, 0) == 0.6);
  const dataset::EdgeIndexMap map(4);
  const auto d = temporal_descriptors(window_trajectory(bold, map.pair(3), cfg));
  CHECK(h(1, 1) == std::log(d.volatility + cfg.eps_feature));
  CHECK(h(1, 2) == std::log(d.flexibility + cfg.eps_feature));

  CHECK_THROWS_AS(build_node_features(res, bold, s, cfg, Phase::training), ContractError);
  res.kind = deconfound::ResidualKind::site_residual;
  CHECK_THROWS_AS(build_node_features(res, bold, s, cfg, Phase::inference), ContractError);
  CHECK_THROWS_AS(build_node_features(res, bold, scaffold_on(4, {}), cfg, Phase::training), ContractError);
  CHECK_THROWS_AS(build_node_features(res, bold.leftCols(3), s, cfg, Phase::training), SchemaError);
  CHECK_THROWS_AS(build_node_features(res, bold.topRows(20), s, cfg, Phase::training), ContractError);
}

TEST_CASE("oscillating coupling raises the volatility feature") {
  synth::SynthTimeSeriesSpec spec;
  spec.rois = 6;
  spec.sites = 1;
  spec.per_class = 50;
  spec.time_points = {200};
  spec.seed = 6;
  synth::ModuleSpec osc;
  osc.rois = {0, 1};
  osc.control = osc.case_ = 0.45;
  osc.control_oscillation = osc.case_oscillation = 0.4;
  synth::ModuleSpec flat;
  flat.rois = {2, 3};
  flat.control = flat.case_ = 0.45;
  spec.modules = {osc, flat};
  const auto records = synth::synth_timeseries_dataset(spec);
  const dataset::EdgeIndexMap map(6);
  const auto s = scaffold_on(6, {map.index(0, 1), map.index(2, 3)});
  WindowConfig cfg;
  std::size_t larger = 0;
  for (const auto& r : records) {
    deconfound::ResidualFc res{std::vector<double>(map.edges(), 0.0), deconfound::ResidualKind::site_residual};
    const Matrix h = build_node_features(res, r.bold, s, cfg, Phase::training);
    larger += h(0, 1) > h(1, 1);
  }
  // One-sided sign test: under equal distributions 80/100 has p < 1e-9.
  CHECK(larger >= 80);
}

TEST_CASE("feature shift summary") {
  std::vector<Matrix> a{Matrix::Zero(2, 3), Matrix::Constant(2, 3, 2.0)};
  std::vector<Matrix> b{Matrix::Constant(4, 3, 1.0)};
  const auto shift = compare_feature_distributions(a, b);
  CHECK(shift.mean_train == Vector::Constant(3, 1.0));
  CHECK(shift.std_train == Vector::Constant(3, 1.0));
  CHECK(shift.std_infer.isZero(0.0));
  CHECK(shift.standardized_mean_difference.isZero(0.0));
}
