#include <doctest.h>

#include <fstream>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xsite/dataset.hpp"

using namespace xsite;
using namespace xsite::dataset;

TEST_CASE("edge index map enumerates the upper triangle row by row") {
  const EdgeIndexMap map(4);
  CHECK(map.edges() == 6);
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  for (std::size_t j = 0; j < 6; ++j) CHECK(map.pair(j) == expected[j]);
  CHECK(map.index(3, 1) == 4);
  CHECK_THROWS_AS(map.pair(6), ContractError);
  CHECK_THROWS_AS(map.index(2, 2), ContractError);
  CHECK_THROWS_AS(EdgeIndexMap(1), ContractError);
}

TEST_CASE("edge index round trip is a bijection for P in 2..50") {
  for (std::size_t p = 2; p <= 50; ++p) {
    const EdgeIndexMap map(p);
    REQUIRE(map.edges() == p * (p - 1) / 2);
    std::pair<std::size_t, std::size_t> previous{0, 0};
    for (std::size_t j = 0; j < map.edges(); ++j) {
      const auto pr = map.pair(j);
      CHECK(pr.first < pr.second);
      CHECK(map.index(pr.first, pr.second) == j);
      if (j > 0) CHECK(previous < pr);
      previous = pr;
    }
  }
}

TEST_CASE("static FC of identical, negated and hand-built columns") {
  Matrix bold(5, 3);
  bold << 1, 2, 5, 2, 4, 4, 3, 6, 3, 4, 8, 2, 5, 10, 1;
  const auto fc = compute_static_fc(bold);
  REQUIRE(fc.size() == 3);
  CHECK(fc.values[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(fc.values[1] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(fc.values[2] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_FALSE(fc.degenerate());

  std::mt19937_64 rng(1);
  Matrix two = testutil::random_matrix(rng, 40, 2);
  two.col(1) = two.col(0);
  CHECK(compute_static_fc(two).values[0] == doctest::Approx(1.0));
  two.col(1) = -two.col(0);
  CHECK(compute_static_fc(two).values[0] == doctest::Approx(-1.0));
}

TEST_CASE("static FC matches a two-pass Pearson oracle and stays in [-1, 1]") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix bold = testutil::random_matrix(rng, 30, 6);
    const auto fc = compute_static_fc(bold);
    const EdgeIndexMap map(6);
    for (std::size_t j = 0; j < fc.size(); ++j) {
      const auto [u, v] = map.pair(j);
      std::vector<double> x(30), y(30);
      for (int t = 0; t < 30; ++t) {
        x[t] = bold(t, static_cast<Eigen::Index>(u));
        y[t] = bold(t, static_cast<Eigen::Index>(v));
      }
      CHECK(std::abs(fc.values[j] - oracle::pearson(x, y)) < 1e-12);
      CHECK(std::abs(fc.values[j]) <= 1.0);
    }
  }
}

TEST_CASE("static FC is invariant to positive per-column affine maps") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(0.1, 10.0), shift(-50.0, 50.0);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix bold = testutil::random_matrix(rng, 25, 5);
    Matrix moved = bold;
    for (Eigen::Index c = 0; c < moved.cols(); ++c) moved.col(c) = scale(rng) * moved.col(c).array() + shift(rng);
    const auto a = compute_static_fc(bold), b = compute_static_fc(moved);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a.values[j] - b.values[j]) < 1e-12);
  }
}

TEST_CASE("flat ROI columns give zero correlation and a flag") {
  std::mt19937_64 rng(4);
  Matrix bold = testutil::random_matrix(rng, 20, 4);
  bold.col(2).setConstant(3.0);
  const auto fc = compute_static_fc(bold);
  REQUIRE(fc.degenerate());
  CHECK(fc.flat_rois == std::vector<std::size_t>{2});
  const EdgeIndexMap map(4);
  CHECK(fc.values[map.index(0, 2)] == 0.0);
  CHECK(fc.values[map.index(1, 2)] == 0.0);
  CHECK(fc.values[map.index(2, 3)] == 0.0);
  CHECK(fc.values[map.index(0, 1)] != 0.0);
}

TEST_CASE("pearson returns zero for a constant input") {
  const std::vector<double> x{1, 2, 3}, c{4, 4, 4};
  CHECK(pearson(x, c) == 0.0);
}

TEST_CASE("standardizer uses the population standard deviation") {
  const std::vector<Vector> q{Vector::Constant(1, 0.0), Vector::Constant(1, 2.0)};
  const auto s = fit_standardizer(q);
  CHECK(s.mean[0] == 1.0);
  CHECK(s.scale[0] == 1.0);
  CHECK(s.standardize(s.mean).isZero(0.0));
  CHECK_THROWS_AS(fit_standardizer(std::span<const Vector>(q.data(), 1)), ContractError);
}

TEST_CASE("identical covariates standardize to zero") {
  const std::vector<Vector> q(5, Vector::Constant(2, 7.5));
  const auto s = fit_standardizer(q);
  CHECK(s.scale.isZero(0.0));
  for (const auto& v : q) CHECK(s.standardize(v).isZero(0.0));
}

TEST_CASE("refitting on standardized covariates is idempotent") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(3.0, 2.0);
  std::vector<Vector> q(60, Vector(3));
  for (auto& v : q)
    for (Eigen::Index k = 0; k < 3; ++k) v[k] = normal(rng);
  const auto s = fit_standardizer(q);
  std::vector<Vector> z;
  for (const auto& v : q) z.push_back(s.standardize(v));
  const auto s2 = fit_standardizer(z);
  CHECK(s2.mean.cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s2.scale.array() - 1.0).abs().maxCoeff() < 1e-12);
  for (const auto& v : z) CHECK((s2.standardize(v) - v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("record validation rejects non-finite values and bad labels") {
  SubjectRecord r;
  r.subject_id = "x";
  r.bold = Matrix::Ones(3, 2);
  r.covariates = Vector::Zero(1);
  CHECK_NOTHROW(validate(r));
  r.bold(1, 1) = std::nan("");
  CHECK_THROWS_AS(validate(r), ContractError);
  r.bold(1, 1) = 0.0;
  r.label = 2;
  CHECK_THROWS_AS(validate(r), ContractError);
  r.label = 0;
  r.bold = Matrix::Ones(1, 2);
  CHECK_THROWS_AS(validate(r), ContractError);
}

namespace {

void write_bold(const std::filesystem::path& p, int t, int rois, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  write_timeseries_csv(p, testutil::random_matrix(rng, t, rois));
}

}  // namespace

TEST_CASE("manifest with two subjects loads both records") {
  testutil::TempDir dir("manifest_ok");
  write_bold(dir.path / "a.csv", 10, 4, 1);
  write_bold(dir.path / "b.csv", 12, 4, 2);
  std::ofstream(dir.path / "m.csv") << "subject_id,site_id,label,covariate_1,covariate_2,bold_path\n"
                                       "a,s1,0,30,1,a.csv\n"
                                       "b,s2,1,41.5,0,b.csv\n";
  const auto m = load_manifest(dir.path / "m.csv");
  REQUIRE(m.records.size() == 2);
  CHECK(m.rejected.empty());
  CHECK(m.records[0].rois() == 4);
  CHECK(m.records[1].rois() == 4);
  CHECK(m.records[1].time_points() == 12);
  CHECK(m.records[1].covariates[0] == 41.5);
  CHECK(m.records[1].label == 1);
  CHECK(m.sites() == std::vector<std::string>{"s1", "s2"});
  CHECK(m.site("s2").size() == 1);
}

TEST_CASE("manifest referencing an absent CSV names the file") {
  testutil::TempDir dir("manifest_missing");
  std::ofstream(dir.path / "m.csv") << "subject_id,site_id,label,covariate_1,bold_path\n"
                                       "a,s1,0,1,nowhere.csv\n";
  try {
    load_manifest(dir.path / "m.csv");
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("nowhere.csv") != std::string::npos);
  }
  CHECK_THROWS_AS(load_manifest(dir.path / "absent.csv"), LoadError);
}

TEST_CASE("manifest rows with a missing label, site or covariate are rejected") {
  testutil::TempDir dir("manifest_reject");
  write_bold(dir.path / "a.csv", 10, 3, 1);
  std::ofstream(dir.path / "m.csv") << "subject_id,site_id,label,covariate_1,bold_path\n"
                                       "a,s1,0,1,a.csv\n"
                                       "b,s1,,1,a.csv\n"
                                       "c,,1,1,a.csv\n"
                                       "d,s1,1,,a.csv\n"
                                       "e,s1,1,2,a.csv\n";
  const auto m = load_manifest(dir.path / "m.csv");
  CHECK(m.records.size() == 2);
  REQUIRE(m.rejected.size() == 3);
  CHECK(m.rejected[0].subject_id == "b");
  CHECK(m.rejected[0].line == 3);
  CHECK(m.rejected[0].reason == "missing label");
  CHECK(m.rejected[1].reason == "missing site_id");
  CHECK(m.rejected[2].reason.find("covariate_1") != std::string::npos);
}

TEST_CASE("manifest with mismatched ROI counts is a schema error") {
  testutil::TempDir dir("manifest_schema");
  write_bold(dir.path / "a.csv", 10, 4, 1);
  write_bold(dir.path / "b.csv", 10, 5, 2);
  std::ofstream(dir.path / "m.csv") << "subject_id,site_id,label,covariate_1,bold_path\n"
                                       "a,s1,0,1,a.csv\n"
                                       "b,s1,1,2,b.csv\n";
  CHECK_THROWS_AS(load_manifest(dir.path / "m.csv"), SchemaError);
}

TEST_CASE("time-series CSV round trip is exact") {
  testutil::TempDir dir("csv_roundtrip");
  std::mt19937_64 rng(9);
  const Matrix bold = testutil::random_matrix(rng, 7, 3) * 1e3;
  write_timeseries_csv(dir.path / "x.csv", bold);
  CHECK(read_timeseries_csv(dir.path / "x.csv") == bold);
}

TEST_CASE("manifest round trip through write_manifest") {
  testutil::TempDir dir("manifest_write");
  std::mt19937_64 rng(10);
  std::vector<SubjectRecord> recs(2);
  std::vector<std::string> paths{"a.csv", "b.csv"};
  for (std::size_t i = 0; i < 2; ++i) {
    recs[i].subject_id = "id" + std::to_string(i);
    recs[i].site_id = "s";
    recs[i].label = static_cast<int>(i);
    recs[i].bold = testutil::random_matrix(rng, 8, 3);
    recs[i].covariates = testutil::random_matrix(rng, 2, 1).col(0);
    write_timeseries_csv(dir.path / paths[i], recs[i].bold);
  }
  write_manifest(dir.path / "m.csv", recs, paths);
  const auto m = load_manifest(dir.path / "m.csv");
  REQUIRE(m.records.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(m.records[i].subject_id == recs[i].subject_id);
    CHECK(m.records[i].covariates == recs[i].covariates);
    CHECK(m.records[i].bold == recs[i].bold);
  }
}
