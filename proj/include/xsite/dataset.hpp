#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xsite/common.hpp"

namespace xsite::dataset {

/// One subject: BOLD time series (T x P), raw covariates, label and site.
struct SubjectRecord {
  std::string subject_id;
  std::string site_id;
  int label = 0;  // 0 control, 1 condition
  Matrix bold;    // rows are time points, columns are ROIs
  Vector covariates;

  std::size_t time_points() const { return static_cast<std::size_t>(bold.rows()); }
  std::size_t rois() const { return static_cast<std::size_t>(bold.cols()); }
};

/// Throws ContractError when the record breaks its invariants.
void validate(const SubjectRecord& record);

/// Canonical upper-triangular edge ordering. Edge j <-> ROI pair (u, v), u < v,
/// enumerated row-major: (0,1), (0,2), ..., (0,P-1), (1,2), ...
/// All indices are zero-based.
class EdgeIndexMap {
 public:
  explicit EdgeIndexMap(std::size_t rois);

  std::size_t rois() const { return rois_; }
  std::size_t edges() const { return rois_ * (rois_ - 1) / 2; }

  std::pair<std::size_t, std::size_t> pair(std::size_t edge) const;
  std::size_t index(std::size_t u, std::size_t v) const;

 private:
  std::size_t rois_;
  std::vector<std::size_t> row_start_;
};

/// Static functional connectivity over the full time series.
struct FcVector {
  std::vector<double> values;
  // ROIs with zero variance; their correlations were set to 0.
  std::vector<std::size_t> flat_rois;

  bool degenerate() const { return !flat_rois.empty(); }
  std::size_t size() const { return values.size(); }
};

/// Sample Pearson correlation; zero-variance input yields 0.
double pearson(std::span<const double> x, std::span<const double> y);

FcVector compute_static_fc(const Matrix& bold);

/// Pooled covariate standardizer (population standard deviation).
struct CovariateStandardizer {
  Vector mean;
  Vector scale;  // 0 marks a degenerate component

  Vector standardize(const Vector& raw) const;
  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

CovariateStandardizer fit_standardizer(std::span<const Vector> covariates);
CovariateStandardizer fit_standardizer(std::span<const SubjectRecord> training_records);

// ---------------------------------------------------------------------------
// Manifest loading

struct RejectedRow {
  std::size_t line = 0;  // 1-based line in the manifest file
  std::string subject_id;
  std::string reason;
};

struct Manifest {
  std::vector<SubjectRecord> records;
  std::vector<RejectedRow> rejected;

  /// Distinct site ids in first-appearance order.
  std::vector<std::string> sites() const;
  std::vector<const SubjectRecord*> site(const std::string& site_id) const;
};

/// Reads a header-free T x P CSV.
Matrix read_timeseries_csv(const std::filesystem::path& path);
void write_timeseries_csv(const std::filesystem::path& path, const Matrix& bold);

/// Loads a manifest with columns subject_id, site_id, label, covariate_1..covariate_d,
/// bold_path. Relative bold paths are resolved against the manifest directory.
/// Rows with a missing label, site or covariate are rejected and reported; a missing
/// time-series file raises LoadError; a ROI-count mismatch raises SchemaError.
Manifest load_manifest(const std::filesystem::path& manifest_path);

void write_manifest(const std::filesystem::path& manifest_path, std::span<const SubjectRecord> records,
                    std::span<const std::string> bold_paths);

}  // namespace xsite::dataset
