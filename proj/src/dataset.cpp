#include "xsite/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace xsite::dataset {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void validate(const SubjectRecord& record) {
  if (record.bold.rows() < 2 || record.bold.cols() < 2) {
    throw ContractError("subject " + record.subject_id + ": need T >= 2 and P >= 2");
  }
  if (!record.bold.allFinite() || !record.covariates.allFinite()) {
    throw ContractError("subject " + record.subject_id + ": non-finite BOLD or covariate entry");
  }
  if (record.label != 0 && record.label != 1) {
    throw ContractError("subject " + record.subject_id + ": label must be 0 or 1");
  }
}

EdgeIndexMap::EdgeIndexMap(std::size_t rois) : rois_(rois) {
  if (rois < 2) throw ContractError("EdgeIndexMap needs at least 2 ROIs");
  row_start_.resize(rois);
  std::size_t offset = 0;
  for (std::size_t u = 0; u < rois; ++u) {
    row_start_[u] = offset;
    offset += rois - u - 1;
  }
}

std::pair<std::size_t, std::size_t> EdgeIndexMap::pair(std::size_t edge) const {
  if (edge >= edges()) throw ContractError("edge index out of range");
  auto it = std::upper_bound(row_start_.begin(), row_start_.end(), edge);
  const auto u = static_cast<std::size_t>(std::distance(row_start_.begin(), it)) - 1;
  return {u, u + 1 + (edge - row_start_[u])};
}

std::size_t EdgeIndexMap::index(std::size_t u, std::size_t v) const {
  if (u > v) std::swap(u, v);
  if (u == v || v >= rois_) throw ContractError("invalid ROI pair");
  return row_start_[u] + (v - u - 1);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

FcVector compute_static_fc(const Matrix& bold) {
  const auto t = bold.rows();
  const auto p = bold.cols();
  if (t < 2 || p < 2) throw ContractError("compute_static_fc: need T >= 2 and P >= 2");

  Matrix centered = bold.rowwise() - bold.colwise().mean();
  Vector norms = centered.colwise().norm();

  FcVector fc;
  for (Eigen::Index c = 0; c < p; ++c) {
    if (norms[c] == 0.0) {
      fc.flat_rois.push_back(static_cast<std::size_t>(c));
    } else {
      centered.col(c) /= norms[c];
    }
  }
  fc.values.reserve(static_cast<std::size_t>(p * (p - 1) / 2));
  for (Eigen::Index u = 0; u < p; ++u) {
    for (Eigen::Index v = u + 1; v < p; ++v) {
      if (norms[u] == 0.0 || norms[v] == 0.0) {
        fc.values.push_back(0.0);
      } else {
        fc.values.push_back(std::clamp(centered.col(u).dot(centered.col(v)), -1.0, 1.0));
      }
    }
  }
  return fc;
}

Vector CovariateStandardizer::standardize(const Vector& raw) const {
  if (raw.size() != mean.size()) throw SchemaError("covariate dimension mismatch");
  Vector out(raw.size());
  for (Eigen::Index k = 0; k < raw.size(); ++k) {
    out[k] = scale[k] > 0.0 ? (raw[k] - mean[k]) / scale[k] : 0.0;
  }
  return out;
}

CovariateStandardizer fit_standardizer(std::span<const Vector> covariates) {
  if (covariates.size() < 2) throw ContractError("fit_standardizer needs at least 2 subjects");
  const auto d = covariates.front().size();
  const auto n = static_cast<double>(covariates.size());
  CovariateStandardizer s;
  s.mean = Vector::Zero(d);
  for (const auto& q : covariates) {
    if (q.size() != d) throw SchemaError("covariate dimension mismatch");
    s.mean += q;
  }
  s.mean /= n;
  Vector var = Vector::Zero(d);
  for (const auto& q : covariates) var += (q - s.mean).array().square().matrix();
  s.scale = (var / n).array().sqrt().matrix();
  return s;
}

CovariateStandardizer fit_standardizer(std::span<const SubjectRecord> training_records) {
  std::vector<Vector> qs;
  qs.reserve(training_records.size());
  for (const auto& r : training_records) qs.push_back(r.covariates);
  return fit_standardizer(std::span<const Vector>(qs));
}

std::vector<std::string> Manifest::sites() const {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.site_id) == out.end()) out.push_back(r.site_id);
  }
  return out;
}

std::vector<const SubjectRecord*> Manifest::site(const std::string& site_id) const {
  std::vector<const SubjectRecord*> out;
  for (const auto& r : records) {
    if (r.site_id == site_id) out.push_back(&r);
  }
  return out;
}

Matrix read_timeseries_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open time series file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    std::vector<double> row(fields.size());
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (!parse_double(fields[k], row[k])) {
        throw LoadError(path.string() + ":" + std::to_string(line_no) + ": invalid number '" + fields[k] + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw LoadError("empty time series file: " + path.string());
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

void write_timeseries_csv(const std::filesystem::path& path, const Matrix& bold) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write time series file: " + path.string());
  for (Eigen::Index r = 0; r < bold.rows(); ++r) {
    for (Eigen::Index c = 0; c < bold.cols(); ++c) {
      if (c) out << ',';
      out << format_double(bold(r, c));
    }
    out << '\n';
  }
}

Manifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest: " + manifest_path.string());

  std::string line;
  if (!std::getline(in, line)) throw LoadError("empty manifest: " + manifest_path.string());
  const auto header = split_csv_line(line);

  std::map<std::string, std::size_t> column;
  std::vector<std::pair<int, std::size_t>> covariate_columns;
  for (std::size_t k = 0; k < header.size(); ++k) {
    column[header[k]] = k;
    if (header[k].rfind("covariate_", 0) == 0) {
      int index = 0;
      const auto& h = header[k];
      auto [ptr, ec] = std::from_chars(h.data() + 10, h.data() + h.size(), index);
      if (ec != std::errc() || ptr != h.data() + h.size()) {
        throw SchemaError(manifest_path.string() + ": covariate column '" + h + "' must be covariate_<number>");
      }
      covariate_columns.emplace_back(index, k);
    }
  }
  for (const char* required : {"subject_id", "site_id", "label", "bold_path"}) {
    if (!column.contains(required)) {
      throw SchemaError(manifest_path.string() + ": missing column '" + required + "'");
    }
  }
  std::sort(covariate_columns.begin(), covariate_columns.end());

  const auto base = manifest_path.parent_path();
  Manifest manifest;
  std::size_t line_no = 1;
  std::size_t rois = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    fields.resize(std::max(fields.size(), header.size()));
    const auto field = [&](const char* name) -> const std::string& { return fields[column.at(name)]; };

    RejectedRow reject{line_no, field("subject_id"), {}};
    SubjectRecord rec;
    rec.subject_id = field("subject_id");
    rec.site_id = field("site_id");
    double label = 0.0;
    if (rec.site_id.empty()) {
      reject.reason = "missing site_id";
    } else if (!parse_double(field("label"), label) || (label != 0.0 && label != 1.0)) {
      reject.reason = field("label").empty() ? "missing label" : "label must be 0 or 1";
    } else {
      rec.label = static_cast<int>(label);
      rec.covariates.resize(static_cast<Eigen::Index>(covariate_columns.size()));
      for (std::size_t k = 0; k < covariate_columns.size(); ++k) {
        double value = 0.0;
        if (!parse_double(fields[covariate_columns[k].second], value)) {
          reject.reason = "missing or invalid " + header[covariate_columns[k].second];
          break;
        }
        rec.covariates[static_cast<Eigen::Index>(k)] = value;
      }
    }
    if (reject.reason.empty() && field("bold_path").empty()) reject.reason = "missing bold_path";
    if (!reject.reason.empty()) {
      manifest.rejected.push_back(std::move(reject));
      continue;
    }

    std::filesystem::path bold_path = field("bold_path");
    if (bold_path.is_relative()) bold_path = base / bold_path;
    if (!std::filesystem::exists(bold_path)) {
      throw LoadError("time series file not found: " + bold_path.string());
    }
    rec.bold = read_timeseries_csv(bold_path);
    if (rois == 0) rois = rec.rois();
    if (rec.rois() != rois) {
      throw SchemaError("subject " + rec.subject_id + " has " + std::to_string(rec.rois()) +
                        " ROIs, expected " + std::to_string(rois));
    }
    try {
      validate(rec);
    } catch (const ContractError& e) {
      manifest.rejected.push_back({line_no, rec.subject_id, e.what()});
      continue;
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& manifest_path, std::span<const SubjectRecord> records,
                    std::span<const std::string> bold_paths) {
  if (records.size() != bold_paths.size()) throw ContractError("write_manifest: one bold path per record");
  std::ofstream out(manifest_path);
  if (!out) throw LoadError("cannot write manifest: " + manifest_path.string());
  const auto d = records.empty() ? 0 : records.front().covariates.size();
  out << "subject_id,site_id,label";
  for (Eigen::Index k = 0; k < d; ++k) out << ",covariate_" << (k + 1);
  out << ",bold_path\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << r.subject_id << ',' << r.site_id << ',' << r.label;
    for (Eigen::Index k = 0; k < d; ++k) out << ',' << format_double(r.covariates[k]);
    out << ',' << bold_paths[i] << '\n';
  }
}

}  // namespace xsite::dataset
