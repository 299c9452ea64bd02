#include "xsite/transient.hpp"

#include <algorithm>
#include <cmath>

#include "xsite/dataset.hpp"

namespace xsite::transient {

void WindowConfig::validate() const {
  if (length < 3) throw ContractError("window length must be at least 3");
  if (stride < 1) throw ContractError("window stride must be at least 1");
  if (!(rho_clamp > 0.0 && rho_clamp < 1.0)) throw ContractError("rho_clamp must lie in (0, 1)");
  if (!(eps_feature > 0.0)) throw ContractError("eps_feature must be positive");
}

std::size_t window_count(std::size_t time_points, const WindowConfig& cfg) {
  if (time_points < cfg.length) {
    throw ContractError("time series has " + std::to_string(time_points) + " points; need at least W = " +
                        std::to_string(cfg.length));
  }
  return (time_points - cfg.length) / cfg.stride + 1;
}

double fisher_z(double rho) { return 0.5 * std::log((1.0 + rho) / (1.0 - rho)); }

std::vector<double> window_trajectory(const Matrix& bold, std::pair<std::size_t, std::size_t> pair,
                                      const WindowConfig& cfg) {
  cfg.validate();
  const auto t = static_cast<std::size_t>(bold.rows());
  const std::size_t windows = window_count(t, cfg);
  const auto u = static_cast<Eigen::Index>(pair.first);
  const auto v = static_cast<Eigen::Index>(pair.second);
  if (u >= bold.cols() || v >= bold.cols()) throw ContractError("window_trajectory: ROI index out of range");

  std::vector<double> out(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    const auto start = static_cast<Eigen::Index>(w * cfg.stride);
    const auto len = static_cast<Eigen::Index>(cfg.length);
    const auto x = bold.col(u).segment(start, len);
    const auto y = bold.col(v).segment(start, len);
    const double rho = dataset::pearson(std::span<const double>(x.data(), cfg.length),
                                        std::span<const double>(y.data(), cfg.length));
    out[w] = fisher_z(std::clamp(rho, -cfg.rho_clamp, cfg.rho_clamp));
  }
  return out;
}

Descriptors temporal_descriptors(std::span<const double> trajectory) {
  if (trajectory.empty()) throw ContractError("temporal_descriptors: empty trajectory");
  const auto n = static_cast<double>(trajectory.size());
  Descriptors d;
  for (double c : trajectory) d.mean += c;
  d.mean /= n;
  double ss = 0.0;
  for (double c : trajectory) ss += (c - d.mean) * (c - d.mean);
  d.volatility = std::sqrt(ss / n);
  const auto [lo, hi] = std::minmax_element(trajectory.begin(), trajectory.end());
  d.flexibility = *hi - *lo;
  return d;
}

std::vector<Descriptors> scaffold_descriptors(const Matrix& bold, const scaffold::Scaffold& scaffold,
                                              const WindowConfig& cfg) {
  const dataset::EdgeIndexMap edges(scaffold.rois);
  std::vector<Descriptors> out;
  out.reserve(scaffold.size());
  for (std::size_t j : scaffold.selected) {
    out.push_back(temporal_descriptors(window_trajectory(bold, edges.pair(j), cfg)));
  }
  return out;
}

Matrix build_node_features(const deconfound::ResidualFc& residual, const Matrix& bold,
                           const scaffold::Scaffold& scaffold, const WindowConfig& cfg, Phase phase) {
  if (scaffold.selected.empty()) throw ContractError("build_node_features: empty scaffold");
  const auto expected =
      phase == Phase::training ? deconfound::ResidualKind::site_residual : deconfound::ResidualKind::inference_residual;
  if (residual.kind != expected) {
    throw ContractError(phase == Phase::training ? "training features require site residuals"
                                                 : "inference features require aggregated-deconfounder residuals");
  }
  if (static_cast<std::size_t>(bold.cols()) != scaffold.rois) throw SchemaError("BOLD ROI count does not match scaffold");
  if (residual.values.size() != scaffold.stats.consensus.size()) throw SchemaError("residual length mismatch");

  const auto descriptors = scaffold_descriptors(bold, scaffold, cfg);
  Matrix h(static_cast<Eigen::Index>(scaffold.size()), 3);
  for (std::size_t p = 0; p < scaffold.size(); ++p) {
    const auto row = static_cast<Eigen::Index>(p);
    h(row, 0) = residual.values[scaffold.selected[p]];
    h(row, 1) = std::log(descriptors[p].volatility + cfg.eps_feature);
    h(row, 2) = std::log(descriptors[p].flexibility + cfg.eps_feature);
  }
  return h;
}

namespace {

void column_moments(std::span<const Matrix> features, Vector& mean, Vector& sd) {
  if (features.empty()) throw ContractError("compare_feature_distributions: empty sample");
  const auto cols = features.front().cols();
  mean = Vector::Zero(cols);
  double rows = 0.0;
  for (const auto& f : features) {
    mean += f.colwise().sum().transpose();
    rows += static_cast<double>(f.rows());
  }
  mean /= rows;
  Vector ss = Vector::Zero(cols);
  for (const auto& f : features) ss += (f.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  sd = (ss / rows).array().sqrt().matrix();
}

}  // namespace

FeatureShift compare_feature_distributions(std::span<const Matrix> train_features,
                                           std::span<const Matrix> infer_features) {
  FeatureShift out;
  column_moments(train_features, out.mean_train, out.std_train);
  column_moments(infer_features, out.mean_infer, out.std_infer);
  const Vector pooled = (0.5 * (out.std_train.array().square() + out.std_infer.array().square())).sqrt().matrix();
  out.standardized_mean_difference = (out.mean_infer - out.mean_train).cwiseQuotient(
      pooled.cwiseMax(Vector::Constant(pooled.size(), 1e-12)));
  return out;
}

}  // namespace xsite::transient
