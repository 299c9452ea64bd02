#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "xsite/common.hpp"
#include "xsite/deconfound.hpp"
#include "xsite/scaffold.hpp"

namespace xsite::transient {

struct WindowConfig {
  std::size_t length = 30;          // W, time points per window
  std::size_t stride = 5;           // S_w
  double rho_clamp = 1.0 - 1e-6;    // |rho| cap before Fisher-z
  double eps_feature = 1e-6;        // floor inside the log descriptors

  void validate() const;
};

/// L = floor((T - W) / S_w) + 1; incomplete trailing windows are dropped.
std::size_t window_count(std::size_t time_points, const WindowConfig& cfg);

double fisher_z(double rho);

/// Fisher-z windowed correlations of ROIs (u, v). Zero-variance windows give 0.
/// Throws ContractError when T < W.
std::vector<double> window_trajectory(const Matrix& bold, std::pair<std::size_t, std::size_t> pair,
                                      const WindowConfig& cfg);

struct Descriptors {
  double mean = 0.0;
  double volatility = 0.0;   // s, population standard deviation
  double flexibility = 0.0;  // f, max - min
};

Descriptors temporal_descriptors(std::span<const double> trajectory);

enum class Phase { training, inference };

/// M_S x 3 node features: (residual FC, log(s + eps), log(f + eps)), rows in
/// scaffold enumeration order. Training takes site residuals, inference takes
/// residuals from the aggregated deconfounder.
Matrix build_node_features(const deconfound::ResidualFc& residual, const Matrix& bold,
                           const scaffold::Scaffold& scaffold, const WindowConfig& cfg, Phase phase);

/// Descriptors of every scaffold edge for one subject, in scaffold order.
std::vector<Descriptors> scaffold_descriptors(const Matrix& bold, const scaffold::Scaffold& scaffold,
                                              const WindowConfig& cfg);

/// Two-sample summary used to compare training-time (site residual) and
/// inference-time (aggregated residual) feature distributions.
struct FeatureShift {
  Vector mean_train;
  Vector mean_infer;
  Vector std_train;
  Vector std_infer;
  Vector standardized_mean_difference;  // (mean_infer - mean_train) / pooled std
};

FeatureShift compare_feature_distributions(std::span<const Matrix> train_features,
                                           std::span<const Matrix> infer_features);

}  // namespace xsite::transient
