#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xsite/common.hpp"
#include "xsite/linegraph.hpp"

namespace xsite::model {

struct ModelConfig {
  std::size_t hidden = 64;  // D
  std::size_t layers = 2;   // L
  double lambda = 1.0;      // prior strength
  double tau = 1.0;         // gate temperature
  double eps_z = 1e-6;      // readout denominator floor
  std::uint64_t seed = 0;   // parameter initialization

  void validate() const;
};

/// y = weight * x + bias
struct Dense {
  Matrix weight;
  Vector bias;
};

/// second(act(first(x)))
struct Mlp {
  Dense first;
  Dense second;
};

struct Parameters {
  Dense embed;                // 3 -> D
  Mlp context;                // phi: D -> D -> D
  Mlp gate;                   // psi: 2D -> D -> 1
  std::vector<Dense> layers;  // F^(l): 2D -> D
  Mlp classifier;             // rho: D -> D -> 1

  /// Named flat views over every parameter array, in a fixed order.
  struct Block {
    std::string group;  // embed, context, gate, layer1.., classifier
    std::string name;
    double* data;
    std::size_t size;
  };
  std::vector<Block> blocks();
  std::size_t count() const;

  /// Same shapes, all zeros.
  Parameters zeros_like() const;
  void add(const Parameters& other, double scale = 1.0);
};

/// Smooth ReLU-like activation used inside every MLP and update function.
double silu(double x);
double silu_derivative(double x);
double logistic(double x);

/// Graph quantities shared by every subject.
struct GraphView {
  const linegraph::SparseMatrix& propagation;  // normalized propagation matrix
  const Vector& mu0;                           // prior scores
};

class GatedGnnModel {
 public:
  GatedGnnModel() = default;
  /// Fan-in scaled uniform initialization driven by config.seed.
  explicit GatedGnnModel(const ModelConfig& config);
  GatedGnnModel(const ModelConfig& config, Parameters params);

  const ModelConfig& config() const { return config_; }
  ModelConfig& config() { return config_; }
  const Parameters& params() const { return params_; }
  Parameters& params() { return params_; }

  Matrix embed(const Matrix& features) const;
  double logit(const Matrix& features, const GraphView& graph) const;
  double predict(const Matrix& features, const GraphView& graph) const;
  Vector gates(const Matrix& features, const GraphView& graph) const;
  Vector representation(const Matrix& features, const GraphView& graph) const;

 private:
  ModelConfig config_;
  Parameters params_;
};

// Stage functions. Each takes the embedded node features (M_S x D).

Vector subject_context(const Matrix& embedded, const Mlp& context);
Vector compute_gates(const Matrix& embedded, const Vector& context, const Vector& mu0, const Mlp& gate,
                     double lambda, double tau);
Matrix gated_message_pass(const Matrix& embedded, const Vector& gates, const linegraph::SparseMatrix& propagation,
                          std::span<const Dense> layers);
Vector readout(const Matrix& node_states, const Vector& gates, double eps_z);

/// Mean binary cross-entropy on logits plus gamma * mean |sum_p g_p - K|.
double loss_total(std::span<const double> logits, std::span<const int> labels, std::span<const Vector> gates,
                  double budget, double gamma);

struct Objective {
  double budget = 80.0;  // K
  double gamma = 5e-4;
};

struct Batch {
  std::vector<Matrix> features;  // per subject, M_S x 3
  std::vector<int> labels;
};

/// Objective value and analytic gradient on a batch (gradient summed in subject order).
double loss_and_gradient(const GatedGnnModel& model, const Batch& batch, const GraphView& graph,
                         const Objective& objective, Parameters* gradient, std::size_t workers = 1);

double batch_loss(const GatedGnnModel& model, const Batch& batch, const GraphView& graph,
                  const Objective& objective);

struct GradCheckReport {
  struct Group {
    std::string name;
    double relative_error = 0.0;
    double analytic_norm = 0.0;
  };
  std::vector<Group> groups;
  double max_relative_error = 0.0;
  std::string worst_group;
};

/// Fourth-order central finite differences against the analytic gradient. Relative
/// error per parameter group is ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, 1e-12).
GradCheckReport grad_check(const GatedGnnModel& model, const Batch& batch, const GraphView& graph,
                           const Objective& objective, double step = 1e-4);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  double budget = 80.0;  // K
  double gamma = 5e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean mini-batch objective per epoch
  double effective_budget = 0.0;   // K after clamping to (0, M_S]
  bool aborted = false;            // non-finite loss; parameters rolled back
};

/// Adam with L2 weight decay folded into the gradient. Deterministic given the
/// seed and independent of `workers`.
TrainResult train(GatedGnnModel& model, const Batch& data, const GraphView& graph, const TrainConfig& config,
                  std::size_t workers = 1);

}  // namespace xsite::model
