#include "xsite/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xsite::model {

double silu(double x) { return x * logistic(x); }

double silu_derivative(double x) {
  const double s = logistic(x);
  return s * (1.0 + x * (1.0 - s));
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Matrix apply_rows(const Dense& d, const Matrix& x) {
  return (x * d.weight.transpose()).rowwise() + d.bias.transpose();
}

Matrix silu_of(const Matrix& x) { return x.unaryExpr([](double v) { return silu(v); }); }
Matrix silu_grad_of(const Matrix& x) { return x.unaryExpr([](double v) { return silu_derivative(v); }); }

Dense make_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Dense d{Matrix(out, in), Vector(out)};
  for (Eigen::Index k = 0; k < d.weight.size(); ++k) d.weight.data()[k] = dist(rng);
  for (Eigen::Index k = 0; k < d.bias.size(); ++k) d.bias[k] = dist(rng);
  return d;
}

Dense zeros_like(const Dense& d) { return {Matrix::Zero(d.weight.rows(), d.weight.cols()), Vector::Zero(d.bias.size())}; }
Mlp zeros_like(const Mlp& m) { return {zeros_like(m.first), zeros_like(m.second)}; }

void add_into(Dense& dst, const Dense& src, double s) {
  dst.weight += s * src.weight;
  dst.bias += s * src.bias;
}
void add_into(Mlp& dst, const Mlp& src, double s) {
  add_into(dst.first, src.first, s);
  add_into(dst.second, src.second, s);
}

// Intermediate values of one subject's forward pass.
struct Trace {
  Matrix embedded;
  Vector pooled;
  Vector context_pre;
  Vector context_hidden;
  Vector context;
  Matrix gate_input;
  Matrix gate_pre;
  Matrix gate_hidden;
  Vector gate_logit;
  Vector gates;
  std::vector<Matrix> states;  // H^(0) .. H^(L)
  std::vector<Matrix> layer_input;
  std::vector<Matrix> layer_pre;
  double gate_sum = 0.0;
  Vector z;
  Vector classifier_pre;
  Vector classifier_hidden;
  double logit = 0.0;
};

Trace forward(const Parameters& p, const ModelConfig& cfg, const Matrix& features, const GraphView& graph) {
  const auto n = features.rows();
  const auto d = static_cast<Eigen::Index>(cfg.hidden);
  if (features.cols() != 3) throw SchemaError("node features must have 3 columns");
  if (graph.propagation.rows() != n || graph.mu0.size() != n) {
    throw SchemaError("node feature rows must match the line graph size");
  }
  Trace t;
  t.embedded = apply_rows(p.embed, features);
  t.pooled = t.embedded.colwise().mean().transpose();
  t.context_pre = p.context.first.weight * t.pooled + p.context.first.bias;
  t.context_hidden = t.context_pre.unaryExpr([](double v) { return silu(v); });
  t.context = p.context.second.weight * t.context_hidden + p.context.second.bias;

  t.gate_input.resize(n, 2 * d);
  t.gate_input.leftCols(d) = t.embedded;
  t.gate_input.rightCols(d) = t.context.transpose().replicate(n, 1);
  t.gate_pre = apply_rows(p.gate.first, t.gate_input);
  t.gate_hidden = silu_of(t.gate_pre);
  t.gate_logit = (t.gate_hidden * p.gate.second.weight.transpose()).col(0).array() + p.gate.second.bias[0];
  t.gate_logit += cfg.lambda * graph.mu0;
  t.gates = t.gate_logit.unaryExpr([&](double l) { return logistic(l / cfg.tau); });

  t.states.push_back(t.embedded);
  for (const auto& layer : p.layers) {
    const Matrix& h = t.states.back();
    Matrix input(n, 2 * d);
    input.leftCols(d) = h;
    input.rightCols(d) = graph.propagation * (t.gates.asDiagonal() * h);
    Matrix pre = apply_rows(layer, input);
    t.states.push_back(h + silu_of(pre));
    t.layer_input.push_back(std::move(input));
    t.layer_pre.push_back(std::move(pre));
  }

  t.gate_sum = t.gates.sum();
  t.z = (t.states.back().transpose() * t.gates) / (t.gate_sum + cfg.eps_z);
  t.classifier_pre = p.classifier.first.weight * t.z + p.classifier.first.bias;
  t.classifier_hidden = t.classifier_pre.unaryExpr([](double v) { return silu(v); });
  t.logit = p.classifier.second.weight.row(0).dot(t.classifier_hidden) + p.classifier.second.bias[0];
  return t;
}

// Reverse pass. d_logit and d_gate_sum are the upstream derivatives of the
// subject's loss contribution.
void backward(const Parameters& p, const ModelConfig& cfg, const Matrix& features, const GraphView& graph,
              const Trace& t, double d_logit, double d_gate_sum, Parameters& g) {
  const auto n = features.rows();
  const auto d = static_cast<Eigen::Index>(cfg.hidden);

  // Classifier.
  g.classifier.second.weight.row(0) += d_logit * t.classifier_hidden.transpose();
  g.classifier.second.bias[0] += d_logit;
  const Vector d_cls_pre = (d_logit * p.classifier.second.weight.row(0).transpose())
                               .cwiseProduct(t.classifier_pre.unaryExpr([](double v) { return silu_derivative(v); }));
  g.classifier.first.weight += d_cls_pre * t.z.transpose();
  g.classifier.first.bias += d_cls_pre;
  const Vector dz = p.classifier.first.weight.transpose() * d_cls_pre;

  // Gated readout.
  const double denom = t.gate_sum + cfg.eps_z;
  const Matrix& h_last = t.states.back();
  Matrix dh = (t.gates / denom) * dz.transpose();
  Vector d_gates = ((h_last.rowwise() - t.z.transpose()) * dz) / denom;
  d_gates.array() += d_gate_sum;

  // Message-passing layers, last to first.
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const Matrix d_pre = dh.cwiseProduct(silu_grad_of(t.layer_pre[l]));
    g.layers[l].weight += d_pre.transpose() * t.layer_input[l];
    g.layers[l].bias += d_pre.colwise().sum().transpose();
    const Matrix d_input = d_pre * p.layers[l].weight;
    const Matrix d_gated = graph.propagation.transpose() * d_input.rightCols(d);
    const Matrix& h = t.states[l];
    d_gates += d_gated.cwiseProduct(h).rowwise().sum();
    dh = dh + d_input.leftCols(d) + t.gates.asDiagonal() * d_gated;
  }
  Matrix d_embedded = dh;

  // Gates.
  const Vector d_logit_gate = d_gates.cwiseProduct(t.gates.cwiseProduct((1.0 - t.gates.array()).matrix())) / cfg.tau;
  g.gate.second.weight.row(0) += (t.gate_hidden.transpose() * d_logit_gate).transpose();
  g.gate.second.bias[0] += d_logit_gate.sum();
  const Matrix d_gate_pre =
      (d_logit_gate * p.gate.second.weight.row(0)).cwiseProduct(silu_grad_of(t.gate_pre));
  g.gate.first.weight += d_gate_pre.transpose() * t.gate_input;
  g.gate.first.bias += d_gate_pre.colwise().sum().transpose();
  const Matrix d_gate_input = d_gate_pre * p.gate.first.weight;
  d_embedded += d_gate_input.leftCols(d);
  const Vector d_context = d_gate_input.rightCols(d).colwise().sum().transpose();

  // Context MLP over the pooled embedding.
  g.context.second.weight += d_context * t.context_hidden.transpose();
  g.context.second.bias += d_context;
  const Vector d_context_pre = (p.context.second.weight.transpose() * d_context)
                                   .cwiseProduct(t.context_pre.unaryExpr([](double v) { return silu_derivative(v); }));
  g.context.first.weight += d_context_pre * t.pooled.transpose();
  g.context.first.bias += d_context_pre;
  const Vector d_pooled = p.context.first.weight.transpose() * d_context_pre;
  d_embedded.rowwise() += d_pooled.transpose() / static_cast<double>(n);

  // Embedding.
  g.embed.weight += d_embedded.transpose() * features;
  g.embed.bias += d_embedded.colwise().sum().transpose();
}

double bce_with_logit(double logit, int label) { return softplus(logit) - static_cast<double>(label) * logit; }

double sign_of(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

double subset_loss_and_gradient(const GatedGnnModel& model, const Batch& data, std::span<const std::size_t> subset,
                                const GraphView& graph, const Objective& objective, Parameters* gradient,
                                std::vector<Parameters>& scratch, std::size_t workers) {
  const std::size_t b = subset.size();
  if (b == 0) throw ContractError("empty batch");
  const double scale = 1.0 / static_cast<double>(b);
  std::vector<double> contribution(b);
  if (gradient) {
    if (scratch.size() < b) scratch.resize(b, gradient->zeros_like());
    for (std::size_t k = 0; k < b; ++k) scratch[k] = gradient->zeros_like();
  }
  parallel_for(b, workers, [&](std::size_t k) {
    const std::size_t i = subset[k];
    const auto t = forward(model.params(), model.config(), data.features[i], graph);
    const double excess = t.gate_sum - objective.budget;
    contribution[k] = scale * (bce_with_logit(t.logit, data.labels[i]) + objective.gamma * std::abs(excess));
    if (gradient) {
      const double d_logit = scale * (logistic(t.logit) - static_cast<double>(data.labels[i]));
      const double d_sum = scale * objective.gamma * sign_of(excess);
      backward(model.params(), model.config(), data.features[i], graph, t, d_logit, d_sum, scratch[k]);
    }
  });
  double total = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    total += contribution[k];
    if (gradient) gradient->add(scratch[k]);
  }
  return total;
}

}  // namespace

void ModelConfig::validate() const {
  if (hidden == 0) throw ContractError("hidden size must be positive");
  if (layers == 0) throw ContractError("need at least one message-passing layer");
  if (!(lambda >= 0.0)) throw ContractError("lambda must be nonnegative");
  if (!(tau > 0.0)) throw ContractError("tau must be positive");
  if (!(eps_z > 0.0)) throw ContractError("eps_z must be positive");
}

std::vector<Parameters::Block> Parameters::blocks() {
  std::vector<Block> out;
  const auto push_dense = [&](const std::string& group, const std::string& name, Dense& d) {
    out.push_back({group, name + ".weight", d.weight.data(), static_cast<std::size_t>(d.weight.size())});
    out.push_back({group, name + ".bias", d.bias.data(), static_cast<std::size_t>(d.bias.size())});
  };
  push_dense("embed", "embed", embed);
  push_dense("context", "context.first", context.first);
  push_dense("context", "context.second", context.second);
  push_dense("gate", "gate.first", gate.first);
  push_dense("gate", "gate.second", gate.second);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string group = "layer" + std::to_string(l + 1);
    push_dense(group, group, layers[l]);
  }
  push_dense("classifier", "classifier.first", classifier.first);
  push_dense("classifier", "classifier.second", classifier.second);
  return out;
}

std::size_t Parameters::count() const {
  const auto dense = [](const Dense& d) { return static_cast<std::size_t>(d.weight.size() + d.bias.size()); };
  std::size_t total = dense(embed) + dense(context.first) + dense(context.second) + dense(gate.first) +
                      dense(gate.second) + dense(classifier.first) + dense(classifier.second);
  for (const auto& l : layers) total += dense(l);
  return total;
}

Parameters Parameters::zeros_like() const {
  Parameters z;
  z.embed = model::zeros_like(embed);
  z.context = model::zeros_like(context);
  z.gate = model::zeros_like(gate);
  for (const auto& l : layers) z.layers.push_back(model::zeros_like(l));
  z.classifier = model::zeros_like(classifier);
  return z;
}

void Parameters::add(const Parameters& other, double scale) {
  add_into(embed, other.embed, scale);
  add_into(context, other.context, scale);
  add_into(gate, other.gate, scale);
  for (std::size_t l = 0; l < layers.size(); ++l) add_into(layers[l], other.layers[l], scale);
  add_into(classifier, other.classifier, scale);
}

GatedGnnModel::GatedGnnModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(mix_seed(config.seed, 0));
  const std::size_t d = config.hidden;
  params_.embed = make_dense(3, d, rng);
  params_.context = {make_dense(d, d, rng), make_dense(d, d, rng)};
  params_.gate = {make_dense(2 * d, d, rng), make_dense(d, 1, rng)};
  for (std::size_t l = 0; l < config.layers; ++l) params_.layers.push_back(make_dense(2 * d, d, rng));
  params_.classifier = {make_dense(d, d, rng), make_dense(d, 1, rng)};
}

GatedGnnModel::GatedGnnModel(const ModelConfig& config, Parameters params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto d = static_cast<Eigen::Index>(config.hidden);
  if (params_.embed.weight.rows() != d || params_.embed.weight.cols() != 3 ||
      params_.layers.size() != config.layers || params_.gate.first.weight.cols() != 2 * d) {
    throw SchemaError("parameter shapes do not match the model configuration");
  }
}

Matrix GatedGnnModel::embed(const Matrix& features) const { return apply_rows(params_.embed, features); }

double GatedGnnModel::logit(const Matrix& features, const GraphView& graph) const {
  return forward(params_, config_, features, graph).logit;
}

double GatedGnnModel::predict(const Matrix& features, const GraphView& graph) const {
  return logistic(logit(features, graph));
}

Vector GatedGnnModel::gates(const Matrix& features, const GraphView& graph) const {
  return forward(params_, config_, features, graph).gates;
}

Vector GatedGnnModel::representation(const Matrix& features, const GraphView& graph) const {
  return forward(params_, config_, features, graph).z;
}

Vector subject_context(const Matrix& embedded, const Mlp& context) {
  if (embedded.rows() == 0) throw ContractError("subject_context: no scaffold nodes");
  const Vector pooled = embedded.colwise().mean().transpose();
  const Vector hidden = (context.first.weight * pooled + context.first.bias).unaryExpr([](double v) { return silu(v); });
  return context.second.weight * hidden + context.second.bias;
}

Vector compute_gates(const Matrix& embedded, const Vector& context, const Vector& mu0, const Mlp& gate, double lambda,
                     double tau) {
  if (!(tau > 0.0)) throw ContractError("compute_gates: tau must be positive");
  const auto n = embedded.rows();
  const auto d = embedded.cols();
  Matrix input(n, d + context.size());
  input.leftCols(d) = embedded;
  input.rightCols(context.size()) = context.transpose().replicate(n, 1);
  const Matrix hidden = silu_of(apply_rows(gate.first, input));
  Vector logit = (hidden * gate.second.weight.transpose()).col(0).array() + gate.second.bias[0];
  logit += lambda * mu0;
  return logit.unaryExpr([&](double l) { return logistic(l / tau); });
}

Matrix gated_message_pass(const Matrix& embedded, const Vector& gates, const linegraph::SparseMatrix& propagation,
                          std::span<const Dense> layers) {
  const auto n = embedded.rows();
  const auto d = embedded.cols();
  Matrix h = embedded;
  for (const auto& layer : layers) {
    Matrix input(n, 2 * d);
    input.leftCols(d) = h;
    input.rightCols(d) = propagation * (gates.asDiagonal() * h);
    h += silu_of(apply_rows(layer, input));
  }
  return h;
}

Vector readout(const Matrix& node_states, const Vector& gates, double eps_z) {
  return (node_states.transpose() * gates) / (gates.sum() + eps_z);
}

double loss_total(std::span<const double> logits, std::span<const int> labels, std::span<const Vector> gates,
                  double budget, double gamma) {
  if (logits.empty()) throw ContractError("loss_total: empty batch");
  if (logits.size() != labels.size() || logits.size() != gates.size()) {
    throw SchemaError("loss_total: logits, labels and gates must align");
  }
  double ce = 0.0;
  double sparse = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    ce += bce_with_logit(logits[i], labels[i]);
    sparse += std::abs(gates[i].sum() - budget);
  }
  const auto n = static_cast<double>(logits.size());
  return ce / n + gamma * sparse / n;
}

double loss_and_gradient(const GatedGnnModel& model, const Batch& batch, const GraphView& graph,
                         const Objective& objective, Parameters* gradient, std::size_t workers) {
  std::vector<std::size_t> all(batch.features.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<Parameters> scratch;
  if (gradient) *gradient = model.params().zeros_like();
  return subset_loss_and_gradient(model, batch, all, graph, objective, gradient, scratch, workers);
}

double batch_loss(const GatedGnnModel& model, const Batch& batch, const GraphView& graph, const Objective& objective) {
  return loss_and_gradient(model, batch, graph, objective, nullptr);
}

GradCheckReport grad_check(const GatedGnnModel& model, const Batch& batch, const GraphView& graph,
                           const Objective& objective, double step) {
  Parameters analytic;
  loss_and_gradient(model, batch, graph, objective, &analytic);

  GatedGnnModel probe = model;
  auto probe_blocks = probe.params().blocks();
  auto analytic_blocks = analytic.blocks();

  struct Accum {
    double diff = 0.0;
    double a = 0.0;
    double n = 0.0;
  };
  std::vector<std::string> order;
  std::vector<Accum> accum;
  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    const auto& group = probe_blocks[b].group;
    auto it = std::find(order.begin(), order.end(), group);
    std::size_t slot = static_cast<std::size_t>(it - order.begin());
    if (it == order.end()) {
      order.push_back(group);
      accum.emplace_back();
    }
    for (std::size_t k = 0; k < probe_blocks[b].size; ++k) {
      double& theta = probe_blocks[b].data[k];
      const double saved = theta;
      const auto at = [&](double offset) {
        theta = saved + offset;
        return batch_loss(probe, batch, graph, objective);
      };
      const double numeric = (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
      theta = saved;
      const double exact = analytic_blocks[b].data[k];
      accum[slot].diff += (exact - numeric) * (exact - numeric);
      accum[slot].a += exact * exact;
      accum[slot].n += numeric * numeric;
    }
  }

  GradCheckReport report;
  for (std::size_t s = 0; s < order.size(); ++s) {
    const double scale = std::max({std::sqrt(accum[s].a), std::sqrt(accum[s].n), 1e-12});
    const double rel = std::sqrt(accum[s].diff) / scale;
    report.groups.push_back({order[s], rel, std::sqrt(accum[s].a)});
    if (rel >= report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_group = order[s];
    }
  }
  return report;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ContractError("learning rate must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ContractError("weight decay must be nonnegative");
  if (!(budget > 0.0)) throw ContractError("gate budget K must be positive");
  if (!(gamma >= 0.0)) throw ContractError("gamma must be nonnegative");
  if (batch_size == 0) throw ContractError("batch size must be positive");
}

TrainResult train(GatedGnnModel& model, const Batch& data, const GraphView& graph, const TrainConfig& config,
                  std::size_t workers) {
  config.validate();
  const std::size_t n = data.features.size();
  if (n == 0 || data.labels.size() != n) throw ContractError("train: need labelled subjects");
  const auto nodes = static_cast<double>(graph.propagation.rows());
  if (nodes < 1.0) throw ContractError("train: empty line graph");

  TrainResult result;
  result.effective_budget = std::min(config.budget, nodes);
  const Objective objective{result.effective_budget, config.gamma};

  Parameters first_moment = model.params().zeros_like();
  Parameters second_moment = model.params().zeros_like();
  Parameters gradient = model.params().zeros_like();
  std::vector<Parameters> scratch;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const Parameters checkpoint = model.params();

    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> subset(order.data() + start, stop - start);
      gradient = model.params().zeros_like();
      const double loss =
          subset_loss_and_gradient(model, data, subset, graph, objective, &gradient, scratch, workers);
      if (!std::isfinite(loss)) {
        model.params() = checkpoint;
        result.aborted = true;
        return result;
      }
      epoch_total += loss;
      ++batches;

      ++step;
      const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      auto theta = model.params().blocks();
      auto grad = gradient.blocks();
      auto m1 = first_moment.blocks();
      auto m2 = second_moment.blocks();
      for (std::size_t b = 0; b < theta.size(); ++b) {
        for (std::size_t k = 0; k < theta[b].size; ++k) {
          const double g = grad[b].data[k] + config.weight_decay * theta[b].data[k];
          m1[b].data[k] = config.beta1 * m1[b].data[k] + (1.0 - config.beta1) * g;
          m2[b].data[k] = config.beta2 * m2[b].data[k] + (1.0 - config.beta2) * g * g;
          const double m_hat = m1[b].data[k] / bias1;
          const double v_hat = m2[b].data[k] / bias2;
          theta[b].data[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
        }
      }
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(batches));
  }
  return result;
}

}  // namespace xsite::model
