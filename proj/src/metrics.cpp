#include "xsite/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace xsite::harness {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw SchemaError("metrics: scores and labels differ in length");
  if (scores.empty()) throw ContractError("metrics: no subjects");
  for (int y : labels)
    if (y != 0 && y != 1) throw SchemaError("metrics: labels must be 0 or 1");
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  const auto cases = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t controls = n - cases;
  if (cases == 0 || controls == 0) throw ContractError("roc_auc: both classes are required");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks (1-based) over tie blocks.
  double case_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) case_rank_sum += rank;
    i = j;
  }
  const double nc = static_cast<double>(cases);
  const double u = case_rank_sum - nc * (nc + 1.0) / 2.0;
  return u / (nc * static_cast<double>(controls));
}

double accuracy(std::span<const double> probabilities, std::span<const int> labels) {
  check_inputs(probabilities, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += static_cast<int>(probabilities[i] >= 0.5) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

AucAcc evaluate_auc_acc(std::span<const double> probabilities, std::span<const int> labels) {
  return {roc_auc(probabilities, labels), accuracy(probabilities, labels)};
}

}  // namespace xsite::harness
