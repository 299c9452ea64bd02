#pragma once

#include <span>

#include "xsite/common.hpp"

namespace xsite::harness {

struct AucAcc {
  double auc = 0.0;
  double acc = 0.0;
};

/// Mann-Whitney rank statistic over all case/control pairs; tied pairs count 1/2.
/// Throws ContractError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of subjects with (probability >= 0.5) == label.
double accuracy(std::span<const double> probabilities, std::span<const int> labels);

AucAcc evaluate_auc_acc(std::span<const double> probabilities, std::span<const int> labels);

}  // namespace xsite::harness
