#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xsite/synth.hpp"

namespace xsite::harness {

/// Within-site residual/covariate correlation after pooled and site-aware deconfounding.
struct ResidualBiasResult {
  double pooled = 0.0;      // mean |corr| over planted edges, sites and covariates
  double site_aware = 0.0;
  std::size_t planted_edges = 0;
};

ResidualBiasResult residual_bias_check(const synth::SynthEdgeSpec& spec, std::size_t workers = 1);

/// Randomized trials of the margin-stability guarantee: random site counts 3-7,
/// planted nuisance parameters perturbed at random scales, shared bootstrap seed.
struct MarginTrialsResult {
  std::size_t trials = 0;
  std::size_t edges = 0;          // edges examined over all trials
  std::size_t covered = 0;        // edges with Delta_j < m*_j
  std::size_t violations = 0;     // covered edges whose decisions disagree
  std::size_t disagreements = 0;  // uncovered edges whose decisions disagree (allowed)
};

MarginTrialsResult margin_trials(std::size_t trials, std::uint64_t seed, std::size_t bootstrap_draws = 1000,
                                 std::size_t workers = 1);

/// Finite-difference gradient check of the gated GNN on random line graphs.
struct GradientSuiteResult {
  std::size_t seeds = 0;
  double max_relative_error = 0.0;
  std::vector<double> per_seed;
};

GradientSuiteResult gradient_suite(std::size_t seeds, std::size_t nodes = 6, std::size_t hidden = 8,
                                   std::uint64_t seed = 0);

}  // namespace xsite::harness
