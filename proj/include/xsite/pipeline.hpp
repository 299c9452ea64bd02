#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xsite/common.hpp"
#include "xsite/dataset.hpp"
#include "xsite/deconfound.hpp"
#include "xsite/linegraph.hpp"
#include "xsite/model.hpp"
#include "xsite/scaffold.hpp"
#include "xsite/transient.hpp"

namespace xsite::harness {

struct ScaffoldConfig {
  double tau_percentile = 80.0;
  double eta = 0.75;
  double zeta = 0.70;
  std::size_t bootstrap_draws = 1000;  // B
  std::uint64_t seed = 0;
};

struct ThresholdCandidate {
  double tau_percentile = 80.0;
  double eta = 0.75;
  double zeta = 0.70;
};

struct PipelineConfig {
  transient::WindowConfig window;
  ScaffoldConfig scaffold;
  model::ModelConfig model;
  model::TrainConfig train;
  bool deconfound = true;  // false: node features and contrasts use raw FC
  std::size_t workers = 1;
  // Inner site-grouped cross-validation over threshold candidates; 0 disables it.
  std::size_t inner_folds = 0;
  std::vector<ThresholdCandidate> inner_grid;

  void validate() const;
};

struct ExcludedSite {
  std::string site_id;
  std::string reason;
};

struct FittedPipeline {
  PipelineConfig config;
  std::size_t rois = 0;
  std::vector<std::string> training_sites;
  std::vector<ExcludedSite> excluded;  // dropped from training or from the contrasts
  dataset::CovariateStandardizer standardizer;
  deconfound::DeconfounderBank bank;  // empty when deconfounding is disabled
  scaffold::Scaffold scaffold;
  linegraph::ScaffoldGraph graph;
  model::GatedGnnModel model;
  model::TrainResult training;

  model::GraphView view() const { return {graph.graph.propagation, graph.scores.mu0}; }
};

/// Stages 1-3 on training records only: standardizer, per-site deconfounders,
/// scaffold, line graph and model.
FittedPipeline fit_pipeline(std::span<const dataset::SubjectRecord> training, const PipelineConfig& config);

/// Inference-time node features: the aggregated deconfounder is applied and the
/// record's site id is never read.
Matrix inference_features(const FittedPipeline& fitted, const dataset::SubjectRecord& record);

double predict(const FittedPipeline& fitted, const dataset::SubjectRecord& record);
std::vector<double> predict(const FittedPipeline& fitted, std::span<const dataset::SubjectRecord> records,
                            std::size_t workers = 1);

struct SiteResult {
  std::string site_id;
  std::size_t subjects = 0;
  std::size_t cases = 0;
  std::optional<double> auc;  // unset when the fold is skipped
  std::optional<double> acc;
  bool skipped = false;
  std::string reason;
  std::size_t scaffold_size = 0;
  bool training_aborted = false;
};

struct EvalReport {
  static constexpr int schema_version = 1;
  std::vector<SiteResult> sites;  // site order of first appearance
  double mean_auc = 0.0;
  double std_auc = 0.0;  // population standard deviation across evaluated sites
  double mean_acc = 0.0;
  double std_acc = 0.0;
  std::size_t evaluated = 0;
  std::uint64_t seed = 0;
  PipelineConfig config;
};

/// Per-site AUC/ACC of a fitted pipeline on held-out records.
EvalReport evaluate(const FittedPipeline& fitted, std::span<const dataset::SubjectRecord> records,
                    std::size_t workers = 1);

struct LosoOptions {
  // Called once per fold with the records the fold is fitted on.
  std::function<void(const std::string& held_out, std::span<const dataset::SubjectRecord> training)> on_fit;
};

/// Leave-one-site-out evaluation. Throws ContractError with fewer than 2 sites.
EvalReport run_loso(std::span<const dataset::SubjectRecord> records, const PipelineConfig& config,
                    const LosoOptions& options = {});

/// Distinct site ids in order of first appearance.
std::vector<std::string> site_order(std::span<const dataset::SubjectRecord> records);

}  // namespace xsite::harness
