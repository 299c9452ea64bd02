#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "xsite/pipeline.hpp"
#include "xsite/synth.hpp"

namespace xsite::io {

using json = nlohmann::json;

inline constexpr int bundle_schema_version = 1;

/// Config keys: window {W, S_w}, scaffold {tau_percentile, eta, zeta, B, seed},
/// model {D, L, lambda, tau}, train {lr, weight_decay, K, gamma, epochs, batch, seed},
/// plus deconfound, workers, inner_folds and inner_grid. Missing keys keep their
/// defaults; unknown keys raise SchemaError.
harness::PipelineConfig config_from_json(const json& j);
json to_json(const harness::PipelineConfig& config);
harness::PipelineConfig load_config(const std::filesystem::path& path);

json to_json(const harness::EvalReport& report);
harness::EvalReport report_from_json(const json& j);
void write_report(const std::filesystem::path& path, const harness::EvalReport& report);

json to_json(const harness::FittedPipeline& fitted);
harness::FittedPipeline pipeline_from_json(const json& j);

/// bundle_dir/model.json
void save_bundle(const std::filesystem::path& bundle_dir, const harness::FittedPipeline& fitted);
harness::FittedPipeline load_bundle(const std::filesystem::path& bundle_dir);

/// Scaffold edges ranked by |d_com|: rank, edge, roi_u, roi_v, sign, abs_d_com, kappa, pi.
void write_scaffold_report(const std::filesystem::path& path, const scaffold::Scaffold& scaffold);

/// Same edges with signed d_com, plus thresholds, B and seed.
json scaffold_report_json(const scaffold::Scaffold& scaffold);

/// Time-series generator spec. {"preset": "planted_module", "sites", "per_class", "seed"}
/// selects the built-in spec; otherwise every SynthTimeSeriesSpec field may be given.
synth::SynthTimeSeriesSpec synth_spec_from_json(const json& j);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace xsite::io
