// core: command-line front end for the cross-site pipeline.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "xsite/pipeline.hpp"
#include "xsite/props.hpp"
#include "xsite/serialize.hpp"
#include "xsite/synth.hpp"

namespace fs = std::filesystem;
using namespace xsite;

namespace {

dataset::Manifest load(const fs::path& manifest) {
  auto m = dataset::load_manifest(manifest);
  for (const auto& r : m.rejected)
    std::fprintf(stderr, "warning: manifest line %zu (%s) rejected: %s\n", r.line, r.subject_id.c_str(), r.reason.c_str());
  if (m.records.empty()) throw ContractError("manifest has no usable rows");
  return m;
}

harness::PipelineConfig config_or_default(const std::string& path, std::size_t workers) {
  auto cfg = path.empty() ? harness::PipelineConfig{} : io::load_config(path);
  if (workers > 0) cfg.workers = workers;
  return cfg;
}

void print_report(const harness::EvalReport& r) {
  for (const auto& s : r.sites) {
    if (s.skipped)
      std::printf("%-12s n=%-4zu skipped: %s\n", s.site_id.c_str(), s.subjects, s.reason.c_str());
    else
      std::printf("%-12s n=%-4zu AUC %.4f  ACC %.4f  |S| %zu\n", s.site_id.c_str(), s.subjects, *s.auc, *s.acc,
                  s.scaffold_size);
  }
  std::printf("mean AUC %.4f +/- %.4f  ACC %.4f +/- %.4f over %zu sites\n", r.mean_auc, r.std_auc, r.mean_acc,
              r.std_acc, r.evaluated);
}

int run_synth(const std::string& spec_path, const fs::path& out) {
  const auto spec = io::synth_spec_from_json(io::read_json(spec_path));
  const auto records = synth::synth_timeseries_dataset(spec);
  fs::create_directories(out / "bold");
  std::vector<std::string> paths;
  for (const auto& r : records) {
    const std::string rel = "bold/" + r.subject_id + ".csv";
    dataset::write_timeseries_csv(out / rel, r.bold);
    paths.push_back(rel);
  }
  dataset::write_manifest(out / "manifest.csv", records, paths);
  std::printf("wrote %zu subjects to %s\n", records.size(), (out / "manifest.csv").string().c_str());
  return 0;
}

int run_fit(const fs::path& manifest, const std::string& config, const fs::path& out, std::size_t workers) {
  const auto m = load(manifest);
  const auto fitted = harness::fit_pipeline(m.records, config_or_default(config, workers));
  io::save_bundle(out, fitted);
  for (const auto& e : fitted.excluded) std::fprintf(stderr, "note: site %s: %s\n", e.site_id.c_str(), e.reason.c_str());
  std::printf("scaffold %zu edges, final loss %.6g%s\n", fitted.scaffold.size(),
              fitted.training.epoch_loss.empty() ? 0.0 : fitted.training.epoch_loss.back(),
              fitted.training.aborted ? " (training aborted: non-finite loss)" : "");
  return 0;
}

int run_eval(const fs::path& bundle, const fs::path& manifest, const fs::path& report, std::size_t workers) {
  const auto fitted = io::load_bundle(bundle);
  const auto m = load(manifest);
  const auto r = harness::evaluate(fitted, m.records, workers > 0 ? workers : fitted.config.workers);
  io::write_report(report, r);
  print_report(r);
  return 0;
}

int run_scaffold_report(const fs::path& bundle, const fs::path& out, const std::string& json_out) {
  const auto fitted = io::load_bundle(bundle);
  io::write_scaffold_report(out, fitted.scaffold);
  if (!json_out.empty()) io::write_json(json_out, io::scaffold_report_json(fitted.scaffold));
  std::printf("wrote %zu scaffold edges to %s\n", fitted.scaffold.size(), out.string().c_str());
  return 0;
}

int run_loso(const fs::path& manifest, const std::string& config, const fs::path& report, std::size_t workers) {
  const auto m = load(manifest);
  const auto r = harness::run_loso(m.records, config_or_default(config, workers));
  io::write_report(report, r);
  print_report(r);
  return 0;
}

int run_check(std::size_t trials, std::size_t workers) {
  using clock = std::chrono::steady_clock;
  const auto seconds = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  bool ok = true;

  auto t0 = clock::now();
  synth::SynthEdgeSpec spec;
  spec.seed = 7;
  const auto bias = harness::residual_bias_check(spec, workers);
  const bool bias_ok = bias.pooled > 0.2 && bias.site_aware < 0.02;
  ok &= bias_ok;
  std::printf("[%s] residual bias: pooled |corr| %.4f (> 0.2), site-aware |corr| %.5f (< 0.02)  %.1fs\n",
              bias_ok ? "PASS" : "FAIL", bias.pooled, bias.site_aware, seconds(t0));

  t0 = clock::now();
  const auto margin = harness::margin_trials(trials, 11, 1000, workers);
  const bool margin_ok = margin.violations == 0;
  ok &= margin_ok;
  std::printf("[%s] margin stability: %zu trials, %zu/%zu edges covered, %zu violations  %.1fs\n",
              margin_ok ? "PASS" : "FAIL", margin.trials, margin.covered, margin.edges, margin.violations, seconds(t0));

  t0 = clock::now();
  const auto grad = harness::gradient_suite(20, 6, 8, 3);
  const bool grad_ok = grad.max_relative_error < 1e-5;
  ok &= grad_ok;
  std::printf("[%s] gradient check: 20 seeds, max relative error %.3g (< 1e-5)  %.1fs\n", grad_ok ? "PASS" : "FAIL",
              grad.max_relative_error, seconds(t0));
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-site robust brain-network pipeline"};
  app.require_subcommand(1);
  std::size_t workers = 0;
  app.add_option("--workers", workers, "Worker threads (default: config value or 1)");

  std::string spec, out, manifest, config, bundle, report, json_out;
  std::size_t trials = 1000;
  bool props = false;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multi-site dataset");
  synth_cmd->add_option("--spec", spec, "Generator spec JSON")->required();
  synth_cmd->add_option("--out", out, "Output directory")->required();

  auto* fit_cmd = app.add_subcommand("fit", "Fit the pipeline on every subject of a manifest");
  fit_cmd->add_option("--manifest", manifest, "Manifest CSV")->required();
  fit_cmd->add_option("--config", config, "Config JSON");
  fit_cmd->add_option("--out", out, "Bundle directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score a manifest with a fitted bundle");
  eval_cmd->add_option("--bundle", bundle, "Bundle directory")->required();
  eval_cmd->add_option("--manifest", manifest, "Manifest CSV")->required();
  eval_cmd->add_option("--report", report, "Report JSON")->required();

  auto* scaffold_cmd = app.add_subcommand("scaffold-report", "Export the selected scaffold edges");
  scaffold_cmd->add_option("--bundle", bundle, "Bundle directory")->required();
  scaffold_cmd->add_option("--out", out, "Edge CSV")->required();
  scaffold_cmd->add_option("--json", json_out, "Also write the report as JSON");

  auto* loso_cmd = app.add_subcommand("loso", "Leave-one-site-out evaluation");
  loso_cmd->add_option("--manifest", manifest, "Manifest CSV")->required();
  loso_cmd->add_option("--config", config, "Config JSON");
  loso_cmd->add_option("--report", report, "Report JSON")->required();

  auto* check_cmd = app.add_subcommand("check", "Run the property suites");
  check_cmd->add_flag("--props", props, "Residual bias, margin stability and gradient checks");
  check_cmd->add_option("--trials", trials, "Margin-stability trials");

  for (auto* sub : {synth_cmd, fit_cmd, eval_cmd, scaffold_cmd, loso_cmd, check_cmd})
    sub->add_option("--workers", workers, "Worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) return run_synth(spec, out);
    if (*fit_cmd) return run_fit(manifest, config, out, workers);
    if (*eval_cmd) return run_eval(bundle, manifest, report, workers);
    if (*scaffold_cmd) return run_scaffold_report(bundle, out, json_out);
    if (*loso_cmd) return run_loso(manifest, config, report, workers);
    if (*check_cmd) {
      if (!props) {
        std::fprintf(stderr, "check: nothing selected (use --props)\n");
        return 2;
      }
      return run_check(trials, workers > 0 ? workers : 1);
    }
  } catch (const LoadError& e) {
    std::fprintf(stderr, "load error: %s\n", e.what());
    return 3;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "schema error: %s\n", e.what());
    return 4;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
