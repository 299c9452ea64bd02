#include "xsite/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "xsite/metrics.hpp"

namespace xsite::harness {

void PipelineConfig::validate() const {
  window.validate();
  model.validate();
  train.validate();
  if (!(scaffold.tau_percentile >= 0.0 && scaffold.tau_percentile <= 100.0))
    throw ContractError("config: scaffold.tau_percentile must lie in [0, 100]");
  if (!(scaffold.eta >= 0.0 && scaffold.eta <= 1.0) || !(scaffold.zeta >= 0.0 && scaffold.zeta <= 1.0))
    throw ContractError("config: scaffold.eta and scaffold.zeta must lie in [0, 1]");
  if (scaffold.bootstrap_draws == 0) throw ContractError("config: scaffold.B must be positive");
  if (workers == 0) throw ContractError("config: workers must be positive");
  if (inner_folds == 1) throw ContractError("config: inner_folds must be 0 (off) or at least 2");
}

std::vector<std::string> site_order(std::span<const dataset::SubjectRecord> records) {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (std::find(out.begin(), out.end(), r.site_id) == out.end()) out.push_back(r.site_id);
  return out;
}

namespace {

void check_records(std::span<const dataset::SubjectRecord> records, std::size_t rois, std::size_t covariates) {
  for (const auto& r : records) {
    dataset::validate(r);
    if (r.rois() != rois) throw SchemaError("subject " + r.subject_id + ": ROI count differs from the other subjects");
    if (static_cast<std::size_t>(r.covariates.size()) != covariates)
      throw SchemaError("subject " + r.subject_id + ": covariate dimension differs from the other subjects");
  }
}

FittedPipeline fit_stages(std::span<const dataset::SubjectRecord> training, const PipelineConfig& cfg) {
  const std::size_t n = training.size();
  const std::size_t workers = cfg.workers;

  FittedPipeline out;
  out.config = cfg;
  out.rois = training.front().rois();
  out.standardizer = dataset::fit_standardizer(training);

  // Stage 1: static FC and site-aware deconfounding.
  std::vector<std::vector<double>> fc(n);
  std::vector<Vector> q(n);
  parallel_for(n, workers, [&](std::size_t i) {
    fc[i] = dataset::compute_static_fc(training[i].bold).values;
    q[i] = out.standardizer.standardize(training[i].covariates);
  });

  const auto sites = site_order(training);
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[training[i].site_id].push_back(i);

  std::vector<deconfound::ResidualFc> residual(n);
  std::vector<bool> used(n, false);
  if (cfg.deconfound) {
    std::vector<deconfound::SiteData> data;
    for (const auto& s : sites) {
      deconfound::SiteData sd{s, {}, {}};
      for (auto i : members[s]) {
        sd.fc.push_back(fc[i]);
        sd.covariates.push_back(q[i]);
      }
      data.push_back(std::move(sd));
    }
    out.bank = deconfound::fit_bank(data, {}, workers);
    for (const auto& sk : out.bank.skipped()) out.excluded.push_back({sk.site_id, sk.reason});
    for (const auto& s : sites) {
      const auto* dec = out.bank.find(s);
      if (dec == nullptr) continue;
      for (auto i : members[s]) {
        residual[i] = deconfound::residualize_site(fc[i], q[i], *dec, s);
        used[i] = true;
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      residual[i] = {fc[i], deconfound::ResidualKind::site_residual};
      used[i] = true;
    }
  }

  // Stage 2: scaffold from per-site robust contrasts.
  std::vector<scaffold::SiteContrast> contrasts;
  for (const auto& s : sites) {
    const auto& idx = members[s];
    if (!used[idx.front()]) continue;
    out.training_sites.push_back(s);
    std::vector<std::vector<double>> values;
    std::vector<int> labels;
    for (auto i : idx) {
      values.push_back(residual[i].values);
      labels.push_back(training[i].label);
    }
    const auto cases = std::count(labels.begin(), labels.end(), 1);
    if (cases == 0 || cases == static_cast<long>(labels.size())) {
      out.excluded.push_back({s, "single-class site: excluded from the contrasts"});
      continue;
    }
    contrasts.push_back(scaffold::site_contrast(s, values, labels));
  }
  if (out.training_sites.empty()) throw ContractError("fit_pipeline: no site has enough subjects to deconfound");
  if (contrasts.empty()) throw ContractError("fit_pipeline: no training site contains both classes");

  const auto stats =
      scaffold::compute_statistics(contrasts, cfg.scaffold.bootstrap_draws, cfg.scaffold.seed, workers);
  const auto thresholds =
      scaffold::default_thresholds(stats, cfg.scaffold.tau_percentile, cfg.scaffold.eta, cfg.scaffold.zeta);
  out.scaffold = scaffold::extract_scaffold(stats, thresholds, out.rois);
  out.graph = linegraph::build_line_graph(out.scaffold);

  // Stage 3: node features and gated GNN training.
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (used[i]) kept.push_back(i);
  model::Batch batch;
  batch.features.resize(kept.size());
  batch.labels.resize(kept.size());
  parallel_for(kept.size(), workers, [&](std::size_t k) {
    const auto i = kept[k];
    batch.features[k] = transient::build_node_features(residual[i], training[i].bold, out.scaffold, cfg.window,
                                                       transient::Phase::training);
    batch.labels[k] = training[i].label;
  });

  out.model = model::GatedGnnModel(cfg.model);
  out.training = model::train(out.model, batch, out.view(), cfg.train, workers);
  return out;
}

// Pooled AUC on held-out groups of training sites, averaged over groups.
double inner_score(std::span<const dataset::SubjectRecord> training, const std::vector<std::string>& sites,
                   const PipelineConfig& cfg) {
  const std::size_t folds = std::min(cfg.inner_folds, sites.size());
  double total = 0.0;
  std::size_t scored = 0;
  for (std::size_t g = 0; g < folds; ++g) {
    std::vector<dataset::SubjectRecord> fit_part, test_part;
    for (const auto& r : training) {
      const auto pos = static_cast<std::size_t>(std::find(sites.begin(), sites.end(), r.site_id) - sites.begin());
      (pos % folds == g ? test_part : fit_part).push_back(r);
    }
    try {
      const auto fitted = fit_stages(fit_part, cfg);
      const auto probs = predict(fitted, test_part, cfg.workers);
      std::vector<int> labels;
      for (const auto& r : test_part) labels.push_back(r.label);
      total += roc_auc(probs, labels);
      ++scored;
    } catch (const Error&) {
      // Candidate unusable on this split (empty scaffold, single class, ...).
    }
  }
  return scored == 0 ? -std::numeric_limits<double>::infinity() : total / static_cast<double>(scored);
}

}  // namespace

FittedPipeline fit_pipeline(std::span<const dataset::SubjectRecord> training, const PipelineConfig& config) {
  config.validate();
  if (training.empty()) throw ContractError("fit_pipeline: no training subjects");
  check_records(training, training.front().rois(), static_cast<std::size_t>(training.front().covariates.size()));

  PipelineConfig cfg = config;
  const auto sites = site_order(training);
  if (cfg.inner_folds >= 2 && !cfg.inner_grid.empty() && sites.size() >= 2) {
    double best = -std::numeric_limits<double>::infinity();
    ThresholdCandidate chosen{cfg.scaffold.tau_percentile, cfg.scaffold.eta, cfg.scaffold.zeta};
    for (const auto& c : cfg.inner_grid) {
      PipelineConfig trial = cfg;
      trial.scaffold.tau_percentile = c.tau_percentile;
      trial.scaffold.eta = c.eta;
      trial.scaffold.zeta = c.zeta;
      trial.validate();
      const double score = inner_score(training, sites, trial);
      if (score > best) {
        best = score;
        chosen = c;
      }
    }
    cfg.scaffold.tau_percentile = chosen.tau_percentile;
    cfg.scaffold.eta = chosen.eta;
    cfg.scaffold.zeta = chosen.zeta;
  }
  return fit_stages(training, cfg);
}

Matrix inference_features(const FittedPipeline& fitted, const dataset::SubjectRecord& record) {
  dataset::validate(record);
  if (record.rois() != fitted.rois) throw SchemaError("subject " + record.subject_id + ": ROI count differs from the bundle");
  if (static_cast<std::size_t>(record.covariates.size()) != fitted.standardizer.dim())
    throw SchemaError("subject " + record.subject_id + ": covariate dimension differs from the bundle");

  const auto fc = dataset::compute_static_fc(record.bold);
  const Vector q = fitted.standardizer.standardize(record.covariates);
  const auto residual = fitted.config.deconfound
                            ? deconfound::residualize_inference(fc.values, q, fitted.bank)
                            : deconfound::ResidualFc{fc.values, deconfound::ResidualKind::inference_residual};
  return transient::build_node_features(residual, record.bold, fitted.scaffold, fitted.config.window,
                                        transient::Phase::inference);
}

double predict(const FittedPipeline& fitted, const dataset::SubjectRecord& record) {
  return fitted.model.predict(inference_features(fitted, record), fitted.view());
}

std::vector<double> predict(const FittedPipeline& fitted, std::span<const dataset::SubjectRecord> records,
                            std::size_t workers) {
  std::vector<double> out(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) { out[i] = predict(fitted, records[i]); });
  return out;
}

namespace {

SiteResult score_site(const std::string& site, std::span<const double> probs, std::span<const int> labels) {
  SiteResult r;
  r.site_id = site;
  r.subjects = labels.size();
  r.cases = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.acc = accuracy(probs, labels);
  if (r.cases == 0 || r.cases == r.subjects) {
    r.skipped = true;
    r.reason = "single-class site: AUC undefined";
  } else {
    r.auc = roc_auc(probs, labels);
  }
  return r;
}

void summarize(EvalReport& report) {
  std::vector<double> aucs, accs;
  for (const auto& s : report.sites) {
    if (s.skipped || !s.auc) continue;
    aucs.push_back(*s.auc);
    accs.push_back(*s.acc);
  }
  report.evaluated = aucs.size();
  const auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = sd = 0.0;
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(v.size()));
  };
  mean_std(aucs, report.mean_auc, report.std_auc);
  mean_std(accs, report.mean_acc, report.std_acc);
}

}  // namespace

EvalReport evaluate(const FittedPipeline& fitted, std::span<const dataset::SubjectRecord> records,
                    std::size_t workers) {
  EvalReport report;
  report.config = fitted.config;
  report.seed = fitted.config.train.seed;
  const auto probs = predict(fitted, records, workers);
  for (const auto& s : site_order(records)) {
    std::vector<double> p;
    std::vector<int> y;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].site_id != s) continue;
      p.push_back(probs[i]);
      y.push_back(records[i].label);
    }
    auto row = score_site(s, p, y);
    row.scaffold_size = fitted.scaffold.size();
    row.training_aborted = fitted.training.aborted;
    report.sites.push_back(std::move(row));
  }
  summarize(report);
  return report;
}

EvalReport run_loso(std::span<const dataset::SubjectRecord> records, const PipelineConfig& config,
                    const LosoOptions& options) {
  config.validate();
  const auto sites = site_order(records);
  if (sites.size() < 2) throw ContractError("run_loso: need at least two sites");
  if (!records.empty())
    check_records(records, records.front().rois(), static_cast<std::size_t>(records.front().covariates.size()));

  EvalReport report;
  report.config = config;
  report.seed = config.train.seed;
  report.sites.resize(sites.size());

  // Folds run concurrently; each fold is single-threaded so results do not depend
  // on the worker count.
  PipelineConfig fold_config = config;
  fold_config.workers = 1;
  parallel_for(sites.size(), config.workers, [&](std::size_t k) {
    const auto& held_out = sites[k];
    std::vector<dataset::SubjectRecord> training, test;
    for (const auto& r : records) (r.site_id == held_out ? test : training).push_back(r);

    SiteResult& row = report.sites[k];
    row.site_id = held_out;
    row.subjects = test.size();
    std::vector<int> labels;
    for (const auto& r : test) labels.push_back(r.label);
    row.cases = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (row.cases == 0 || row.cases == row.subjects) {
      row.skipped = true;
      row.reason = "single-class site: AUC undefined";
      return;
    }

    if (options.on_fit) options.on_fit(held_out, training);
    try {
      const auto fitted = fit_pipeline(training, fold_config);
      const auto probs = predict(fitted, test, 1);
      row = score_site(held_out, probs, labels);
      row.scaffold_size = fitted.scaffold.size();
      row.training_aborted = fitted.training.aborted;
    } catch (const ContractError& e) {
      row.skipped = true;
      row.reason = e.what();
    }
  });
  summarize(report);
  return report;
}

}  // namespace xsite::harness
