#include "xsite/serialize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace xsite::io {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw SchemaError(where + ": unknown key '" + key + "'");
  }
}

double as_double(const json& j, const std::string& where) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw SchemaError(where + ": expected a number");
  return j.get<double>();
}

std::uint64_t as_count(const json& j, const std::string& where) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0))
    throw SchemaError(where + ": expected a non-negative integer");
  return j.get<std::uint64_t>();
}

bool as_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw SchemaError(where + ": expected a boolean");
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw SchemaError(where + ": expected a string");
  return j.get<std::string>();
}

const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(where + ": missing '" + key + "'");
  return j.at(key);
}

template <class Fn>
void optional_field(const json& j, const char* key, Fn&& fn) {
  if (j.contains(key)) fn(j.at(key));
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
  return out;
}

json vec_json(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(number(x));
  return out;
}

Vector vec_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = as_double(j[i], where);
  return v;
}

std::vector<double> stdvec_from(const json& j, const std::string& where) {
  const Vector v = vec_from(j, where);
  return {v.data(), v.data() + v.size()};
}

std::vector<std::size_t> index_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where + ": expected an array");
  std::vector<std::size_t> out;
  for (const auto& x : j) out.push_back(static_cast<std::size_t>(as_count(x, where)));
  return out;
}

// Row-major dense matrix.
json mat_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(number(m(r, c)));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix mat_from(const json& j, const std::string& where) {
  const auto rows = static_cast<Eigen::Index>(as_count(field(j, "rows", where), where));
  const auto cols = static_cast<Eigen::Index>(as_count(field(j, "cols", where), where));
  const auto data = vec_from(field(j, "data", where), where);
  if (data.size() != rows * cols) throw SchemaError(where + ": data length does not match rows x cols");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  return m;
}

json sparse_json(const linegraph::SparseMatrix& s) {
  json triplets = json::array();
  for (Eigen::Index r = 0; r < s.outerSize(); ++r)
    for (linegraph::SparseMatrix::InnerIterator it(s, r); it; ++it)
      triplets.push_back({it.row(), it.col(), number(it.value())});
  return {{"rows", s.rows()}, {"cols", s.cols()}, {"triplets", triplets}};
}

linegraph::SparseMatrix sparse_from(const json& j, const std::string& where) {
  const auto rows = static_cast<Eigen::Index>(as_count(field(j, "rows", where), where));
  const auto cols = static_cast<Eigen::Index>(as_count(field(j, "cols", where), where));
  std::vector<Eigen::Triplet<double>> triplets;
  for (const auto& t : field(j, "triplets", where)) {
    if (!t.is_array() || t.size() != 3) throw SchemaError(where + ": triplets must be [row, col, value]");
    const auto r = static_cast<Eigen::Index>(as_count(t[0], where));
    const auto c = static_cast<Eigen::Index>(as_count(t[1], where));
    if (r >= rows || c >= cols) throw SchemaError(where + ": triplet index out of range");
    triplets.emplace_back(r, c, as_double(t[2], where));
  }
  linegraph::SparseMatrix s(rows, cols);
  s.setFromTriplets(triplets.begin(), triplets.end());
  return s;
}

json dense_json(const model::Dense& d) { return {{"weight", mat_json(d.weight)}, {"bias", vec_json(d.bias)}}; }

model::Dense dense_from(const json& j, const std::string& where) {
  return {mat_from(field(j, "weight", where), where + ".weight"), vec_from(field(j, "bias", where), where + ".bias")};
}

json mlp_json(const model::Mlp& m) { return {{"first", dense_json(m.first)}, {"second", dense_json(m.second)}}; }

model::Mlp mlp_from(const json& j, const std::string& where) {
  return {dense_from(field(j, "first", where), where + ".first"),
          dense_from(field(j, "second", where), where + ".second")};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

harness::PipelineConfig config_from_json(const json& j) {
  harness::PipelineConfig cfg;
  check_keys(j, {"window", "scaffold", "model", "train", "deconfound", "workers", "inner_folds", "inner_grid"},
             "config");
  optional_field(j, "window", [&](const json& w) {
    check_keys(w, {"W", "S_w", "rho_clamp", "eps"}, "config.window");
    optional_field(w, "W", [&](const json& v) { cfg.window.length = as_count(v, "window.W"); });
    optional_field(w, "S_w", [&](const json& v) { cfg.window.stride = as_count(v, "window.S_w"); });
    optional_field(w, "rho_clamp", [&](const json& v) { cfg.window.rho_clamp = as_double(v, "window.rho_clamp"); });
    optional_field(w, "eps", [&](const json& v) { cfg.window.eps_feature = as_double(v, "window.eps"); });
  });
  optional_field(j, "scaffold", [&](const json& s) {
    check_keys(s, {"tau_percentile", "eta", "zeta", "B", "seed"}, "config.scaffold");
    optional_field(s, "tau_percentile",
                   [&](const json& v) { cfg.scaffold.tau_percentile = as_double(v, "scaffold.tau_percentile"); });
    optional_field(s, "eta", [&](const json& v) { cfg.scaffold.eta = as_double(v, "scaffold.eta"); });
    optional_field(s, "zeta", [&](const json& v) { cfg.scaffold.zeta = as_double(v, "scaffold.zeta"); });
    optional_field(s, "B", [&](const json& v) { cfg.scaffold.bootstrap_draws = as_count(v, "scaffold.B"); });
    optional_field(s, "seed", [&](const json& v) { cfg.scaffold.seed = as_count(v, "scaffold.seed"); });
  });
  optional_field(j, "model", [&](const json& m) {
    check_keys(m, {"D", "L", "lambda", "tau", "eps_z", "seed"}, "config.model");
    optional_field(m, "D", [&](const json& v) { cfg.model.hidden = as_count(v, "model.D"); });
    optional_field(m, "L", [&](const json& v) { cfg.model.layers = as_count(v, "model.L"); });
    optional_field(m, "lambda", [&](const json& v) { cfg.model.lambda = as_double(v, "model.lambda"); });
    optional_field(m, "tau", [&](const json& v) { cfg.model.tau = as_double(v, "model.tau"); });
    optional_field(m, "eps_z", [&](const json& v) { cfg.model.eps_z = as_double(v, "model.eps_z"); });
    optional_field(m, "seed", [&](const json& v) { cfg.model.seed = as_count(v, "model.seed"); });
  });
  optional_field(j, "train", [&](const json& t) {
    check_keys(t, {"lr", "weight_decay", "K", "gamma", "epochs", "batch", "seed", "beta1", "beta2", "adam_eps"},
               "config.train");
    optional_field(t, "lr", [&](const json& v) { cfg.train.learning_rate = as_double(v, "train.lr"); });
    optional_field(t, "weight_decay", [&](const json& v) { cfg.train.weight_decay = as_double(v, "train.weight_decay"); });
    optional_field(t, "K", [&](const json& v) { cfg.train.budget = as_double(v, "train.K"); });
    optional_field(t, "gamma", [&](const json& v) { cfg.train.gamma = as_double(v, "train.gamma"); });
    optional_field(t, "epochs", [&](const json& v) { cfg.train.epochs = as_count(v, "train.epochs"); });
    optional_field(t, "batch", [&](const json& v) { cfg.train.batch_size = as_count(v, "train.batch"); });
    optional_field(t, "seed", [&](const json& v) { cfg.train.seed = as_count(v, "train.seed"); });
    optional_field(t, "beta1", [&](const json& v) { cfg.train.beta1 = as_double(v, "train.beta1"); });
    optional_field(t, "beta2", [&](const json& v) { cfg.train.beta2 = as_double(v, "train.beta2"); });
    optional_field(t, "adam_eps", [&](const json& v) { cfg.train.adam_eps = as_double(v, "train.adam_eps"); });
  });
  optional_field(j, "deconfound", [&](const json& v) { cfg.deconfound = as_bool(v, "deconfound"); });
  optional_field(j, "workers", [&](const json& v) { cfg.workers = as_count(v, "workers"); });
  optional_field(j, "inner_folds", [&](const json& v) { cfg.inner_folds = as_count(v, "inner_folds"); });
  optional_field(j, "inner_grid", [&](const json& g) {
    if (!g.is_array()) throw SchemaError("config.inner_grid: expected an array");
    for (const auto& c : g) {
      check_keys(c, {"tau_percentile", "eta", "zeta"}, "config.inner_grid");
      harness::ThresholdCandidate cand{cfg.scaffold.tau_percentile, cfg.scaffold.eta, cfg.scaffold.zeta};
      optional_field(c, "tau_percentile", [&](const json& v) { cand.tau_percentile = as_double(v, "inner_grid.tau_percentile"); });
      optional_field(c, "eta", [&](const json& v) { cand.eta = as_double(v, "inner_grid.eta"); });
      optional_field(c, "zeta", [&](const json& v) { cand.zeta = as_double(v, "inner_grid.zeta"); });
      cfg.inner_grid.push_back(cand);
    }
  });
  cfg.validate();
  return cfg;
}

json to_json(const harness::PipelineConfig& c) {
  json grid = json::array();
  for (const auto& g : c.inner_grid) grid.push_back({{"tau_percentile", g.tau_percentile}, {"eta", g.eta}, {"zeta", g.zeta}});
  return {
      {"window", {{"W", c.window.length}, {"S_w", c.window.stride}, {"rho_clamp", c.window.rho_clamp}, {"eps", c.window.eps_feature}}},
      {"scaffold",
       {{"tau_percentile", c.scaffold.tau_percentile},
        {"eta", c.scaffold.eta},
        {"zeta", c.scaffold.zeta},
        {"B", c.scaffold.bootstrap_draws},
        {"seed", c.scaffold.seed}}},
      {"model",
       {{"D", c.model.hidden},
        {"L", c.model.layers},
        {"lambda", c.model.lambda},
        {"tau", c.model.tau},
        {"eps_z", c.model.eps_z},
        {"seed", c.model.seed}}},
      {"train",
       {{"lr", c.train.learning_rate},
        {"weight_decay", c.train.weight_decay},
        {"K", c.train.budget},
        {"gamma", c.train.gamma},
        {"epochs", c.train.epochs},
        {"batch", c.train.batch_size},
        {"seed", c.train.seed},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps}}},
      {"deconfound", c.deconfound},
      {"workers", c.workers},
      {"inner_folds", c.inner_folds},
      {"inner_grid", grid},
  };
}

harness::PipelineConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// Reports

json to_json(const harness::EvalReport& r) {
  json sites = json::array();
  for (const auto& s : r.sites) {
    sites.push_back({{"site_id", s.site_id},
                     {"subjects", s.subjects},
                     {"cases", s.cases},
                     {"auc", s.auc ? number(*s.auc) : json(nullptr)},
                     {"acc", s.acc ? number(*s.acc) : json(nullptr)},
                     {"skipped", s.skipped},
                     {"reason", s.reason},
                     {"scaffold_size", s.scaffold_size},
                     {"training_aborted", s.training_aborted}});
  }
  return {{"schema_version", harness::EvalReport::schema_version},
          {"seed", r.seed},
          {"config", to_json(r.config)},
          {"sites", sites},
          {"aggregate",
           {{"mean_auc", number(r.mean_auc)},
            {"std_auc", number(r.std_auc)},
            {"mean_acc", number(r.mean_acc)},
            {"std_acc", number(r.std_acc)},
            {"evaluated", r.evaluated}}}};
}

harness::EvalReport report_from_json(const json& j) {
  if (as_count(field(j, "schema_version", "report"), "report.schema_version") !=
      static_cast<std::uint64_t>(harness::EvalReport::schema_version))
    throw SchemaError("report: unsupported schema_version");
  harness::EvalReport r;
  r.seed = as_count(field(j, "seed", "report"), "report.seed");
  r.config = config_from_json(field(j, "config", "report"));
  for (const auto& s : field(j, "sites", "report")) {
    harness::SiteResult row;
    row.site_id = as_string(field(s, "site_id", "report.sites"), "site_id");
    row.subjects = as_count(field(s, "subjects", "report.sites"), "subjects");
    row.cases = as_count(field(s, "cases", "report.sites"), "cases");
    if (!s.at("auc").is_null()) row.auc = as_double(s.at("auc"), "auc");
    if (!s.at("acc").is_null()) row.acc = as_double(s.at("acc"), "acc");
    row.skipped = as_bool(field(s, "skipped", "report.sites"), "skipped");
    row.reason = as_string(field(s, "reason", "report.sites"), "reason");
    row.scaffold_size = as_count(field(s, "scaffold_size", "report.sites"), "scaffold_size");
    row.training_aborted = as_bool(field(s, "training_aborted", "report.sites"), "training_aborted");
    r.sites.push_back(std::move(row));
  }
  const auto& a = field(j, "aggregate", "report");
  r.mean_auc = as_double(field(a, "mean_auc", "aggregate"), "mean_auc");
  r.std_auc = as_double(field(a, "std_auc", "aggregate"), "std_auc");
  r.mean_acc = as_double(field(a, "mean_acc", "aggregate"), "mean_acc");
  r.std_acc = as_double(field(a, "std_acc", "aggregate"), "std_acc");
  r.evaluated = as_count(field(a, "evaluated", "aggregate"), "evaluated");
  return r;
}

void write_report(const std::filesystem::path& path, const harness::EvalReport& report) {
  write_json(path, to_json(report));
}

// ---------------------------------------------------------------------------
// Bundle

json to_json(const harness::FittedPipeline& f) {
  json excluded = json::array();
  for (const auto& e : f.excluded) excluded.push_back({{"site_id", e.site_id}, {"reason", e.reason}});

  json bank = nullptr;
  if (f.config.deconfound) {
    json sites = json::array();
    for (const auto& s : f.bank.sites()) {
      sites.push_back({{"site_id", s.site_id},
                       {"subjects", s.subjects},
                       {"intercept", vec_json(s.intercept)},
                       {"gamma", mat_json(s.gamma)},
                       {"delta", vec_json(s.delta)},
                       {"rank_deficient_edges", s.rank_deficient_edges},
                       {"nonconverged_edges", s.nonconverged_edges}});
    }
    json skipped = json::array();
    for (const auto& s : f.bank.skipped()) skipped.push_back({{"site_id", s.site_id}, {"reason", s.reason}});
    bank = {{"sites", sites},
            {"skipped", skipped},
            {"mean_intercept", vec_json(f.bank.mean_intercept())},
            {"mean_gamma", mat_json(f.bank.mean_gamma())}};
  }

  const auto& sc = f.scaffold;
  const auto& g = f.graph.graph;
  json pairs = json::array();
  for (const auto& [u, v] : g.roi_pairs) pairs.push_back({u, v});
  const auto& p = f.model.params();
  json layers = json::array();
  for (const auto& l : p.layers) layers.push_back(dense_json(l));
  const auto& mc = f.model.config();

  return {
      {"schema_version", bundle_schema_version},
      {"config", to_json(f.config)},
      {"rois", f.rois},
      {"training_sites", f.training_sites},
      {"excluded", excluded},
      {"standardizer", {{"mean", vec_json(f.standardizer.mean)}, {"scale", vec_json(f.standardizer.scale)}}},
      {"deconfounder", bank},
      {"scaffold",
       {{"rois", sc.rois},
        {"selected", sc.selected},
        {"thresholds", {{"tau", sc.thresholds.tau}, {"eta", sc.thresholds.eta}, {"zeta", sc.thresholds.zeta}}},
        {"statistics",
         {{"consensus", vec_json(sc.stats.consensus)},
          {"kappa", vec_json(sc.stats.kappa)},
          {"pi", vec_json(sc.stats.pi)},
          {"B", sc.stats.bootstrap_draws},
          {"seed", sc.stats.seed}}}}},
      {"line_graph",
       {{"enumeration", g.enumeration},
        {"roi_pairs", pairs},
        {"eps_a", g.eps_a},
        {"eps_sigma", f.graph.scores.eps_sigma},
        {"magnitude", vec_json(f.graph.scores.magnitude)},
        {"mu0", vec_json(f.graph.scores.mu0)},
        {"adjacency", sparse_json(g.adjacency)},
        {"propagation", sparse_json(g.propagation)}}},
      {"model",
       {{"config",
         {{"D", mc.hidden}, {"L", mc.layers}, {"lambda", mc.lambda}, {"tau", mc.tau}, {"eps_z", mc.eps_z}, {"seed", mc.seed}}},
        {"parameters",
         {{"embed", dense_json(p.embed)},
          {"context", mlp_json(p.context)},
          {"gate", mlp_json(p.gate)},
          {"layers", layers},
          {"classifier", mlp_json(p.classifier)}}}}},
      {"training",
       {{"epoch_loss", vec_json(f.training.epoch_loss)},
        {"effective_budget", f.training.effective_budget},
        {"aborted", f.training.aborted}}},
  };
}

harness::FittedPipeline pipeline_from_json(const json& j) {
  if (as_count(field(j, "schema_version", "bundle"), "bundle.schema_version") !=
      static_cast<std::uint64_t>(bundle_schema_version))
    throw SchemaError("bundle: unsupported schema_version");
  harness::FittedPipeline f;
  f.config = config_from_json(field(j, "config", "bundle"));
  f.rois = as_count(field(j, "rois", "bundle"), "bundle.rois");
  for (const auto& s : field(j, "training_sites", "bundle")) f.training_sites.push_back(as_string(s, "training_sites"));
  for (const auto& e : field(j, "excluded", "bundle"))
    f.excluded.push_back({as_string(field(e, "site_id", "excluded"), "site_id"), as_string(field(e, "reason", "excluded"), "reason")});

  const auto& st = field(j, "standardizer", "bundle");
  f.standardizer.mean = vec_from(field(st, "mean", "standardizer"), "standardizer.mean");
  f.standardizer.scale = vec_from(field(st, "scale", "standardizer"), "standardizer.scale");
  if (f.standardizer.mean.size() != f.standardizer.scale.size()) throw SchemaError("standardizer: mean/scale length mismatch");

  const auto& bank = field(j, "deconfounder", "bundle");
  if (f.config.deconfound) {
    if (bank.is_null()) throw SchemaError("bundle: deconfounder missing while deconfounding is enabled");
    for (const auto& s : field(bank, "sites", "deconfounder")) {
      deconfound::SiteDeconfounder d;
      d.site_id = as_string(field(s, "site_id", "deconfounder.sites"), "site_id");
      d.subjects = as_count(field(s, "subjects", "deconfounder.sites"), "subjects");
      d.intercept = vec_from(field(s, "intercept", "deconfounder.sites"), "intercept");
      d.gamma = mat_from(field(s, "gamma", "deconfounder.sites"), "gamma");
      d.delta = vec_from(field(s, "delta", "deconfounder.sites"), "delta");
      d.rank_deficient_edges = as_count(field(s, "rank_deficient_edges", "deconfounder.sites"), "rank_deficient_edges");
      d.nonconverged_edges = as_count(field(s, "nonconverged_edges", "deconfounder.sites"), "nonconverged_edges");
      f.bank.add(std::move(d));
    }
    for (const auto& s : field(bank, "skipped", "deconfounder"))
      f.bank.skip(as_string(field(s, "site_id", "skipped"), "site_id"), as_string(field(s, "reason", "skipped"), "reason"));
    Vector mean_b = vec_from(field(bank, "mean_intercept", "deconfounder"), "mean_intercept");
    Matrix mean_g = mat_from(field(bank, "mean_gamma", "deconfounder"), "mean_gamma");
    if (mean_g.cols() != mean_b.size() || static_cast<std::size_t>(mean_g.rows()) != f.standardizer.dim())
      throw SchemaError("deconfounder: aggregate shapes do not match");
    f.bank.set_aggregate(std::move(mean_b), std::move(mean_g));
  }

  const auto& sc = field(j, "scaffold", "bundle");
  f.scaffold.rois = as_count(field(sc, "rois", "scaffold"), "scaffold.rois");
  f.scaffold.selected = index_from(field(sc, "selected", "scaffold"), "scaffold.selected");
  const auto& th = field(sc, "thresholds", "scaffold");
  f.scaffold.thresholds = {as_double(field(th, "tau", "thresholds"), "tau"), as_double(field(th, "eta", "thresholds"), "eta"),
                           as_double(field(th, "zeta", "thresholds"), "zeta")};
  const auto& stats = field(sc, "statistics", "scaffold");
  f.scaffold.stats.consensus = stdvec_from(field(stats, "consensus", "statistics"), "consensus");
  f.scaffold.stats.kappa = stdvec_from(field(stats, "kappa", "statistics"), "kappa");
  f.scaffold.stats.pi = stdvec_from(field(stats, "pi", "statistics"), "pi");
  f.scaffold.stats.bootstrap_draws = as_count(field(stats, "B", "statistics"), "B");
  f.scaffold.stats.seed = as_count(field(stats, "seed", "statistics"), "seed");
  const std::size_t edges = f.rois * (f.rois - 1) / 2;
  if (f.scaffold.rois != f.rois || f.scaffold.stats.consensus.size() != edges)
    throw SchemaError("scaffold: statistics do not cover every edge");
  for (auto e : f.scaffold.selected)
    if (e >= edges) throw SchemaError("scaffold: selected edge out of range");

  const auto& lg = field(j, "line_graph", "bundle");
  auto& g = f.graph.graph;
  g.enumeration = index_from(field(lg, "enumeration", "line_graph"), "enumeration");
  for (const auto& pr : field(lg, "roi_pairs", "line_graph")) {
    if (!pr.is_array() || pr.size() != 2) throw SchemaError("line_graph.roi_pairs: expected [u, v]");
    g.roi_pairs.emplace_back(as_count(pr[0], "roi_pairs"), as_count(pr[1], "roi_pairs"));
  }
  g.eps_a = as_double(field(lg, "eps_a", "line_graph"), "eps_a");
  f.graph.scores.eps_sigma = as_double(field(lg, "eps_sigma", "line_graph"), "eps_sigma");
  f.graph.scores.magnitude = vec_from(field(lg, "magnitude", "line_graph"), "magnitude");
  f.graph.scores.mu0 = vec_from(field(lg, "mu0", "line_graph"), "mu0");
  g.adjacency = sparse_from(field(lg, "adjacency", "line_graph"), "adjacency");
  g.propagation = sparse_from(field(lg, "propagation", "line_graph"), "propagation");
  const auto n = static_cast<Eigen::Index>(g.enumeration.size());
  if (g.enumeration != f.scaffold.selected || g.roi_pairs.size() != g.enumeration.size() || f.graph.scores.mu0.size() != n ||
      g.propagation.rows() != n || g.adjacency.rows() != n)
    throw SchemaError("line_graph: shapes do not match the scaffold");

  const auto& m = field(j, "model", "bundle");
  const auto& mc = field(m, "config", "model");
  model::ModelConfig cfg;
  cfg.hidden = as_count(field(mc, "D", "model.config"), "D");
  cfg.layers = as_count(field(mc, "L", "model.config"), "L");
  cfg.lambda = as_double(field(mc, "lambda", "model.config"), "lambda");
  cfg.tau = as_double(field(mc, "tau", "model.config"), "tau");
  cfg.eps_z = as_double(field(mc, "eps_z", "model.config"), "eps_z");
  cfg.seed = as_count(field(mc, "seed", "model.config"), "seed");
  const auto& pj = field(m, "parameters", "model");
  model::Parameters params;
  params.embed = dense_from(field(pj, "embed", "parameters"), "embed");
  params.context = mlp_from(field(pj, "context", "parameters"), "context");
  params.gate = mlp_from(field(pj, "gate", "parameters"), "gate");
  for (const auto& l : field(pj, "layers", "parameters")) params.layers.push_back(dense_from(l, "layers"));
  params.classifier = mlp_from(field(pj, "classifier", "parameters"), "classifier");
  f.model = model::GatedGnnModel(cfg, std::move(params));

  const auto& tr = field(j, "training", "bundle");
  f.training.epoch_loss = stdvec_from(field(tr, "epoch_loss", "training"), "epoch_loss");
  f.training.effective_budget = as_double(field(tr, "effective_budget", "training"), "effective_budget");
  f.training.aborted = as_bool(field(tr, "aborted", "training"), "aborted");
  return f;
}

void save_bundle(const std::filesystem::path& bundle_dir, const harness::FittedPipeline& fitted) {
  std::filesystem::create_directories(bundle_dir);
  write_json(bundle_dir / "model.json", to_json(fitted));
}

harness::FittedPipeline load_bundle(const std::filesystem::path& bundle_dir) {
  return pipeline_from_json(read_json(bundle_dir / "model.json"));
}

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::size_t> ranked_edges(const scaffold::Scaffold& sc) {
  std::vector<std::size_t> order = sc.selected;
  const auto& d = sc.stats.consensus;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(d[a]) > std::abs(d[b]); });
  return order;
}

}  // namespace

void write_scaffold_report(const std::filesystem::path& path, const scaffold::Scaffold& sc) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  const dataset::EdgeIndexMap edges(sc.rois);
  const auto& d = sc.stats.consensus;
  const auto order = ranked_edges(sc);
  out << "rank,edge,roi_u,roi_v,sign,abs_d_com,kappa,pi\n";
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto j = order[r];
    const auto [u, v] = edges.pair(j);
    out << r + 1 << ',' << j << ',' << u << ',' << v << ',' << scaffold::sgn(d[j]) << ',' << shortest(std::abs(d[j]))
        << ',' << shortest(sc.stats.kappa[j]) << ',' << shortest(sc.stats.pi[j]) << '\n';
  }
  if (!out) throw LoadError("failed writing " + path.string());
}

json scaffold_report_json(const scaffold::Scaffold& sc) {
  const dataset::EdgeIndexMap edges(sc.rois);
  json rows = json::array();
  for (std::size_t j : ranked_edges(sc)) {
    const auto [u, v] = edges.pair(j);
    rows.push_back({{"edge", j}, {"roi_u", u}, {"roi_v", v}, {"d_com", sc.stats.consensus[j]},
                    {"kappa", sc.stats.kappa[j]}, {"pi", sc.stats.pi[j]}});
  }
  return {{"rois", sc.rois},
          {"edges", rows},
          {"thresholds", {{"tau", sc.thresholds.tau}, {"eta", sc.thresholds.eta}, {"zeta", sc.thresholds.zeta}}},
          {"B", sc.stats.bootstrap_draws},
          {"seed", sc.stats.seed}};
}

// ---------------------------------------------------------------------------

synth::SynthTimeSeriesSpec synth_spec_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("synth spec: expected an object");
  if (j.contains("preset")) {
    check_keys(j, {"preset", "sites", "per_class", "seed"}, "synth spec");
    if (as_string(j.at("preset"), "preset") != "planted_module") throw SchemaError("synth spec: unknown preset");
    std::size_t sites = 4, per_class = 40;
    std::uint64_t seed = 0;
    optional_field(j, "sites", [&](const json& v) { sites = as_count(v, "sites"); });
    optional_field(j, "per_class", [&](const json& v) { per_class = as_count(v, "per_class"); });
    optional_field(j, "seed", [&](const json& v) { seed = as_count(v, "seed"); });
    return synth::SynthTimeSeriesSpec::planted_module(sites, per_class, seed);
  }
  check_keys(j,
             {"rois", "sites", "per_class", "time_points", "covariates", "modules", "covariate_site_shift",
              "covariate_site_spread", "global_signal_max", "oscillation_period", "seed"},
             "synth spec");
  synth::SynthTimeSeriesSpec s;
  optional_field(j, "rois", [&](const json& v) { s.rois = as_count(v, "rois"); });
  optional_field(j, "sites", [&](const json& v) { s.sites = as_count(v, "sites"); });
  optional_field(j, "per_class", [&](const json& v) { s.per_class = as_count(v, "per_class"); });
  optional_field(j, "time_points", [&](const json& v) { s.time_points = index_from(v, "time_points"); });
  optional_field(j, "covariates", [&](const json& v) { s.covariates = as_count(v, "covariates"); });
  optional_field(j, "covariate_site_shift", [&](const json& v) { s.covariate_site_shift = as_double(v, "covariate_site_shift"); });
  optional_field(j, "covariate_site_spread", [&](const json& v) { s.covariate_site_spread = as_double(v, "covariate_site_spread"); });
  optional_field(j, "global_signal_max", [&](const json& v) { s.global_signal_max = as_double(v, "global_signal_max"); });
  optional_field(j, "oscillation_period", [&](const json& v) { s.oscillation_period = as_double(v, "oscillation_period"); });
  optional_field(j, "seed", [&](const json& v) { s.seed = as_count(v, "seed"); });
  optional_field(j, "modules", [&](const json& mods) {
    if (!mods.is_array()) throw SchemaError("synth spec.modules: expected an array");
    for (const auto& m : mods) {
      check_keys(m, {"rois", "control", "case", "control_oscillation", "case_oscillation", "covariate_effect"}, "synth spec.modules");
      synth::ModuleSpec mod;
      mod.rois = index_from(field(m, "rois", "modules"), "modules.rois");
      optional_field(m, "control", [&](const json& v) { mod.control = as_double(v, "control"); });
      optional_field(m, "case", [&](const json& v) { mod.case_ = as_double(v, "case"); });
      optional_field(m, "control_oscillation", [&](const json& v) { mod.control_oscillation = as_double(v, "control_oscillation"); });
      optional_field(m, "case_oscillation", [&](const json& v) { mod.case_oscillation = as_double(v, "case_oscillation"); });
      optional_field(m, "covariate_effect", [&](const json& v) { mod.covariate_effect = stdvec_from(v, "covariate_effect"); });
      s.modules.push_back(std::move(mod));
    }
  });
  s.validate();
  return s;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace xsite::io
