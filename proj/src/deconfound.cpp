#include "xsite/deconfound.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

namespace xsite::deconfound {

double huber_loss(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

double huber_score(double residual, double delta) { return std::clamp(residual, -delta, delta); }

double mad_scale(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  const double center = median(v);
  for (auto& x : v) x = std::abs(x - center);
  return 1.4826 * median(std::move(v));
}

double huber_objective(std::span<const double> responses, const Matrix& design, double intercept,
                       const Vector& gamma, double delta) {
  double total = 0.0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    total += huber_loss(responses[i] - intercept - design.row(row).dot(gamma), delta);
  }
  return total;
}

namespace {

struct Solver {
  Matrix x;  // N x (d + 1), leading column of ones
  Vector y;
  double ridge;
  bool rank_deficient = false;

  // Solves (X^T W X) beta = X^T W rhs; damps the system when it is singular.
  Vector solve(const Vector& w, const Vector& rhs) {
    const Matrix xw = x.transpose() * w.asDiagonal();
    Matrix normal = xw * x;
    const Vector b = xw * rhs;
    Eigen::LDLT<Matrix> ldlt(normal);
    const Vector pivots = ldlt.vectorD().cwiseAbs();
    const double largest = pivots.maxCoeff();
    if (ldlt.info() != Eigen::Success || largest <= 0.0 || pivots.minCoeff() <= 1e-12 * largest) {
      rank_deficient = true;
      normal.diagonal().array() += ridge;
      return Eigen::LDLT<Matrix>(normal).solve(b);
    }
    return ldlt.solve(b);
  }

  Vector residuals(const Vector& beta) const { return y - x * beta; }

  double objective(const Vector& beta, double delta) const {
    const Vector r = residuals(beta);
    double total = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) total += huber_loss(r[i], delta);
    return total;
  }
};

Vector irls_weights(const Vector& r, double delta) {
  Vector w(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const double a = std::abs(r[i]);
    w[i] = a <= delta ? 1.0 : delta / a;
  }
  return w;
}

}  // namespace

HuberFit huber_fit_edge(std::span<const double> responses, const Matrix& design, const HuberOptions& options) {
  const auto n = static_cast<Eigen::Index>(responses.size());
  const auto d = design.cols();
  if (design.rows() != n) throw SchemaError("huber_fit_edge: design rows must match responses");
  if (n < d + 2) throw ContractError("huber_fit_edge: need at least d + 2 observations");
  if (!design.allFinite()) throw ContractError("huber_fit_edge: non-finite design entry");
  if (options.fixed_delta && !(*options.fixed_delta > 0.0)) {
    throw ContractError("huber_fit_edge: delta must be positive");
  }

  Solver s{Matrix(n, d + 1), Vector(n), options.ridge};
  s.x.col(0).setOnes();
  s.x.rightCols(d) = design;
  for (Eigen::Index i = 0; i < n; ++i) s.y[i] = responses[static_cast<std::size_t>(i)];

  HuberFit fit;
  Vector beta = s.solve(Vector::Ones(n), s.y);
  double delta = options.fixed_delta.value_or(0.0);
  const double delta_floor = 1e-10 * std::max(1.0, s.y.cwiseAbs().maxCoeff());

  bool converged = false;
  int it = 0;
  if (!options.fixed_delta) {
    // Scale-adaptive phase: delta follows the robust residual scale.
    for (; it < options.max_iterations; ++it) {
      const Vector r = s.residuals(beta);
      delta = std::max(options.tuning * mad_scale(std::span<const double>(r.data(), static_cast<std::size_t>(n))),
                       delta_floor);
      const Vector next = s.solve(irls_weights(r, delta), s.y);
      const double change = (next - beta).cwiseAbs().maxCoeff();
      beta = next;
      if (change < options.tolerance) {
        converged = true;
        ++it;
        break;
      }
    }
  }

  // Fixed-delta phase: IRLS is a majorize-minimize scheme, so the objective never
  // increases; a guarded Newton step then lands on the exact minimizer.
  double current = s.objective(beta, delta);
  if (options.record_trace) fit.objective_trace.push_back(current);
  bool fixed_converged = false;
  for (int k = 0; k < options.max_iterations; ++k, ++it) {
    const Vector next = s.solve(irls_weights(s.residuals(beta), delta), s.y);
    const double value = s.objective(next, delta);
    const double change = (next - beta).cwiseAbs().maxCoeff();
    if (value > current) break;
    beta = next;
    current = value;
    if (options.record_trace) fit.objective_trace.push_back(current);
    if (change < options.tolerance) {
      fixed_converged = true;
      break;
    }
  }
  for (int k = 0; k < 20; ++k) {
    const Vector r = s.residuals(beta);
    Vector inlier(n);
    Vector score(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      inlier[i] = std::abs(r[i]) <= delta ? 1.0 : 0.0;
      score[i] = huber_score(r[i], delta);
    }
    if (inlier.sum() < static_cast<double>(d + 1)) break;
    const Matrix hessian = s.x.transpose() * inlier.asDiagonal() * s.x;
    Eigen::LDLT<Matrix> ldlt(hessian);
    const Vector pivots = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || pivots.minCoeff() <= 1e-12 * pivots.maxCoeff()) break;
    const Vector step = ldlt.solve(s.x.transpose() * score);
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h < 30; ++h, t *= 0.5) {
      const Vector trial = beta + t * step;
      const double value = s.objective(trial, delta);
      if (value <= current) {
        beta = trial;
        current = value;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    if (options.record_trace) fit.objective_trace.push_back(current);
    if ((t * step).cwiseAbs().maxCoeff() < 1e-14 * (1.0 + beta.cwiseAbs().maxCoeff())) break;
  }

  fit.intercept = beta[0];
  fit.gamma = beta.tail(d);
  fit.delta = delta;
  fit.iterations = it;
  fit.converged = options.fixed_delta ? fixed_converged : converged;
  fit.rank_deficient = s.rank_deficient;
  return fit;
}

SiteDeconfounder fit_site_deconfounder(std::string site_id, std::span<const std::vector<double>> fc,
                                       std::span<const Vector> covariates, const HuberOptions& options,
                                       std::size_t workers) {
  if (fc.size() != covariates.size()) throw SchemaError("fit_site_deconfounder: one covariate vector per subject");
  if (fc.empty()) throw ContractError("fit_site_deconfounder: site " + site_id + " has no subjects");
  const auto n = fc.size();
  const auto d = covariates.front().size();
  if (n < static_cast<std::size_t>(d) + 2) {
    throw ContractError("site " + site_id + " has " + std::to_string(n) + " subjects, needs at least " +
                        std::to_string(d + 2));
  }
  const auto m = fc.front().size();
  Matrix design(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    if (fc[i].size() != m) throw SchemaError("fit_site_deconfounder: FC length mismatch");
    if (covariates[i].size() != d) throw SchemaError("fit_site_deconfounder: covariate dimension mismatch");
    design.row(static_cast<Eigen::Index>(i)) = covariates[i].transpose();
  }

  SiteDeconfounder dec;
  dec.site_id = std::move(site_id);
  dec.subjects = n;
  dec.intercept.resize(static_cast<Eigen::Index>(m));
  dec.gamma.resize(d, static_cast<Eigen::Index>(m));
  dec.delta.resize(static_cast<Eigen::Index>(m));
  std::vector<char> rank_deficient(m, 0);
  std::vector<char> nonconverged(m, 0);

  HuberOptions edge_options = options;
  edge_options.record_trace = false;
  parallel_for(m, workers, [&](std::size_t j) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = fc[i][j];
    const auto fit = huber_fit_edge(y, design, edge_options);
    const auto col = static_cast<Eigen::Index>(j);
    dec.intercept[col] = fit.intercept;
    dec.gamma.col(col) = fit.gamma;
    dec.delta[col] = fit.delta;
    rank_deficient[j] = fit.rank_deficient;
    nonconverged[j] = !fit.converged;
  });
  dec.rank_deficient_edges = static_cast<std::size_t>(std::count(rank_deficient.begin(), rank_deficient.end(), 1));
  dec.nonconverged_edges = static_cast<std::size_t>(std::count(nonconverged.begin(), nonconverged.end(), 1));
  return dec;
}

std::vector<double> residualize_with(std::span<const double> fc, const Vector& covariates, const Vector& intercept,
                                     const Matrix& gamma) {
  const auto m = static_cast<Eigen::Index>(fc.size());
  if (intercept.size() != m || gamma.cols() != m) throw SchemaError("residualize: FC length mismatch");
  if (gamma.rows() != covariates.size()) throw SchemaError("residualize: covariate dimension mismatch");
  const Vector trend = intercept + gamma.transpose() * covariates;
  std::vector<double> out(fc.size());
  for (Eigen::Index j = 0; j < m; ++j) out[static_cast<std::size_t>(j)] = fc[static_cast<std::size_t>(j)] - trend[j];
  return out;
}

ResidualFc residualize_site(std::span<const double> fc, const Vector& covariates, const SiteDeconfounder& dec,
                            std::string_view subject_site) {
  if (subject_site != dec.site_id) {
    throw ContractError("residualize_site: subject from site '" + std::string(subject_site) +
                        "' with deconfounder of site '" + dec.site_id + "'");
  }
  return {residualize_with(fc, covariates, dec.intercept, dec.gamma), ResidualKind::site_residual};
}

void DeconfounderBank::add(SiteDeconfounder site) {
  aggregated_ = false;
  for (auto& s : sites_) {
    if (s.site_id == site.site_id) {
      s = std::move(site);
      return;
    }
  }
  sites_.push_back(std::move(site));
}

void DeconfounderBank::skip(std::string site_id, std::string reason) {
  skipped_.push_back({std::move(site_id), std::move(reason)});
}

void DeconfounderBank::aggregate() {
  if (sites_.empty()) throw StateError("aggregate: no fitted sites");
  mean_intercept_ = Vector::Zero(sites_.front().intercept.size());
  mean_gamma_ = Matrix::Zero(sites_.front().gamma.rows(), sites_.front().gamma.cols());
  for (const auto& s : sites_) {
    if (s.intercept.size() != mean_intercept_.size() || s.gamma.rows() != mean_gamma_.rows()) {
      throw SchemaError("aggregate: site " + s.site_id + " has mismatched shape");
    }
    mean_intercept_ += s.intercept;
    mean_gamma_ += s.gamma;
  }
  const auto count = static_cast<double>(sites_.size());
  mean_intercept_ /= count;
  mean_gamma_ /= count;
  aggregated_ = true;
}

const SiteDeconfounder* DeconfounderBank::find(std::string_view site_id) const {
  for (const auto& s : sites_) {
    if (s.site_id == site_id) return &s;
  }
  return nullptr;
}

const SiteDeconfounder& DeconfounderBank::site(std::string_view site_id) const {
  if (const auto* s = find(site_id)) return *s;
  throw ContractError("no deconfounder fitted for site '" + std::string(site_id) + "'");
}

const Vector& DeconfounderBank::mean_intercept() const {
  if (!aggregated_) throw StateError("deconfounder bank is not aggregated");
  return mean_intercept_;
}

const Matrix& DeconfounderBank::mean_gamma() const {
  if (!aggregated_) throw StateError("deconfounder bank is not aggregated");
  return mean_gamma_;
}

void DeconfounderBank::set_aggregate(Vector mean_intercept, Matrix mean_gamma) {
  mean_intercept_ = std::move(mean_intercept);
  mean_gamma_ = std::move(mean_gamma);
  aggregated_ = true;
}

DeconfounderBank fit_bank(std::span<const SiteData> sites, const HuberOptions& options, std::size_t workers) {
  DeconfounderBank bank;
  for (const auto& site : sites) {
    const auto d = site.covariates.empty() ? 0 : static_cast<std::size_t>(site.covariates.front().size());
    if (site.fc.size() < d + 2) {
      bank.skip(site.site_id, std::to_string(site.fc.size()) + " subjects, need at least " + std::to_string(d + 2));
      continue;
    }
    bank.add(fit_site_deconfounder(site.site_id, site.fc, site.covariates, options, workers));
  }
  if (bank.sites().empty()) throw ContractError("fit_bank: no site has enough subjects");
  bank.aggregate();
  return bank;
}

SiteDeconfounder fit_pooled_deconfounder(std::span<const SiteData> sites, const HuberOptions& options,
                                         std::size_t workers) {
  std::vector<std::vector<double>> fc;
  std::vector<Vector> covariates;
  for (const auto& site : sites) {
    fc.insert(fc.end(), site.fc.begin(), site.fc.end());
    covariates.insert(covariates.end(), site.covariates.begin(), site.covariates.end());
  }
  return fit_site_deconfounder("pooled", fc, covariates, options, workers);
}

ResidualFc residualize_inference(std::span<const double> fc, const Vector& covariates,
                                 const DeconfounderBank& bank) {
  return {residualize_with(fc, covariates, bank.mean_intercept(), bank.mean_gamma()),
          ResidualKind::inference_residual};
}

}  // namespace xsite::deconfound
