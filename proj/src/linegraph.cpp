#include "xsite/linegraph.hpp"

#include <algorithm>
#include <cmath>

#include "xsite/dataset.hpp"

namespace xsite::linegraph {

PriorScores prior_scores(std::span<const double> magnitude, double eps_sigma) {
  if (magnitude.empty()) throw ContractError("prior_scores: empty scaffold");
  PriorScores out;
  out.eps_sigma = eps_sigma;
  out.magnitude = Eigen::Map<const Vector>(magnitude.data(), static_cast<Eigen::Index>(magnitude.size()));
  if (out.magnitude.maxCoeff() == out.magnitude.minCoeff()) {
    out.mu0 = Vector::Zero(out.magnitude.size());
    return out;
  }
  const double mean = out.magnitude.mean();
  const Vector centered = out.magnitude.array() - mean;
  const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(magnitude.size()));
  out.mu0 = centered / (sd + eps_sigma);
  return out;
}

PriorScores prior_scores(const scaffold::Scaffold& scaffold, double eps_sigma) {
  std::vector<double> a;
  a.reserve(scaffold.size());
  for (std::size_t j : scaffold.selected) a.push_back(std::abs(scaffold.stats.consensus.at(j)));
  return prior_scores(a, eps_sigma);
}

LineGraph build_adjacency(std::span<const RoiPair> roi_pairs, const Vector& mu0, double eps_a) {
  const std::size_t n = roi_pairs.size();
  if (n == 0) throw ContractError("build_adjacency: empty scaffold");
  if (static_cast<std::size_t>(mu0.size()) != n) throw SchemaError("build_adjacency: one prior score per node");

  LineGraph g;
  g.roi_pairs.assign(roi_pairs.begin(), roi_pairs.end());
  g.enumeration.resize(n);
  for (std::size_t p = 0; p < n; ++p) g.enumeration[p] = p;
  g.eps_a = eps_a;

  std::size_t rois = 0;
  for (const auto& [u, v] : roi_pairs) rois = std::max({rois, u + 1, v + 1});
  std::vector<std::vector<std::size_t>> incident(rois);
  for (std::size_t p = 0; p < n; ++p) {
    incident[roi_pairs[p].first].push_back(p);
    incident[roi_pairs[p].second].push_back(p);
  }

  const double range = mu0.maxCoeff() - mu0.minCoeff();
  std::vector<Eigen::Triplet<double>> triplets;
  // Distinct ROI pairs share at most one ROI, so each adjacent pair is seen once.
  for (const auto& nodes : incident) {
    for (std::size_t a = 0; a < nodes.size(); ++a) {
      for (std::size_t b = a + 1; b < nodes.size(); ++b) {
        const auto p = static_cast<Eigen::Index>(nodes[a]);
        const auto q = static_cast<Eigen::Index>(nodes[b]);
        const double w = std::exp(-std::abs(mu0[p] - mu0[q]) / (range + eps_a));
        triplets.emplace_back(p, q, w);
        triplets.emplace_back(q, p, w);
      }
    }
  }
  g.adjacency.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  g.adjacency.setFromTriplets(triplets.begin(), triplets.end());
  return g;
}

LineGraph build_adjacency(const scaffold::Scaffold& scaffold, const PriorScores& scores, double eps_a) {
  const dataset::EdgeIndexMap edges(scaffold.rois);
  std::vector<RoiPair> pairs;
  pairs.reserve(scaffold.size());
  for (std::size_t j : scaffold.selected) pairs.push_back(edges.pair(j));
  auto g = build_adjacency(pairs, scores.mu0, eps_a);
  g.enumeration = scaffold.selected;
  return g;
}

LineGraph normalize_propagation(LineGraph graph) {
  const auto n = static_cast<Eigen::Index>(graph.size());
  if (n == 0 || graph.adjacency.rows() != n) throw StateError("normalize_propagation: adjacency not built");
  SparseMatrix identity(n, n);
  identity.setIdentity();
  SparseMatrix with_loops = graph.adjacency + identity;
  Vector inv_sqrt_degree(n);
  for (Eigen::Index p = 0; p < n; ++p) inv_sqrt_degree[p] = 1.0 / std::sqrt(with_loops.row(p).sum());
  graph.propagation = inv_sqrt_degree.asDiagonal() * with_loops * inv_sqrt_degree.asDiagonal();
  return graph;
}

ScaffoldGraph build_line_graph(const scaffold::Scaffold& scaffold, double eps_sigma, double eps_a) {
  ScaffoldGraph out;
  out.scores = prior_scores(scaffold, eps_sigma);
  out.graph = normalize_propagation(build_adjacency(scaffold, out.scores, eps_a));
  return out;
}

}  // namespace xsite::linegraph
