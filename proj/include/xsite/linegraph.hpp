#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "xsite/common.hpp"
#include "xsite/scaffold.hpp"

namespace xsite::linegraph {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using RoiPair = std::pair<std::size_t, std::size_t>;

struct PriorScores {
  Vector magnitude;  // a_p = |d_com| on scaffold edges
  Vector mu0;        // standardized magnitudes
  double eps_sigma = 1e-6;
};

/// mu0 = (a - mean(a)) / (std(a) + eps_sigma), population std.
PriorScores prior_scores(std::span<const double> magnitude, double eps_sigma = 1e-6);
PriorScores prior_scores(const scaffold::Scaffold& scaffold, double eps_sigma = 1e-6);

struct LineGraph {
  std::vector<std::size_t> enumeration;  // scaffold edge index of node p
  std::vector<RoiPair> roi_pairs;        // ROI pair of node p
  SparseMatrix adjacency;                // A, zero diagonal
  SparseMatrix propagation;              // D^-1/2 (A + I) D^-1/2, empty until normalized
  double eps_a = 1e-6;

  std::size_t size() const { return enumeration.size(); }
  bool normalized() const { return propagation.rows() == static_cast<Eigen::Index>(size()) && size() > 0; }
};

/// A_pq = exp(-|mu0_p - mu0_q| / (range(mu0) + eps_a)) when nodes p != q share a
/// ROI, else 0.
LineGraph build_adjacency(std::span<const RoiPair> roi_pairs, const Vector& mu0, double eps_a = 1e-6);
LineGraph build_adjacency(const scaffold::Scaffold& scaffold, const PriorScores& scores, double eps_a = 1e-6);

/// Fills `propagation` from `adjacency` with self-loops and symmetric normalization.
LineGraph normalize_propagation(LineGraph graph);

/// prior_scores -> build_adjacency -> normalize_propagation.
struct ScaffoldGraph {
  PriorScores scores;
  LineGraph graph;
};
ScaffoldGraph build_line_graph(const scaffold::Scaffold& scaffold, double eps_sigma = 1e-6, double eps_a = 1e-6);

}  // namespace xsite::linegraph
