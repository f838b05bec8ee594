#pragma once

#include "geodrift/sde.hpp"

namespace geodrift {

/// Optimal coupling between two discrete measures on index sets, as the list
/// of basic arcs of the transportation-simplex solution (at most m + n - 1).
struct TransportPlan {
  std::vector<long> row, col;
  std::vector<double> mass;
  double cost = 0.0;
};

/// Exact solver for min_P sum_ij P_ij C_ij with row sums a and column sums b
/// (both probability vectors). Deterministic: most-negative-reduced-cost
/// pivoting with index tie-breaks on a northwest-corner start.
TransportPlan solve_transport(const Mat& C, const Vec& a, const Vec& b);

/// Ensemble transform: moves the weighted empirical measure (masses
/// weights/sum) onto the uniform measure over the same support via exact
/// optimal transport with squared-Euclidean cost, and returns the transformed
/// ensemble X_new with X_new_j = N sum_i P_ij X_i. Uniform weights return the
/// input unchanged.
Mat etpf_transform(const Mat& X, const Vec& weights);

}  // namespace geodrift
