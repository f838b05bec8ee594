#pragma once

#include "geodrift/metric.hpp"

namespace geodrift {

struct Geodesic {
  Mat nodes;     // (n+1) x d, nodes.row(0) == a, nodes.row(n) == b
  Vec ts;        // rescaled times t' in [0, 1], uniform
  double energy = 0.0;        // final discrete kinetic energy
  double chord_energy = 0.0;  // energy of the straight chord (same grid)
  bool converged = false;
  int iterations = 0;

  int segments() const { return static_cast<int>(nodes.rows()) - 1; }

  /// Linear interpolation at rescaled time t' in [0, 1].
  Vec at(double tprime) const;
};

struct GeodesicOptions {
  double tol = 1e-6;     // max node displacement per accepted iteration
  int max_iters = 5000;  // across all refinement levels
  /// Solve on a coarsened node chain first and refine; same minimizer, far
  /// fewer fine-level iterations. The finest level always runs to tol.
  bool multilevel = true;
};

/// Discrete kinetic energy of a node chain under the metric:
/// E = (1/2) sum_i (dg_i)^T H(mid_i) (dg_i) / dt', with dt' = 1/n.
double discrete_energy(const MetricField& metric, const Mat& nodes);

/// Minimizes the discrete energy over interior nodes by gradient descent with
/// backtracking line search, starting from the straight chord a -> b.
/// Endpoints stay pinned. If the iteration budget runs out the best chain so
/// far is returned with converged == false.
Geodesic geodesic_between(const MetricField& metric, const Vec& a, const Vec& b,
                          int n, const GeodesicOptions& opts = {});

/// Time-indexed constraint curve over all inter-observation intervals.
/// Interval k covers absolute time [t0 + k tau, t0 + (k+1) tau].
class GeodesicSchedule {
 public:
  GeodesicSchedule(std::vector<Geodesic> geodesics, double tau, double t0 = 0.0);

  /// Gamma(t) for absolute t in [t0, t0 + intervals * tau].
  Vec at(double t) const;
  /// Gamma restricted to one interval, at rescaled time t'.
  Vec at(int interval, double tprime) const;

  int intervals() const { return static_cast<int>(geodesics_.size()); }
  const Geodesic& geodesic(int interval) const { return geodesics_.at(interval); }
  double tau() const { return tau_; }

 private:
  std::vector<Geodesic> geodesics_;
  double tau_;
  double t0_;
};

GeodesicSchedule build_schedule(std::vector<Geodesic> geodesics, double tau,
                                double t0 = 0.0);

/// Writes `interval,k,tprime,x1,...,xd` rows for every node of every geodesic.
void dump_geodesics_csv(const GeodesicSchedule& schedule, const std::string& path);

}  // namespace geodrift
