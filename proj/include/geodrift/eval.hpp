#pragma once

#include <string>
#include <vector>

#include "geodrift/sde.hpp"

namespace geodrift {

/// Regular evaluation grid over the observation bounding box (inflated 5% by
/// default) with KDE node weights normalized to sum 1.
struct EvalGrid {
  Mat nodes;                 ///< n_nodes x d, row-major over the grid
  Vec weights;               ///< normalized KDE weights
  std::vector<long> shape;   ///< per-dimension node counts
  Vec lo, hi;                ///< inflated bounding box
  Vec bandwidths;            ///< Silverman bandwidths used for the weights
};

/// Builds the grid and its weights. `shape` empty means 50 nodes per
/// dimension. The box always spans the observations; the KDE weights come
/// from `density_sample` when given (e.g. the dense trajectory, a better
/// stand-in for the process visitation density), else from the observations.
EvalGrid make_eval_grid(const Mat& observations,
                        std::vector<long> shape = {}, double inflate = 0.05,
                        const Mat* density_sample = nullptr);

/// Gaussian-product KDE weights of `nodes` given observations, normalized to
/// sum 1; Silverman's rule per dimension.  `bandwidths_out` (optional)
/// receives the bandwidths.
Vec kde_weights(const Mat& observations, const Mat& nodes,
                Vec* bandwidths_out = nullptr);

/// Weighted RMSE between two fields over the grid:
/// sqrt(sum_m w_m ||f_true(x_m) - f_est(x_m)||^2).
double wrmse(const DriftField& f_true, const DriftEval& f_est,
             const EvalGrid& grid);

/// Same protocol with weights rescaled to sum to the node count instead of 1
/// (the alternative normalization, logged alongside the primary).
double wrmse_sum_nodes(const DriftField& f_true, const DriftEval& f_est,
                       const EvalGrid& grid);

/// Flow curvature kappa = P_perp(f) J_f f / ||f||^2.  Throws std::domain_error
/// at near-equilibrium points (||f|| <= 1e-8).
Vec flow_curvature(const DriftField& f, const Vec& x);

/// Leading Euler-Maruyama estimator bias
/// beta = (tau/2) [ grad(J_f f) . f + grad(sigma^2/2 lap f) . f ].
/// `analytic` uses the field's Jacobian/Hessian callbacks where available;
/// otherwise everything falls back to nested central differences.
Vec em_bias_estimate(const DriftField& f, double sigma, double tau,
                     const Vec& x, bool analytic = true);

/// Grid scan of curvature and bias with summary statistics; rows of kappa are
/// NaN at near-equilibrium nodes.
struct CurvatureReport {
  Mat kappa;            ///< n x d
  Mat bias;             ///< n x d
  Vec f_norm;           ///< n
  long skipped = 0;     ///< near-equilibrium node count
  double max_kappa_norm = 0.0;
  double mean_kappa_norm = 0.0;
  double max_bias_norm = 0.0;
  double mean_bias_norm = 0.0;
};
CurvatureReport curvature_scan(const DriftField& f, double sigma, double tau,
                               const Mat& nodes);

/// Writes `x1,..,xd,ftrue1,..,fest1,..,weight` rows for every grid node.
void write_drift_grid_csv(const std::string& path, const EvalGrid& grid,
                          const DriftField& f_true, const DriftEval& f_est);

/// Writes `x1,..,xd,f1,..,kappa1,..,bias1,..` rows for a diagnostics scan.
void write_diagnostics_csv(const std::string& path, const Mat& nodes,
                           const DriftField& f, const CurvatureReport& rep);

}  // namespace geodrift
