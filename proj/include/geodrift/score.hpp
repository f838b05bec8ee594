#pragma once

#include "geodrift/sde.hpp"

namespace geodrift {

/// Kernel score model s(x) = K(x, Z) alpha, one coefficient column per state
/// dimension, squared-exponential kernel with a single lengthscale.
///
/// Far from the inducing set the kernel expansion decays to zero, while the
/// score of any smooth density keeps pointing back toward the mass with
/// roughly linear growth. Evaluation therefore blends in the Gaussian-moment
/// score -C^{-1}(x - m) of the fitted ensemble, gated smoothly so that points
/// within one lengthscale of the inducing set see the kernel expansion alone.
struct ScoreEstimate {
  Mat inducing;       // M x d
  Mat alpha;          // M x d
  double lengthscale = 1.0;
  double lambda = 0.0;
  Vec tail_mean;      // d; empty disables the far-field term
  Mat tail_prec;      // d x d regularized inverse ensemble covariance

  Vec at(const Vec& x) const;
  /// Evaluates at each row of X; returns n x d.
  Mat at_batch(const Mat& X) const;
};

/// Fits the regularized empirical score-matching objective
///   (1/N) sum_j [ |s(X_j)|^2 + 2 div s(X_j) ] + lambda |s|_k^2
/// over the span of kernel features at M inducing points (a seeded uniform
/// subsample of the particles). The lengthscale is the median pairwise
/// particle distance. Closed form: one M x M solve shared across dimensions.
///
/// Throws std::runtime_error for degenerate ensembles (spread < 1e-10) and
/// for a singular regularized system.
ScoreEstimate fit_score(const Mat& particles, int M, double lambda, uint64_t seed);

}  // namespace geodrift
