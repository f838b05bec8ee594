#pragma once

#include "geodrift/sde.hpp"

namespace geodrift {

/// Diagonal Riemannian metric induced by an observation cloud.
///
/// H_dd(x) = ( sum_k w_k(x) (O_k^(d) - x^(d))^2 + epsilon )^-1 with Gaussian
/// weights w_k(x) = exp(-|O_k - x|^2 / (2 sigma_M^2)). Entries shrink where
/// observations are dense and saturate at 1/epsilon far from the data.
/// Summation runs in ascending observation index so results are
/// bit-reproducible regardless of how the observations were assembled.
class MetricField {
 public:
  MetricField(Mat observations, double sigma_M, double epsilon);

  /// Diagonal entries H_11..H_dd at x.
  Vec metric_at(const Vec& x) const;

  /// grad(i, j) = dH_ii/dx_j, from analytic differentiation of the weights.
  Mat metric_grad_at(const Vec& x) const;

  /// Evaluates the metric at each row of X (n x d) into H (n x d), and, when
  /// grads is non-null, the gradients into an n*d x d stack (rows i*d..i*d+d-1
  /// hold metric_grad_at(X.row(i))). One pass, vectorized over observations.
  void metric_batch(const Mat& X, Mat& H, Mat* grads) const;

  const Mat& observations() const { return obs_; }
  double sigma_M() const { return sigma_M_; }
  double epsilon() const { return epsilon_; }
  int dim() const { return static_cast<int>(obs_.cols()); }

 private:
  Mat obs_;  // K x d
  double sigma_M_;
  double epsilon_;
};

/// Median distance from each observation to its k-th nearest neighbour.
/// The default bandwidth rule for build_metric.
double knn_bandwidth(const Mat& observations, int k = 10);

/// Convenience constructor; sigma_M <= 0 selects the kNN bandwidth rule.
MetricField build_metric(const Mat& observations, double sigma_M = 0.0,
                         double epsilon = 1e-4);

}  // namespace geodrift
