#include "geodrift/metric.hpp"

#include <algorithm>
#include <cmath>

namespace geodrift {

MetricField::MetricField(Mat observations, double sigma_M, double epsilon)
    : obs_(std::move(observations)), sigma_M_(sigma_M), epsilon_(epsilon) {
  if (obs_.rows() < 1) throw std::invalid_argument("MetricField: empty observation set");
  if (!(sigma_M_ > 0.0)) throw std::invalid_argument("MetricField: sigma_M must be positive");
  if (!(epsilon_ > 0.0)) throw std::invalid_argument("MetricField: epsilon must be positive");
  if (!obs_.allFinite()) throw std::invalid_argument("MetricField: non-finite observation");
  // Canonical row order: summation always runs over lexicographically sorted
  // observations, so a permuted input yields bit-identical metric values.
  std::vector<long> idx(obs_.rows());
  for (long i = 0; i < obs_.rows(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](long a, long b) {
    for (int j = 0; j < obs_.cols(); ++j) {
      if (obs_(a, j) != obs_(b, j)) return obs_(a, j) < obs_(b, j);
    }
    return false;
  });
  Mat sorted(obs_.rows(), obs_.cols());
  for (long i = 0; i < obs_.rows(); ++i) sorted.row(i) = obs_.row(idx[i]);
  obs_ = std::move(sorted);
}

Vec MetricField::metric_at(const Vec& x) const {
  if (!x.allFinite()) throw std::invalid_argument("metric_at: non-finite query");
  Mat H(1, dim());
  metric_batch(x.transpose(), H, nullptr);
  return H.row(0).transpose();
}

Mat MetricField::metric_grad_at(const Vec& x) const {
  Mat H(1, dim());
  Mat G(dim(), dim());
  Mat X = x.transpose();
  metric_batch(X, H, &G);
  return G;
}

void MetricField::metric_batch(const Mat& X, Mat& H, Mat* grads) const {
  const long n = X.rows();
  const long K = obs_.rows();
  const int d = dim();
  const double s2 = sigma_M_ * sigma_M_;
  H.resize(n, d);
  if (grads) grads->resize(n * d, d);

  Mat diffs(K, d);
  Eigen::ArrayXd w(K);
  for (long i = 0; i < n; ++i) {
    diffs = obs_.rowwise() - X.row(i);
    w = (-diffs.rowwise().squaredNorm().array() / (2.0 * s2)).exp();
    const Mat sq = diffs.array().square().matrix();  // K x d, (O_kd - x_d)^2
    Vec cov = sq.transpose() * w.matrix();           // d
    cov.array() += epsilon_;
    const Vec h = cov.cwiseInverse();
    H.row(i) = h.transpose();

    if (grads) {
      // dcov_d/dx_j = sum_k (w_k (O_kj - x_j) / s2) sq_kd - 2 d_dj sum_k w_k diff_kd
      const Mat wdiff = diffs.array().colwise() * w;        // K x d
      Mat dcov = sq.transpose() * (wdiff / s2);             // (d x K)(K x d) -> d x d
      const Vec diag_term = wdiff.colwise().sum().transpose();
      dcov.diagonal() -= 2.0 * diag_term;
      // dH_dd/dx_j = -H_dd^2 dcov_d/dx_j
      grads->middleRows(i * d, d) =
          (dcov.array().colwise() * (-h.array() * h.array())).matrix();
    }
  }
}

double knn_bandwidth(const Mat& observations, int k) {
  const long K = observations.rows();
  if (K < 2) throw std::invalid_argument("knn_bandwidth: need at least 2 observations");
  const int kk = static_cast<int>(std::min<long>(k, K - 1));
  std::vector<double> kth(K);
  std::vector<double> dists(K);
  for (long i = 0; i < K; ++i) {
    for (long j = 0; j < K; ++j)
      dists[j] = (observations.row(i) - observations.row(j)).norm();
    std::nth_element(dists.begin(), dists.begin() + kk, dists.end());
    kth[i] = dists[kk];  // self-distance 0 occupies rank 0
  }
  std::nth_element(kth.begin(), kth.begin() + K / 2, kth.end());
  double med = kth[K / 2];
  if (K % 2 == 0) {
    const double lo = *std::max_element(kth.begin(), kth.begin() + K / 2);
    med = 0.5 * (lo + med);
  }
  return med;
}

MetricField build_metric(const Mat& observations, double sigma_M, double epsilon) {
  if (observations.rows() < 1)
    throw std::invalid_argument("build_metric: empty observation set");
  if (sigma_M <= 0.0) sigma_M = knn_bandwidth(observations);
  return MetricField(observations, sigma_M, epsilon);
}

}  // namespace geodrift
