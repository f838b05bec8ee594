#include "geodrift/score.hpp"

#include <algorithm>
#include <cmath>

#include "geodrift/rng.hpp"

namespace geodrift {

namespace {

// exp(-|x_i - z_m|^2 / (2 l^2)) for all rows of X against rows of Z.
Mat se_gram(const Mat& X, const Mat& Z, double ell) {
  Mat D = -2.0 * X * Z.transpose();
  D.colwise() += X.rowwise().squaredNorm();
  D.rowwise() += Z.rowwise().squaredNorm().transpose();
  return (-D.array().max(0.0) / (2.0 * ell * ell)).exp().matrix();
}

double median_pairwise_distance(const Mat& X) {
  const long N = X.rows();
  std::vector<double> d2;
  d2.reserve(N * (N - 1) / 2);
  for (long i = 0; i < N; ++i)
    for (long j = i + 1; j < N; ++j)
      d2.push_back((X.row(i) - X.row(j)).squaredNorm());
  auto mid = d2.begin() + d2.size() / 2;
  std::nth_element(d2.begin(), mid, d2.end());
  return std::sqrt(*mid);
}

}  // namespace

Vec ScoreEstimate::at(const Vec& x) const {
  return at_batch(x.transpose()).row(0).transpose();
}

Mat ScoreEstimate::at_batch(const Mat& X) const {
  Mat D = -2.0 * X * inducing.transpose();
  D.colwise() += X.rowwise().squaredNorm();
  D.rowwise() += inducing.rowwise().squaredNorm().transpose();
  D = D.cwiseMax(0.0);
  const double ell2 = lengthscale * lengthscale;
  Mat out = (-D.array() / (2.0 * ell2)).exp().matrix() * alpha;
  if (tail_mean.size() > 0) {
    const Vec dmin = D.rowwise().minCoeff();
    const Mat pull = (X.rowwise() - tail_mean.transpose()) * tail_prec;
    for (long r = 0; r < X.rows(); ++r) {
      const double excess = std::sqrt(dmin(r)) - lengthscale;
      if (excess <= 0.0) continue;
      const double gate = 1.0 - std::exp(-excess * excess / (2.0 * ell2));
      out.row(r) -= gate * pull.row(r);
    }
  }
  return out;
}

ScoreEstimate fit_score(const Mat& particles, int M, double lambda, uint64_t seed) {
  const long N = particles.rows();
  const int d = static_cast<int>(particles.cols());
  if (M < 2) throw std::invalid_argument("fit_score: M must be >= 2");
  if (N < M) throw std::invalid_argument("fit_score: need at least M particles");
  if (!particles.allFinite()) throw std::runtime_error("fit_score: non-finite particle");

  // Degenerate ensembles have no usable density; the caller must substitute
  // an analytic score (e.g. the pinned-endpoint Gaussian).
  const Mat centered = particles.rowwise() - particles.colwise().mean();
  const double spread = centered.array().abs().maxCoeff();
  if (spread < 1e-10)
    throw std::runtime_error("fit_score: degenerate ensemble (spread < 1e-10)");

  // Seeded uniform subsample of M distinct particles as inducing points.
  std::vector<long> idx(N);
  for (long i = 0; i < N; ++i) idx[i] = i;
  Rng rng(seed);
  for (int i = 0; i < M; ++i) {
    const long j = i + static_cast<long>(rng.below(N - i));
    std::swap(idx[i], idx[j]);
  }
  ScoreEstimate est;
  est.inducing.resize(M, d);
  for (int i = 0; i < M; ++i) est.inducing.row(i) = particles.row(idx[i]);
  est.lengthscale = median_pairwise_distance(particles);
  if (est.lengthscale < 1e-12) est.lengthscale = 1e-12;
  est.lambda = lambda;

  const double ell2 = est.lengthscale * est.lengthscale;
  const Mat G = se_gram(particles, est.inducing, est.lengthscale);  // N x M
  const Mat Kzz = se_gram(est.inducing, est.inducing, est.lengthscale);

  // Stationarity of the objective: (G^T G / N + lambda Kzz) alpha_i = -b_i / N,
  // with b_i[m] = sum_j dk(X_j, z_m)/dx_i = sum_j G[j,m] (z_m_i - X_j_i) / l^2.
  Mat A = G.transpose() * G / static_cast<double>(N) + lambda * Kzz;
  Mat B(M, d);
  for (int i = 0; i < d; ++i) {
    const Mat diff = est.inducing.col(i).transpose().replicate(N, 1) -
                     particles.col(i).replicate(1, M);
    B.col(i) = (G.array() * diff.array()).colwise().sum().transpose() / ell2;
  }

  // Both Gram terms share the same fast-decaying spectrum, so A is PSD but
  // numerically rank-deficient for tight ensembles; a small relative jitter
  // keeps the factorization strictly positive without moving the solution.
  const double scale = std::max(A.diagonal().maxCoeff(), 1e-300);
  Eigen::LDLT<Mat> solver;
  double jitter = 1e-8 * scale;
  for (int attempt = 0;; ++attempt) {
    solver.compute(A + jitter * Mat::Identity(M, M));
    if (solver.info() == Eigen::Success && solver.isPositive()) break;
    if (attempt == 1)
      throw std::runtime_error(
          "fit_score: singular regularized system (jitter " +
          std::to_string(jitter) + " insufficient)");
    jitter *= 100.0;
  }
  est.alpha = solver.solve(-B / static_cast<double>(N));
  if (!est.alpha.allFinite()) throw std::runtime_error("fit_score: non-finite solution");

  // Ensemble moments for the far-field evaluation tail. The variance floor
  // caps the pull's slope near 9/l^2, the same order as the fitted score's
  // slope inside the cloud.
  est.tail_mean = particles.colwise().mean().transpose();
  Mat C = centered.transpose() * centered / static_cast<double>(N);
  C.diagonal().array() += ell2 / 9.0;
  est.tail_prec = C.llt().solve(Mat::Identity(d, d));
  return est;
}

}  // namespace geodrift
