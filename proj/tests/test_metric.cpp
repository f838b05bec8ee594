#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "geodrift/metric.hpp"
#include "geodrift/rng.hpp"

using namespace geodrift;

TEST_CASE("two-observation closed form") {
  // Observations at -1 and +1 in 1-D, query at 0 with sigma_M = 1:
  // both weights are e^{-1/2} and both squared offsets are 1, so
  // H = 1 / (2 e^{-1/2} + eps).
  Mat obs(2, 1);
  obs << -1.0, 1.0;
  const double eps = 1e-4;
  const MetricField m(obs, 1.0, eps);
  Vec x(1);
  x << 0.0;
  const double expected = 1.0 / (2.0 * std::exp(-0.5) + eps);
  CHECK(m.metric_at(x)(0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central differences") {
  Rng rng(4);
  Mat obs(120, 2);
  for (long i = 0; i < obs.rows(); ++i)
    for (long c = 0; c < 2; ++c) obs(i, c) = 2.0 * rng.gauss();
  const MetricField m = build_metric(obs, 0.6, 1e-4);

  const double step = 1e-5;
  double worst = 0.0;
  for (int p = 0; p < 100; ++p) {
    Vec x(2);
    x << 6.0 * rng.uniform() - 3.0, 6.0 * rng.uniform() - 3.0;
    const Mat G = m.metric_grad_at(x);
    Mat Gfd(2, 2);
    for (long j = 0; j < 2; ++j) {
      Vec xp = x, xm = x;
      xp(j) += step;
      xm(j) -= step;
      Gfd.col(j) = (m.metric_at(xp) - m.metric_at(xm)) / (2.0 * step);
    }
    worst = std::max(worst, (G - Gfd).norm() / std::max(Gfd.norm(), 1e-12));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("entries stay inside (0, 1/eps]") {
  Rng rng(9);
  Mat obs(60, 2);
  for (long i = 0; i < obs.rows(); ++i)
    for (long c = 0; c < 2; ++c) obs(i, c) = rng.gauss();
  const double eps = 1e-3;
  const MetricField m = build_metric(obs, 0.5, eps);
  for (int p = 0; p < 200; ++p) {
    Vec x(2);
    x << 20.0 * rng.uniform() - 10.0, 20.0 * rng.uniform() - 10.0;
    const Vec H = m.metric_at(x);
    CHECK(H.minCoeff() > 0.0);
    CHECK(H.maxCoeff() <= 1.0 / eps + 1e-9);
  }
  // Far from all data the weights vanish and the metric saturates at 1/eps.
  Vec far(2);
  far << 1e3, 1e3;
  CHECK(m.metric_at(far)(0) == doctest::Approx(1.0 / eps).epsilon(1e-12));
}

TEST_CASE("observation order does not change the metric") {
  Rng rng(21);
  Mat obs(50, 2);
  for (long i = 0; i < obs.rows(); ++i)
    for (long c = 0; c < 2; ++c) obs(i, c) = rng.gauss();

  Mat shuffled = obs;
  std::vector<long> perm(obs.rows());
  for (long i = 0; i < obs.rows(); ++i) perm[i] = i;
  std::mt19937 g(3);
  std::shuffle(perm.begin(), perm.end(), g);
  for (long i = 0; i < obs.rows(); ++i) shuffled.row(i) = obs.row(perm[i]);

  const MetricField m1(obs, 0.5, 1e-4);
  const MetricField m2(shuffled, 0.5, 1e-4);
  Vec x(2);
  x << 0.3, -0.8;
  CHECK(m1.metric_at(x) == m2.metric_at(x));  // bitwise: summation order fixed
  CHECK(m1.metric_grad_at(x) == m2.metric_grad_at(x));
}

TEST_CASE("batch evaluation agrees with pointwise") {
  Rng rng(31);
  Mat obs(40, 2);
  for (long i = 0; i < obs.rows(); ++i)
    for (long c = 0; c < 2; ++c) obs(i, c) = rng.gauss();
  const MetricField m(obs, 0.7, 1e-4);

  Mat X(17, 2);
  for (long i = 0; i < X.rows(); ++i)
    for (long c = 0; c < 2; ++c) X(i, c) = 2.0 * rng.gauss();
  Mat H, grads;
  m.metric_batch(X, H, &grads);
  for (long i = 0; i < X.rows(); ++i) {
    const Vec x = X.row(i).transpose();
    CHECK((H.row(i).transpose() - m.metric_at(x)).norm() == 0.0);
    CHECK((grads.middleRows(i * 2, 2) - m.metric_grad_at(x)).norm() == 0.0);
  }
}

TEST_CASE("knn bandwidth on a regular 1-D grid") {
  // On the integer grid 0..99, the 10th nearest neighbour of an interior
  // point sits 5 away, and interior points dominate the median.
  Mat obs(100, 1);
  for (long i = 0; i < 100; ++i) obs(i, 0) = double(i);
  CHECK(knn_bandwidth(obs, 10) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("degenerate inputs are rejected") {
  Mat obs(3, 2);
  obs << 0, 0, 1, 1, 2, 2;
  CHECK_THROWS(MetricField(obs, 0.0, 1e-4));   // bandwidth must be positive
  CHECK_THROWS(MetricField(obs, 1.0, 0.0));    // epsilon must be positive
  CHECK_THROWS(MetricField(Mat(0, 2), 1.0, 1e-4));
}
