#include "geodrift/eval.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "geodrift/io.hpp"

namespace geodrift {

EvalGrid make_eval_grid(const Mat& observations, std::vector<long> shape,
                        double inflate, const Mat* density_sample) {
  if (observations.rows() < 1)
    throw std::invalid_argument("eval grid: no observations");
  const long d = observations.cols();
  if (shape.empty()) shape.assign(d, 50);
  if (static_cast<long>(shape.size()) != d)
    throw std::invalid_argument("eval grid: shape rank mismatch");

  EvalGrid grid;
  grid.shape = shape;
  grid.lo = observations.colwise().minCoeff().transpose();
  grid.hi = observations.colwise().maxCoeff().transpose();
  Vec ext = grid.hi - grid.lo;
  for (long c = 0; c < d; ++c)
    if (ext(c) <= 0.0) ext(c) = 1.0;
  grid.lo -= inflate * ext;
  grid.hi += inflate * ext;

  long total = 1;
  for (long c = 0; c < d; ++c) {
    if (shape[c] < 2) throw std::invalid_argument("eval grid: need >= 2 nodes per dim");
    total *= shape[c];
  }
  grid.nodes.resize(total, d);
  std::vector<long> ix(d, 0);
  for (long r = 0; r < total; ++r) {
    for (long c = 0; c < d; ++c) {
      const double f =
          static_cast<double>(ix[c]) / static_cast<double>(shape[c] - 1);
      grid.nodes(r, c) = grid.lo(c) + f * (grid.hi(c) - grid.lo(c));
    }
    for (long c = d - 1; c >= 0; --c) {
      if (++ix[c] < shape[c]) break;
      ix[c] = 0;
    }
  }
  const Mat& sample =
      (density_sample != nullptr && density_sample->rows() > 0)
          ? *density_sample
          : observations;
  if (density_sample != nullptr && density_sample->cols() != d)
    throw std::invalid_argument("eval grid: density sample rank mismatch");
  grid.weights = kde_weights(sample, grid.nodes, &grid.bandwidths);
  return grid;
}

Vec kde_weights(const Mat& observations, const Mat& nodes,
                Vec* bandwidths_out) {
  if (nodes.rows() == 0) throw std::invalid_argument("kde_weights: empty grid");
  const long n = observations.rows();
  const long d = observations.cols();

  // Silverman's rule per dimension.
  Vec h(d);
  for (long c = 0; c < d; ++c) {
    double sd = 1.0;
    if (n > 1) {
      const double mean = observations.col(c).mean();
      sd = std::sqrt((observations.col(c).array() - mean).square().sum() /
                     static_cast<double>(n - 1));
    }
    if (sd <= 0.0) sd = 1e-8;
    const double factor =
        std::pow(4.0 / (static_cast<double>(d) + 2.0),
                 1.0 / (static_cast<double>(d) + 4.0)) *
        std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
    h(c) = sd * factor;
  }
  if (bandwidths_out != nullptr) *bandwidths_out = h;

  Mat Xs = observations * h.cwiseInverse().asDiagonal();
  Mat Ns = nodes * h.cwiseInverse().asDiagonal();
  Mat D = (-2.0 * Ns * Xs.transpose()).rowwise() +
          Xs.rowwise().squaredNorm().transpose();
  D.colwise() += Ns.rowwise().squaredNorm();
  Vec w = (-0.5 * D.array().max(0.0)).exp().rowwise().sum();
  const double total = w.sum();
  if (total <= 0.0 || !std::isfinite(total))
    throw std::runtime_error("kde_weights: degenerate weight normalization");
  return w / total;
}

namespace {

double weighted_sq_error(const DriftField& f_true, const DriftEval& f_est,
                         const EvalGrid& grid) {
  Mat est = f_est.eval_batch(grid.nodes);
  double acc = 0.0;
  for (long r = 0; r < grid.nodes.rows(); ++r) {
    Vec ft = f_true.f(grid.nodes.row(r).transpose());
    const double sq = (ft.transpose() - est.row(r)).squaredNorm();
    if (!std::isfinite(sq)) throw std::runtime_error("wrmse: non-finite field value");
    acc += grid.weights(r) * sq;
  }
  return acc;
}

}  // namespace

double wrmse(const DriftField& f_true, const DriftEval& f_est,
             const EvalGrid& grid) {
  return std::sqrt(weighted_sq_error(f_true, f_est, grid));
}

double wrmse_sum_nodes(const DriftField& f_true, const DriftEval& f_est,
                       const EvalGrid& grid) {
  return std::sqrt(weighted_sq_error(f_true, f_est, grid) *
                   static_cast<double>(grid.nodes.rows()));
}

Vec flow_curvature(const DriftField& f, const Vec& x) {
  Vec fx = f.f(x);
  const double n2 = fx.squaredNorm();
  if (std::sqrt(n2) <= 1e-8)
    throw std::domain_error("flow_curvature: near-equilibrium point");
  Mat J = f.jac ? f.jac(x) : f.jacobian(x);
  Vec jf = J * fx;
  Vec kappa = (jf - fx * (fx.dot(jf) / n2)) / n2;
  return kappa;
}

namespace {

/// h1(y) = J_f(y) f(y), using analytic callbacks when allowed.
Vec advect_jacobian(const DriftField& f, const Vec& y, bool analytic) {
  Mat J = (analytic && f.jac) ? f.jac(y) : f.jacobian(y);
  return J * f.f(y);
}

/// h2(y) = (sigma^2/2) * component-wise Laplacian of f.
Vec half_diffused(const DriftField& f, const Vec& y, double sigma,
                  bool analytic) {
  std::vector<Mat> H = (analytic && f.hess) ? f.hess(y) : f.hessians(y);
  Vec out(y.size());
  for (long i = 0; i < y.size(); ++i) out(i) = 0.5 * sigma * sigma * H[i].trace();
  return out;
}

}  // namespace

Vec em_bias_estimate(const DriftField& f, double sigma, double tau,
                     const Vec& x, bool analytic) {
  Vec fx = f.f(x);
  const double fn = fx.norm();
  if (fn <= 1e-8)
    throw std::domain_error("em_bias_estimate: near-equilibrium point");

  // First bracket term: directional derivative of h1 along f.  With analytic
  // second derivatives this is exact: J_{h1} = J^2 + stack_i(H_i f).
  Vec term1;
  if (analytic && f.jac && f.hess) {
    Mat J = f.jac(x);
    std::vector<Mat> H = f.hess(x);
    Mat Jh1 = J * J;
    for (long i = 0; i < x.size(); ++i) Jh1.row(i) += (H[i] * fx).transpose();
    term1 = Jh1 * fx;
  } else {
    const double step = 1e-4 / std::max(1.0, fn);
    term1 = (advect_jacobian(f, x + step * fx, analytic) -
             advect_jacobian(f, x - step * fx, analytic)) /
            (2.0 * step);
  }

  // Second bracket term needs third derivatives in closed form, so the
  // directional derivative is always a central difference over h2.
  const double step = 1e-4 / std::max(1.0, fn);
  Vec term2 = (half_diffused(f, x + step * fx, sigma, analytic) -
               half_diffused(f, x - step * fx, sigma, analytic)) /
              (2.0 * step);

  return 0.5 * tau * (term1 + term2);
}

CurvatureReport curvature_scan(const DriftField& f, double sigma, double tau,
                               const Mat& nodes) {
  CurvatureReport rep;
  const long n = nodes.rows();
  const long d = nodes.cols();
  rep.kappa = Mat::Constant(n, d, std::numeric_limits<double>::quiet_NaN());
  rep.bias = Mat::Constant(n, d, std::numeric_limits<double>::quiet_NaN());
  rep.f_norm = Vec::Zero(n);
  double kappa_sum = 0.0, bias_sum = 0.0;
  long counted = 0;
  for (long r = 0; r < n; ++r) {
    Vec x = nodes.row(r).transpose();
    rep.f_norm(r) = f.f(x).norm();
    if (rep.f_norm(r) <= 1e-8) {
      ++rep.skipped;
      continue;
    }
    Vec k = flow_curvature(f, x);
    Vec b = em_bias_estimate(f, sigma, tau, x);
    rep.kappa.row(r) = k.transpose();
    rep.bias.row(r) = b.transpose();
    rep.max_kappa_norm = std::max(rep.max_kappa_norm, k.norm());
    rep.max_bias_norm = std::max(rep.max_bias_norm, b.norm());
    kappa_sum += k.norm();
    bias_sum += b.norm();
    ++counted;
  }
  if (counted > 0) {
    rep.mean_kappa_norm = kappa_sum / static_cast<double>(counted);
    rep.mean_bias_norm = bias_sum / static_cast<double>(counted);
  }
  return rep;
}

void write_drift_grid_csv(const std::string& path, const EvalGrid& grid,
                          const DriftField& f_true, const DriftEval& f_est) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const long d = grid.nodes.cols();
  for (long c = 0; c < d; ++c) out << "x" << (c + 1) << ",";
  for (long c = 0; c < d; ++c) out << "ftrue" << (c + 1) << ",";
  for (long c = 0; c < d; ++c) out << "fest" << (c + 1) << ",";
  out << "weight\n";
  Mat est = f_est.eval_batch(grid.nodes);
  for (long r = 0; r < grid.nodes.rows(); ++r) {
    Vec ft = f_true.f(grid.nodes.row(r).transpose());
    for (long c = 0; c < d; ++c) out << format_double(grid.nodes(r, c)) << ",";
    for (long c = 0; c < d; ++c) out << format_double(ft(c)) << ",";
    for (long c = 0; c < d; ++c) out << format_double(est(r, c)) << ",";
    out << format_double(grid.weights(r)) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_diagnostics_csv(const std::string& path, const Mat& nodes,
                           const DriftField& f, const CurvatureReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const long d = nodes.cols();
  for (long c = 0; c < d; ++c) out << "x" << (c + 1) << ",";
  for (long c = 0; c < d; ++c) out << "f" << (c + 1) << ",";
  for (long c = 0; c < d; ++c) out << "kappa" << (c + 1) << ",";
  for (long c = 0; c < d; ++c)
    out << "bias" << (c + 1) << (c + 1 < d ? "," : "\n");
  for (long r = 0; r < nodes.rows(); ++r) {
    Vec x = nodes.row(r).transpose();
    Vec fx = f.f(x);
    for (long c = 0; c < d; ++c) out << format_double(nodes(r, c)) << ",";
    for (long c = 0; c < d; ++c) out << format_double(fx(c)) << ",";
    for (long c = 0; c < d; ++c) out << format_double(rep.kappa(r, c)) << ",";
    for (long c = 0; c < d; ++c)
      out << format_double(rep.bias(r, c)) << (c + 1 < d ? "," : "\n");
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace geodrift
