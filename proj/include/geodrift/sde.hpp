#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace geodrift {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Deterministic drift field f(x) with optional analytic derivatives.
/// jac(x)(i,j) = df_i/dx_j; hess(x)[i] is the Hessian of component f_i.
/// When an analytic evaluator is absent, callers fall back to central
/// differences.
struct DriftField {
  int dim = 0;
  std::string label;
  std::function<Vec(const Vec&)> f;
  std::function<Mat(const Vec&)> jac;                // optional
  std::function<std::vector<Mat>(const Vec&)> hess;  // optional

  Vec operator()(const Vec& x) const { return f(x); }

  /// Jacobian, analytic if available, otherwise central differences.
  Mat jacobian(const Vec& x, double step = 1e-5) const;
  /// Component Hessians, analytic if available, otherwise nested central
  /// differences on the Jacobian.
  std::vector<Mat> hessians(const Vec& x, double step = 1e-4) const;
};

/// Builds one of the benchmark drift fields.
///
/// Supported names and parameters:
///   vdp      mu                    f1 = mu (x - x^3/3 - y), f2 = x / mu
///   hopf     mu                    f1 = x2, f2 = -x1 + (mu - x1^2) x2
///   selkov   alpha                 f1 = -x1 + a x2 + x1^2 x2
///                                  f2 = 0.6 - a x2 - x1^2 x2
///   outofeq  alpha, sigma_obs      f = -Omega x + a exp(-|x|^2/(2 s^2)) x,
///                                  Omega = [[2, 2], [-2, 2]]
///   linear   a11, a12, a21, a22    f = A x
///   zero     (dim, default 2)      f = 0
DriftField make_drift(const std::string& system_name,
                      const std::map<std::string, double>& params = {});

struct SimConfig {
  double dt = 0.01;
  double T = 1.0;
  double sigma = 0.0;
  Vec x0;
  uint64_t seed = 0;

  void validate() const;
};

struct Trajectory {
  std::vector<double> times;
  Mat states;  // (num steps + 1) x d, one state per row

  int dim() const { return static_cast<int>(states.cols()); }
  long size() const { return static_cast<long>(states.rows()); }
};

struct ObservationSet {
  Mat observations;  // K x d
  double tau = 0.0;
  double dt = 0.0;
  long stride = 0;

  long count() const { return static_cast<long>(observations.rows()); }
  int dim() const { return static_cast<int>(observations.cols()); }
};

/// Minimal interface for "something that evaluates a drift": analytic fields
/// and fitted models both implement it, so the augmentation and EM stages are
/// agnostic about where their prior drift comes from.
class DriftEval {
 public:
  virtual ~DriftEval() = default;
  virtual int dim() const = 0;
  /// Evaluates the field at each row of X; returns a matrix of the same shape.
  virtual Mat eval_batch(const Mat& X) const = 0;

  Vec eval(const Vec& x) const { return eval_batch(x.transpose()).row(0).transpose(); }
};

/// DriftField viewed through the DriftEval interface.
class FieldEval : public DriftEval {
 public:
  explicit FieldEval(DriftField field) : field_(std::move(field)) {}
  int dim() const override { return field_.dim; }
  Mat eval_batch(const Mat& X) const override {
    Mat out(X.rows(), X.cols());
    for (long i = 0; i < X.rows(); ++i)
      out.row(i) = field_.f(X.row(i).transpose()).transpose();
    return out;
  }
  const DriftField& field() const { return field_; }

 private:
  DriftField field_;
};

/// Euler-Maruyama integration: X_{n+1} = X_n + f(X_n) dt + sigma sqrt(dt) xi.
/// Throws std::runtime_error naming the step index if the state leaves the
/// finite range (drift blow-up).
Trajectory euler_maruyama(const DriftField& drift, const SimConfig& cfg);

/// Keeps every stride-th state; tau = stride * dt.
ObservationSet subsample(const Trajectory& traj, long stride);

}  // namespace geodrift
