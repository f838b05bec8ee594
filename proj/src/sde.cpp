#include "geodrift/sde.hpp"

#include <cmath>

#include "geodrift/rng.hpp"

namespace geodrift {

Mat DriftField::jacobian(const Vec& x, double step) const {
  if (jac) return jac(x);
  const int d = dim;
  Mat J(d, d);
  Vec xp = x, xm = x;
  for (int j = 0; j < d; ++j) {
    xp(j) = x(j) + step;
    xm(j) = x(j) - step;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * step);
    xp(j) = x(j);
    xm(j) = x(j);
  }
  return J;
}

std::vector<Mat> DriftField::hessians(const Vec& x, double step) const {
  if (hess) return hess(x);
  const int d = dim;
  std::vector<Mat> H(d, Mat::Zero(d, d));
  Vec xp = x, xm = x;
  for (int j = 0; j < d; ++j) {
    xp(j) = x(j) + step;
    xm(j) = x(j) - step;
    const Mat Jp = jacobian(xp, step);
    const Mat Jm = jacobian(xm, step);
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) H[i](k, j) = (Jp(i, k) - Jm(i, k)) / (2.0 * step);
    xp(j) = x(j);
    xm(j) = x(j);
  }
  // Symmetrize: mixed partials commute for smooth fields.
  for (int i = 0; i < d; ++i) H[i] = 0.5 * (H[i] + H[i].transpose()).eval();
  return H;
}

namespace {

double get_param(const std::map<std::string, double>& p, const std::string& key,
                 double fallback, bool required = false) {
  auto it = p.find(key);
  if (it == p.end()) {
    if (required) throw std::invalid_argument("make_drift: missing parameter '" + key + "'");
    return fallback;
  }
  if (!std::isfinite(it->second))
    throw std::invalid_argument("make_drift: non-finite parameter '" + key + "'");
  return it->second;
}

DriftField vdp_field(double mu) {
  DriftField d;
  d.dim = 2;
  d.label = "vdp(mu=" + std::to_string(mu) + ")";
  d.f = [mu](const Vec& x) {
    Vec out(2);
    out(0) = mu * (x(0) - x(0) * x(0) * x(0) / 3.0 - x(1));
    out(1) = x(0) / mu;
    return out;
  };
  d.jac = [mu](const Vec& x) {
    Mat J(2, 2);
    J(0, 0) = mu * (1.0 - x(0) * x(0));
    J(0, 1) = -mu;
    J(1, 0) = 1.0 / mu;
    J(1, 1) = 0.0;
    return J;
  };
  d.hess = [mu](const Vec& x) {
    std::vector<Mat> H(2, Mat::Zero(2, 2));
    H[0](0, 0) = -2.0 * mu * x(0);
    return H;
  };
  return d;
}

DriftField hopf_field(double mu) {
  DriftField d;
  d.dim = 2;
  d.label = "hopf(mu=" + std::to_string(mu) + ")";
  d.f = [mu](const Vec& x) {
    Vec out(2);
    out(0) = x(1);
    out(1) = -x(0) + (mu - x(0) * x(0)) * x(1);
    return out;
  };
  d.jac = [mu](const Vec& x) {
    Mat J(2, 2);
    J(0, 0) = 0.0;
    J(0, 1) = 1.0;
    J(1, 0) = -1.0 - 2.0 * x(0) * x(1);
    J(1, 1) = mu - x(0) * x(0);
    return J;
  };
  d.hess = [](const Vec& x) {
    std::vector<Mat> H(2, Mat::Zero(2, 2));
    H[1](0, 0) = -2.0 * x(1);
    H[1](0, 1) = -2.0 * x(0);
    H[1](1, 0) = -2.0 * x(0);
    return H;
  };
  return d;
}

DriftField selkov_field(double alpha) {
  DriftField d;
  d.dim = 2;
  d.label = "selkov(alpha=" + std::to_string(alpha) + ")";
  d.f = [alpha](const Vec& x) {
    Vec out(2);
    const double coupling = alpha * x(1) + x(0) * x(0) * x(1);
    out(0) = -x(0) + coupling;
    out(1) = 0.6 - coupling;
    return out;
  };
  d.jac = [alpha](const Vec& x) {
    Mat J(2, 2);
    J(0, 0) = -1.0 + 2.0 * x(0) * x(1);
    J(0, 1) = alpha + x(0) * x(0);
    J(1, 0) = -2.0 * x(0) * x(1);
    J(1, 1) = -(alpha + x(0) * x(0));
    return J;
  };
  d.hess = [](const Vec& x) {
    std::vector<Mat> H(2, Mat::Zero(2, 2));
    H[0](0, 0) = 2.0 * x(1);
    H[0](0, 1) = 2.0 * x(0);
    H[0](1, 0) = 2.0 * x(0);
    H[1] = -H[0];
    return H;
  };
  return d;
}

DriftField outofeq_field(double alpha, double sigma_obs) {
  DriftField d;
  d.dim = 2;
  d.label = "outofeq(alpha=" + std::to_string(alpha) +
            ",sigma_obs=" + std::to_string(sigma_obs) + ")";
  Mat Omega(2, 2);
  Omega << 2.0, 2.0, -2.0, 2.0;
  const double s2 = sigma_obs * sigma_obs;
  d.f = [Omega, alpha, s2](const Vec& x) {
    const double bump = alpha * std::exp(-x.squaredNorm() / (2.0 * s2));
    return Vec(-Omega * x + bump * x);
  };
  d.jac = [Omega, alpha, s2](const Vec& x) {
    const double bump = alpha * std::exp(-x.squaredNorm() / (2.0 * s2));
    Mat J = -Omega + bump * Mat::Identity(2, 2);
    J -= (bump / s2) * (x * x.transpose());
    return J;
  };
  d.hess = [Omega, alpha, s2](const Vec& x) {
    // d2/dxj dxk of [bump(x) x_i] with bump = a exp(-|x|^2 / (2 s^2)):
    //   bump [ -(d_ij x_k + d_ik x_j + d_jk x_i)/s^2 + x_i x_j x_k / s^4 ]
    const double bump = alpha * std::exp(-x.squaredNorm() / (2.0 * s2));
    std::vector<Mat> H(2, Mat::Zero(2, 2));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          double v = x(i) * x(j) * x(k) / (s2 * s2);
          if (i == j) v -= x(k) / s2;
          if (i == k) v -= x(j) / s2;
          if (j == k) v -= x(i) / s2;
          H[i](j, k) = bump * v;
        }
    return H;
  };
  return d;
}

DriftField linear_field(const Mat& A) {
  DriftField d;
  d.dim = static_cast<int>(A.rows());
  d.label = "linear";
  d.f = [A](const Vec& x) { return Vec(A * x); };
  d.jac = [A](const Vec&) { return A; };
  d.hess = [n = d.dim](const Vec&) { return std::vector<Mat>(n, Mat::Zero(n, n)); };
  return d;
}

DriftField zero_field(int dim) {
  DriftField d;
  d.dim = dim;
  d.label = "zero";
  d.f = [dim](const Vec&) { return Vec(Vec::Zero(dim)); };
  d.jac = [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); };
  d.hess = [dim](const Vec&) { return std::vector<Mat>(dim, Mat::Zero(dim, dim)); };
  return d;
}

}  // namespace

DriftField make_drift(const std::string& system_name,
                      const std::map<std::string, double>& params) {
  if (system_name == "vdp") return vdp_field(get_param(params, "mu", 1.0));
  if (system_name == "hopf") return hopf_field(get_param(params, "mu", 0.35));
  if (system_name == "selkov") return selkov_field(get_param(params, "alpha", 0.06));
  if (system_name == "outofeq")
    return outofeq_field(get_param(params, "alpha", 10.0),
                         get_param(params, "sigma_obs", 0.5));
  if (system_name == "linear") {
    Mat A(2, 2);
    A << get_param(params, "a11", 0.0, true), get_param(params, "a12", 0.0),
        get_param(params, "a21", 0.0), get_param(params, "a22", 0.0, true);
    return linear_field(A);
  }
  if (system_name == "zero")
    return zero_field(static_cast<int>(get_param(params, "dim", 2.0)));
  throw std::invalid_argument("make_drift: unknown system '" + system_name + "'");
}

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("SimConfig: dt must be positive");
  if (!(T >= dt)) throw std::invalid_argument("SimConfig: T must be at least dt");
  if (!(sigma >= 0.0)) throw std::invalid_argument("SimConfig: sigma must be nonnegative");
  if (x0.size() == 0) throw std::invalid_argument("SimConfig: x0 is empty");
  if (!x0.allFinite()) throw std::invalid_argument("SimConfig: x0 must be finite");
}

Trajectory euler_maruyama(const DriftField& drift, const SimConfig& cfg) {
  cfg.validate();
  const int d = static_cast<int>(cfg.x0.size());
  if (drift.dim != d)
    throw std::invalid_argument("euler_maruyama: drift dimension does not match x0");

  const long n_steps = static_cast<long>(std::floor(cfg.T / cfg.dt + 1e-9));
  Trajectory traj;
  traj.times.resize(n_steps + 1);
  traj.states.resize(n_steps + 1, d);

  Rng rng(cfg.seed);
  const double noise_scale = cfg.sigma * std::sqrt(cfg.dt);
  Vec x = cfg.x0;
  traj.times[0] = 0.0;
  traj.states.row(0) = x.transpose();
  Vec xi(d);
  for (long n = 0; n < n_steps; ++n) {
    const Vec fx = drift.f(x);
    for (int j = 0; j < d; ++j) xi(j) = rng.gauss();
    x += fx * cfg.dt + noise_scale * xi;
    if (!x.allFinite())
      throw std::runtime_error("euler_maruyama: non-finite state at step " +
                               std::to_string(n + 1) + " (drift blow-up)");
    traj.times[n + 1] = static_cast<double>(n + 1) * cfg.dt;
    traj.states.row(n + 1) = x.transpose();
  }
  return traj;
}

ObservationSet subsample(const Trajectory& traj, long stride) {
  if (stride < 1) throw std::invalid_argument("subsample: stride must be >= 1");
  if (stride >= traj.size())
    throw std::invalid_argument("subsample: stride exceeds trajectory length");
  const long K = (traj.size() - 1) / stride + 1;
  ObservationSet obs;
  obs.observations.resize(K, traj.dim());
  for (long k = 0; k < K; ++k) obs.observations.row(k) = traj.states.row(k * stride);
  obs.dt = traj.times.size() > 1 ? traj.times[1] - traj.times[0] : 0.0;
  obs.tau = static_cast<double>(stride) * obs.dt;
  obs.stride = stride;
  return obs;
}

}  // namespace geodrift
