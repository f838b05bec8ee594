#include "geodrift/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "geodrift/ot.hpp"
#include "geodrift/rng.hpp"

namespace geodrift {

namespace {

Mat gaussian_cloud(const Vec& center, double variance, int n, Rng& rng) {
  Mat X(n, center.size());
  const double s = std::sqrt(variance);
  for (long i = 0; i < X.rows(); ++i)
    for (long j = 0; j < X.cols(); ++j) X(i, j) = center(j) + s * rng.gauss();
  return X;
}

void check_finite(const Mat& X, const char* pass, long ti) {
  if (X.allFinite()) return;
  std::ostringstream msg;
  msg << "bridge " << pass << " pass diverged at slice " << ti;
  throw std::runtime_error(msg.str());
}

ScoreEstimate fit_slice(const Mat& ensemble, const BridgeParams& p,
                        std::uint64_t seed) {
  const int m = static_cast<int>(
      std::min<long>(p.inducing, ensemble.rows()));
  return fit_score(ensemble, m, p.lambda, seed);
}

}  // namespace

void BridgeParams::validate() const {
  if (sigma <= 0.0) throw std::invalid_argument("bridge: sigma must be positive");
  if (beta < 0.0) throw std::invalid_argument("bridge: beta must be non-negative");
  if (eps_init <= 0.0) throw std::invalid_argument("bridge: eps_init must be positive");
  if (particles < 10) throw std::invalid_argument("bridge: need at least 10 particles");
  if (inducing < 1) throw std::invalid_argument("bridge: need at least 1 inducing point");
  if (lambda <= 0.0) throw std::invalid_argument("bridge: lambda must be positive");
  if (terminal_factor <= 0.0)
    throw std::invalid_argument("bridge: terminal_factor must be positive");
}

long BridgeProblem::steps() const {
  return std::lround(tau / dt);
}

void BridgeProblem::validate() const {
  params.validate();
  if (fhat == nullptr) throw std::invalid_argument("bridge: prior drift is null");
  if (a.size() == 0 || a.size() != b.size())
    throw std::invalid_argument("bridge: endpoint dimensions disagree");
  if (dt <= 0.0 || tau <= 0.0)
    throw std::invalid_argument("bridge: tau and dt must be positive");
  const long L = steps();
  if (L < 2 || std::abs(L * dt - tau) > 1e-9 * tau)
    throw std::invalid_argument("bridge: tau must be a multiple (>= 2) of dt");
  if (params.beta > 0.0 && gamma == nullptr)
    throw std::invalid_argument("bridge: beta > 0 requires a geodesic tether");
}

Vec BridgeProblem::tether(long ti) const {
  const double tp = static_cast<double>(ti) / static_cast<double>(steps());
  if (gamma != nullptr) return gamma->at(tp);
  return a + tp * (b - a);
}

Mat BridgeSolution::initial_score(const Mat& X) const {
  return (-(X.rowwise() - a.transpose())) / params.eps_init;
}

Mat BridgeSolution::control(const Mat& X, long ti) const {
  if (ti < 0 || ti > L) throw std::out_of_range("control: slice out of range");
  if (static_cast<std::size_t>(ti) >= q.size() || q[ti].inducing.rows() == 0)
    throw std::logic_error("control: backward score at this slice is missing");
  const double s2 = params.sigma * params.sigma;
  Mat sq = q[ti].at_batch(X);
  Mat sr = (ti == 0) ? initial_score(X) : rho[ti].at_batch(X);
  return s2 * (sq - sr);
}

Vec BridgeSolution::control_at(const Vec& x, long ti) const {
  return control(x.transpose(), ti).row(0).transpose();
}

namespace {

void init_solution(const BridgeProblem& prob, BridgeSolution& sol) {
  sol.dim = static_cast<int>(prob.a.size());
  sol.L = prob.steps();
  sol.dt = prob.dt;
  sol.a = prob.a;
  sol.b = prob.b;
  sol.params = prob.params;
  sol.Z.assign(sol.L + 1, Mat());
  sol.B.assign(sol.L + 1, Mat());
  sol.F.assign(sol.L + 1, Mat());
  sol.rho.assign(sol.L + 1, ScoreEstimate());
  sol.q.assign(sol.L + 1, ScoreEstimate());
  sol.g.assign(sol.L + 1, Mat());
}

}  // namespace

void forward_filter(const BridgeProblem& prob, BridgeSolution& sol) {
  if (sol.Z.empty()) init_solution(prob, sol);
  const BridgeParams& p = prob.params;
  const long L = sol.L;
  const double dt = prob.dt;
  const double half_s2 = 0.5 * p.sigma * p.sigma;

  Rng rng(derive_seed(prob.seed, 1));
  sol.Z[0] = gaussian_cloud(prob.a, p.eps_init, p.particles, rng);

  // First step with the analytic initialization score -(Z - a)/eps.
  {
    Mat drift = prob.fhat->eval_batch(sol.Z[0]) -
                half_s2 * sol.initial_score(sol.Z[0]);
    sol.Z[1] = sol.Z[0] + dt * drift;
    check_finite(sol.Z[1], "forward", 1);
  }

  for (long ti = 1; ti < L; ++ti) {
    sol.rho[ti] = fit_slice(sol.Z[ti], p, derive_seed(prob.seed, 0xF0, ti));
    Mat drift = prob.fhat->eval_batch(sol.Z[ti]) -
                half_s2 * sol.rho[ti].at_batch(sol.Z[ti]);
    Mat next = sol.Z[ti] + dt * drift;
    check_finite(next, "forward", ti + 1);

    if (p.beta > 0.0) {
      const Vec target = prob.tether(ti + 1);
      Vec expo = -p.beta * dt *
                 (next.rowwise() - target.transpose()).rowwise().squaredNorm();
      // Raw weights exp(expo) all underflowing means even the best particle is
      // unrepresentably far from the tether; resampling on renormalised noise
      // would be meaningless, so abort with a diagnostic instead.
      if (expo.maxCoeff() < -700.0)
        throw std::runtime_error(
            "bridge forward pass: tether constraint too stiff at slice " +
            std::to_string(ti + 1) +
            " (all particle weights underflow; reduce beta or dt)");
      Vec w = (expo.array() - expo.maxCoeff()).exp();
      next = etpf_transform(next, w);
    }
    sol.Z[ti + 1] = std::move(next);
  }
  sol.rho[L] = fit_slice(sol.Z[L], p, derive_seed(prob.seed, 0xF0, L));
}

void backward_flow(const BridgeProblem& prob, BridgeSolution& sol) {
  if (sol.Z.empty() || sol.rho.empty() || sol.rho[sol.L].inducing.rows() == 0)
    throw std::logic_error("backward_flow: forward pass has not run");
  const BridgeParams& p = prob.params;
  const long L = sol.L;
  const double dt = prob.dt;
  const double s2 = p.sigma * p.sigma;
  const double half_s2 = 0.5 * s2;

  Rng rng(derive_seed(prob.seed, 2));
  sol.B[L] = gaussian_cloud(prob.b, p.eps_init, p.particles, rng);
  sol.q[L] = fit_slice(sol.B[L], p, derive_seed(prob.seed, 0xB0, L));

  // First step: the terminal ensemble is exactly the pinned Gaussian, so its
  // own score enters analytically while the forward score enters through the
  // slice-L fit.
  {
    Mat pin = (-(sol.B[L].rowwise() - prob.b.transpose())) / p.eps_init;
    Mat drift = prob.fhat->eval_batch(sol.B[L]) -
                s2 * sol.rho[L].at_batch(sol.B[L]) + half_s2 * pin;
    sol.B[L - 1] = sol.B[L] - dt * drift;
    check_finite(sol.B[L - 1], "backward", L - 1);
  }

  for (long ti = L - 1; ti >= 1; --ti) {
    sol.q[ti] = fit_slice(sol.B[ti], p, derive_seed(prob.seed, 0xB0, ti));
    Mat drift = prob.fhat->eval_batch(sol.B[ti]) -
                s2 * sol.rho[ti].at_batch(sol.B[ti]) +
                half_s2 * sol.q[ti].at_batch(sol.B[ti]);
    sol.B[ti - 1] = sol.B[ti] - dt * drift;
    check_finite(sol.B[ti - 1], "backward", ti - 1);
  }
  sol.q[0] = fit_slice(sol.B[0], p, derive_seed(prob.seed, 0xB0, 0));
}

void controlled_paths(const BridgeProblem& prob, BridgeSolution& sol) {
  if (sol.q.empty() || sol.q[0].inducing.rows() == 0)
    throw std::logic_error("controlled_paths: backward pass has not run");
  const BridgeParams& p = prob.params;
  const long L = sol.L;
  const double dt = prob.dt;
  const double half_s2 = 0.5 * p.sigma * p.sigma;

  Rng rng(derive_seed(prob.seed, 3));
  sol.F[0] = gaussian_cloud(prob.a, p.eps_init, p.particles, rng);

  // Step 0 carries the initial pinning score on top of the control; later
  // steps integrate the plain controlled drift.
  {
    Mat drift = prob.fhat->eval_batch(sol.F[0]) + sol.control(sol.F[0], 0) -
                half_s2 * sol.initial_score(sol.F[0]);
    sol.F[1] = sol.F[0] + dt * drift;
    check_finite(sol.F[1], "controlled", 1);
  }

  for (long ti = 1; ti < L; ++ti) {
    sol.g[ti] = prob.fhat->eval_batch(sol.F[ti]) + sol.control(sol.F[ti], ti);
    sol.F[ti + 1] = sol.F[ti] + dt * sol.g[ti];
    check_finite(sol.F[ti + 1], "controlled", ti + 1);
  }
  sol.g[L] = prob.fhat->eval_batch(sol.F[L]) + sol.control(sol.F[L], L);

  const Vec mean_end = sol.F[L].colwise().mean().transpose();
  sol.terminal_miss = (mean_end - prob.b).norm();
  const double limit = p.terminal_factor *
                       (std::sqrt(p.eps_init) + p.sigma * std::sqrt(dt));
  if (sol.terminal_miss > limit) {
    std::ostringstream msg;
    msg << "terminal miss " << sol.terminal_miss << " exceeds " << limit;
    sol.ok = false;
    sol.failure = msg.str();
  } else {
    sol.ok = true;
    sol.failure.clear();
  }
}

BridgeSolution solve_bridge(const BridgeProblem& prob) {
  prob.validate();
  BridgeSolution sol;
  init_solution(prob, sol);
  try {
    forward_filter(prob, sol);
    backward_flow(prob, sol);
    controlled_paths(prob, sol);
  } catch (const std::exception& e) {
    sol.ok = false;
    sol.failure = e.what();
  }
  return sol;
}

std::vector<BridgeSolution> augment_all(const ObservationSet& obs,
                                        const DriftEval& fhat,
                                        const GeodesicSchedule* schedule,
                                        const BridgeParams& params,
                                        std::uint64_t master_seed,
                                        int iteration, int threads,
                                        double max_failure_frac) {
  const long K = obs.observations.rows() - 1;
  if (K < 1) throw std::invalid_argument("augment_all: need at least two observations");
  if (schedule != nullptr && schedule->intervals() != K)
    throw std::invalid_argument("augment_all: schedule does not match observations");

  auto make_problem = [&](long k) {
    BridgeProblem prob;
    prob.fhat = &fhat;
    prob.a = obs.observations.row(k).transpose();
    prob.b = obs.observations.row(k + 1).transpose();
    prob.tau = obs.tau;
    prob.dt = obs.dt;
    prob.gamma = (schedule != nullptr) ? &schedule->geodesic(k) : nullptr;
    prob.params = params;
    prob.seed = derive_seed(master_seed, static_cast<std::uint64_t>(iteration),
                            static_cast<std::uint64_t>(k));
    return prob;
  };

  std::vector<BridgeSolution> out(K);
  const int workers = std::max(1, threads);
  if (workers == 1) {
    for (long k = 0; k < K; ++k) out[k] = solve_bridge(make_problem(k));
  } else {
    // Bounded window of async solves, consumed in interval order so results
    // and memory use are independent of scheduling.
    const long window = std::min<long>(K, workers + 2);
    std::vector<std::future<BridgeSolution>> inflight(K);
    for (long k = 0; k < window; ++k)
      inflight[k] = std::async(std::launch::async, solve_bridge, make_problem(k));
    for (long k = 0; k < K; ++k) {
      out[k] = inflight[k].get();
      const long next = k + window;
      if (next < K)
        inflight[next] =
            std::async(std::launch::async, solve_bridge, make_problem(next));
    }
  }

  long failures = 0;
  for (const auto& sol : out)
    if (!sol.ok) ++failures;
  if (static_cast<double>(failures) >
      max_failure_frac * static_cast<double>(K)) {
    std::ostringstream msg;
    msg << "augment_all: " << failures << " of " << K
        << " bridges failed; first failure: ";
    for (const auto& sol : out)
      if (!sol.ok) {
        msg << sol.failure;
        break;
      }
    throw std::runtime_error(msg.str());
  }
  return out;
}

}  // namespace geodrift
