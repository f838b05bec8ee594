#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geodrift/geodesic.hpp"
#include "geodrift/score.hpp"
#include "geodrift/sde.hpp"

namespace geodrift {

/// Tunables of the particle-bridge construction for one observation interval.
struct BridgeParams {
  double sigma = 0.25;      ///< augmentation noise amplitude (diffusion sqrt-coefficient)
  double beta = 0.5;        ///< weight of the geodesic tether in the reweighting potential
  double eps_init = 1e-3;   ///< variance of the Gaussian endpoint pinning
  int particles = 100;      ///< ensemble size N
  int inducing = 40;        ///< inducing points per score fit
  double lambda = 1e-3;     ///< ridge weight passed to fit_score
  double terminal_factor = 5.0;  ///< terminal miss threshold, in units of sqrt(eps)+sigma*sqrt(dt)

  void validate() const;
};

/// One observation interval [t_k, t_{k+1}] to be bridged.
///
/// `gamma` is the geodesic tether for the interval (maps t' in [0,1] to state
/// space); it may be null when beta == 0, in which case no reweighting happens
/// and the forward pass is a plain unconditioned particle flow.
struct BridgeProblem {
  const DriftEval* fhat = nullptr;
  Vec a;                    ///< left endpoint O_k
  Vec b;                    ///< right endpoint O_{k+1}
  double tau = 0.0;         ///< interval length t_{k+1} - t_k
  double dt = 0.0;          ///< integrator step; tau/dt must be a whole number
  const Geodesic* gamma = nullptr;
  BridgeParams params;
  std::uint64_t seed = 0;

  long steps() const;       ///< L = round(tau/dt)
  void validate() const;
  /// Tether point at slice ti (gamma evaluated at ti/L, or the chord when null).
  Vec tether(long ti) const;
};

/// Everything produced while bridging one interval.  Slice arrays run over
/// ti = 0..L; score-fit slots that are never populated stay empty (the forward
/// density at slice 0 and nothing else -- its score is analytic).
struct BridgeSolution {
  int dim = 0;
  long L = 0;
  double dt = 0.0;
  Vec a, b;
  BridgeParams params;

  std::vector<Mat> Z;               ///< forward ensemble per slice, N x d
  std::vector<Mat> B;               ///< backward ensemble per slice, N x d
  std::vector<Mat> F;               ///< controlled ensemble per slice, N x d
  std::vector<ScoreEstimate> rho;   ///< forward score fits; valid for ti = 1..L
  std::vector<ScoreEstimate> q;     ///< backward score fits; valid for ti = 0..L
  std::vector<Mat> g;               ///< effective drift at F slices; valid for ti = 1..L

  bool ok = false;
  std::string failure;              ///< empty when ok
  double terminal_miss = 0.0;       ///< || mean(F_L) - b ||

  /// Analytic score of the pinned initial density, -(x - a)/eps.
  Mat initial_score(const Mat& X) const;
  /// Control field u(x, ti) = sigma^2 (s_q(x, ti) - s_rho(x, ti)), rows of X.
  Mat control(const Mat& X, long ti) const;
  Vec control_at(const Vec& x, long ti) const;
};

/// Forward pass: unconditioned-but-tethered particle flow with ETPF
/// reweighting.  Fills Z and rho.
void forward_filter(const BridgeProblem& prob, BridgeSolution& sol);

/// Backward pass: time-reversed flow from the right pinning, consuming the
/// stored forward scores.  Fills B and q; requires forward_filter output.
void backward_flow(const BridgeProblem& prob, BridgeSolution& sol);

/// Controlled pass: integrates dF = (fhat + u) dt from the left pinning and
/// records the effective drift g at slices 1..L.  Requires both passes above.
/// Sets ok/failure/terminal_miss.
void controlled_paths(const BridgeProblem& prob, BridgeSolution& sol);

/// Runs all three passes.
BridgeSolution solve_bridge(const BridgeProblem& prob);

/// Bridges every consecutive observation pair.  `schedule` may be null when
/// params.beta == 0.  Per-interval seeds are derived from `master_seed` and
/// `iteration` so reruns are bit-reproducible and intervals are independent.
/// Throws if more than `max_failure_frac` of the intervals fail.
std::vector<BridgeSolution> augment_all(const ObservationSet& obs,
                                        const DriftEval& fhat,
                                        const GeodesicSchedule* schedule,
                                        const BridgeParams& params,
                                        std::uint64_t master_seed,
                                        int iteration = 0,
                                        int threads = 1,
                                        double max_failure_frac = 0.1);

}  // namespace geodrift
