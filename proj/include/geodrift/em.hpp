#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodrift/bridge.hpp"
#include "geodrift/geodesic.hpp"
#include "geodrift/gp.hpp"

namespace geodrift {

/// Full pipeline configuration: naive initialization, one-time metric and
/// geodesic construction, then alternating augmentation / GP refit.
struct EMConfig {
  int iterations = 2;
  BridgeParams bridge;            ///< incl. the augmentation sigma
  double metric_sigma = 0.0;      ///< 0 means the kNN median rule
  double metric_epsilon = 1e-4;
  GeodesicOptions geodesic;
  int gp_inducing = 300;
  double gp_ridge = 1e-3;
  double lengthscale_factor = 1.0;
  double variance_factor = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct EMIterationRecord {
  GPDriftModel model;
  long bridge_count = 0;
  long bridge_failures = 0;
  double wrmse = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  PathDiagnostic path_lik;        ///< zeros for the naive record
};

/// One record per stage: index 0 is the naive baseline, j >= 1 the EM
/// iterations.
struct EMHistory {
  std::vector<EMIterationRecord> records;
  KernelConfig kernel;            ///< frozen after initialization
  double metric_sigma_used = 0.0;
  int geodesics_built = 0;        ///< construction counter (must end at 1)
  double sigma_augmentation = 0.0;

  nlohmann::json to_json() const;  ///< summary without the model bodies
};

struct EMResult {
  GPDriftModel model;
  EMHistory history;
};

/// Thrown when the pipeline aborts mid-run (e.g. too many failed bridges);
/// carries everything completed so far so callers can persist it.
class EMFailure : public std::runtime_error {
 public:
  EMFailure(const std::string& what, EMHistory partial)
      : std::runtime_error(what), history(std::move(partial)) {}
  EMHistory history;
};

/// Runs the full pipeline.  When `truth` is given, per-stage wRMSE against it
/// is recorded in the history.
EMResult run_em(const ObservationSet& obs, const EMConfig& cfg,
                const DriftField* truth = nullptr);

}  // namespace geodrift
