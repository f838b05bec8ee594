#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodrift/em.hpp"
#include "geodrift/sde.hpp"

namespace geodrift {

/// Thrown on any schema violation; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Benchmark system plus simulation settings.
struct SystemSpec {
  std::string name;
  std::map<std::string, double> params;
  double sigma = 0.25;
  double dt = 0.01;
  double T = 500.0;
  Vec x0;
  std::uint64_t seed = 0;
};

/// Fully resolved run configuration (JSON schema_version 1).  Unknown keys
/// anywhere are rejected.
struct RunConfig {
  SystemSpec system;
  long stride = 1;                       ///< observation stride tau/dt
  EMConfig em;                           ///< bridge sigma = augmentation sigma
  bool sigma_aug_explicit = false;       ///< augmentation sigma given in config
  std::vector<long> grid_shape;          ///< empty = 50 per dimension
  double grid_inflate = 0.05;
  std::vector<std::uint64_t> seeds;      ///< replication list for fullrun
  std::string output;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;        ///< resolved, reproducible round trip
  void validate() const;

  DriftField make_field() const;         ///< ground-truth drift
  SimConfig make_sim() const;
  double tau() const { return stride * system.dt; }
};

}  // namespace geodrift
