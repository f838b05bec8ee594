#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "geodrift/sde.hpp"

namespace geodrift {

/// Filesystem-level failure (unreadable/unwritable paths, malformed files).
/// Distinct from numerical errors so callers can map it to its own exit code.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Decimal rendering with 17 significant digits; round-trips any double
/// exactly through strtod.
std::string format_double(double v);

/// Writes `t,x1,...,xd` rows, one per state.
void write_states_csv(const std::vector<double>& times, const Mat& states,
                      const std::string& path);

void write_trajectory_csv(const Trajectory& traj, const std::string& path);
void write_observations_csv(const ObservationSet& obs, const std::string& path);

/// Reads a `t,x1,...,xd` file back into times and states.
void read_states_csv(const std::string& path, std::vector<double>& times, Mat& states);

}  // namespace geodrift
