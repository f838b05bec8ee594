#include "geodrift/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace geodrift {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_states_csv(const std::vector<double>& times, const Mat& states,
                      const std::string& path) {
  if (static_cast<long>(times.size()) != states.rows())
    throw std::invalid_argument("write_states_csv: times/states length mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("write_states_csv: cannot open " + path);
  const int d = static_cast<int>(states.cols());
  out << "t";
  for (int j = 1; j <= d; ++j) out << ",x" << j;
  out << "\n";
  for (long i = 0; i < states.rows(); ++i) {
    out << format_double(times[i]);
    for (int j = 0; j < d; ++j) out << "," << format_double(states(i, j));
    out << "\n";
  }
  if (!out) throw IoError("write_states_csv: write failed for " + path);
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  write_states_csv(traj.times, traj.states, path);
}

void write_observations_csv(const ObservationSet& obs, const std::string& path) {
  std::vector<double> times(obs.count());
  for (long k = 0; k < obs.count(); ++k) times[k] = static_cast<double>(k) * obs.tau;
  write_states_csv(times, obs.observations, path);
}

void read_states_csv(const std::string& path, std::vector<double>& times, Mat& states) {
  std::ifstream in(path);
  if (!in) throw IoError("read_states_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw IoError("read_states_csv: empty file " + path);
  int d = -1;  // columns after t
  {
    std::stringstream hdr(line);
    std::string cell;
    while (std::getline(hdr, cell, ',')) ++d;
  }
  if (d < 1) throw IoError("read_states_csv: no state columns in " + path);

  times.clear();
  std::vector<double> flat;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    int col = 0;
    while (std::getline(row, cell, ',')) {
      const double v = std::strtod(cell.c_str(), nullptr);
      if (col == 0)
        times.push_back(v);
      else
        flat.push_back(v);
      ++col;
    }
    if (col != d + 1)
      throw IoError("read_states_csv: ragged row in " + path);
  }
  const long n = static_cast<long>(times.size());
  states.resize(n, d);
  for (long i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) states(i, j) = flat[i * d + j];
}

}  // namespace geodrift
