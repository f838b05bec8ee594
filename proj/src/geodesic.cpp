#include "geodrift/geodesic.hpp"

#include <cmath>
#include <fstream>

#include "geodrift/io.hpp"

namespace geodrift {

Vec Geodesic::at(double tprime) const {
  const int n = segments();
  double s = tprime * n;
  if (s <= 0.0) return nodes.row(0).transpose();
  if (s >= n) return nodes.row(n).transpose();
  const int i = static_cast<int>(s);
  const double frac = s - i;
  return (1.0 - frac) * nodes.row(i).transpose() + frac * nodes.row(i + 1).transpose();
}

namespace {

// Midpoints and increments of the chain; H (and grads) evaluated at midpoints.
struct ChainEval {
  Mat mids;   // n x d
  Mat deltas; // n x d
  Mat H;      // n x d
  Mat grads;  // n*d x d, filled only when wanted

  void geometry(const Mat& nodes) {
    const long n = nodes.rows() - 1;
    mids = 0.5 * (nodes.topRows(n) + nodes.bottomRows(n));
    deltas = nodes.bottomRows(n) - nodes.topRows(n);
  }

  double energy(const MetricField& metric, const Mat& nodes, bool with_grads) {
    geometry(nodes);
    metric.metric_batch(mids, H, with_grads ? &grads : nullptr);
    const long n = nodes.rows() - 1;
    return 0.5 * n * (H.array() * deltas.array().square()).sum();
  }
};

// Gradient of the discrete energy with respect to interior nodes
// (rows 1..n-1 of the output; endpoint rows stay zero).
Mat energy_gradient(const ChainEval& ev, long n, int d) {
  Mat g = Mat::Zero(n + 1, d);
  // q_i(l) = sum_d gradH_i(d, l) deltas_i(d)^2
  Mat q(n, d);
  for (long i = 0; i < n; ++i)
    q.row(i) = ev.deltas.row(i).array().square().matrix() * ev.grads.middleRows(i * d, d);
  const Mat hd = ev.H.array() * ev.deltas.array();  // n x d
  for (long j = 1; j < n; ++j)
    g.row(j) = 0.25 * n * (q.row(j - 1) + q.row(j)) + n * (hd.row(j - 1) - hd.row(j));
  return g;
}

struct DescentResult {
  double energy;
  bool converged;
  int iterations;
};

// Gradient descent with backtracking (Armijo) on the interior nodes.
DescentResult descend(const MetricField& metric, Mat& nodes, double tol,
                      int max_iters) {
  const long n = nodes.rows() - 1;
  const int d = static_cast<int>(nodes.cols());
  ChainEval ev;
  double E = ev.energy(metric, nodes, true);
  double step = 1.0 / (n * n);  // matches the n^2 scale of the energy Hessian
  Mat trial(nodes.rows(), d);
  ChainEval trial_ev;

  int it = 0;
  for (; it < max_iters; ++it) {
    const Mat g = energy_gradient(ev, n, d);
    const double gnorm2 = g.squaredNorm();
    if (gnorm2 == 0.0) return {E, true, it};

    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      trial = nodes - step * g;
      const double E_trial = trial_ev.energy(metric, trial, false);
      if (E_trial <= E - 1e-4 * step * gnorm2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) return {E, false, it};

    const double max_move = step * g.array().abs().maxCoeff();
    nodes.swap(trial);
    E = ev.energy(metric, nodes, true);
    if (max_move < tol) return {E, true, it + 1};
    step *= 1.5;
  }
  return {E, false, it};
}

Mat straight_chord(const Vec& a, const Vec& b, int n) {
  Mat nodes(n + 1, a.size());
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    nodes.row(i) = ((1.0 - t) * a + t * b).transpose();
  }
  return nodes;
}

// Resamples a polyline with m segments onto n segments, uniformly in t'.
Mat refine_chain(const Mat& coarse, int n) {
  const int m = static_cast<int>(coarse.rows()) - 1;
  Mat fine(n + 1, coarse.cols());
  for (int i = 0; i <= n; ++i) {
    const double s = static_cast<double>(i) * m / n;
    const int j = std::min<int>(static_cast<int>(s), m - 1);
    const double frac = s - j;
    fine.row(i) = (1.0 - frac) * coarse.row(j) + frac * coarse.row(j + 1);
  }
  fine.row(0) = coarse.row(0);
  fine.row(n) = coarse.row(m);
  return fine;
}

}  // namespace

double discrete_energy(const MetricField& metric, const Mat& nodes) {
  ChainEval ev;
  return ev.energy(metric, nodes, false);
}

Geodesic geodesic_between(const MetricField& metric, const Vec& a, const Vec& b,
                          int n, const GeodesicOptions& opts) {
  if (n < 2) throw std::invalid_argument("geodesic_between: n must be >= 2");
  if (!a.allFinite() || !b.allFinite())
    throw std::invalid_argument("geodesic_between: non-finite endpoint");
  if (a.size() != metric.dim() || b.size() != metric.dim())
    throw std::invalid_argument("geodesic_between: endpoint dimension mismatch");

  Geodesic geo;
  geo.ts = Vec::LinSpaced(n + 1, 0.0, 1.0);

  if ((a - b).norm() == 0.0) {
    geo.nodes = Mat::Zero(n + 1, a.size());
    geo.nodes.rowwise() = a.transpose();
    geo.energy = 0.0;
    geo.chord_energy = 0.0;
    geo.converged = true;
    return geo;
  }

  geo.chord_energy = discrete_energy(metric, straight_chord(a, b, n));

  // Levels n, n/2, n/4, ... down to >= 8 segments; solve coarse to fine.
  std::vector<int> levels{n};
  if (opts.multilevel) {
    while (levels.back() % 2 == 0 && levels.back() / 2 >= 8)
      levels.push_back(levels.back() / 2);
  }

  int budget = opts.max_iters;
  Mat nodes = straight_chord(a, b, levels.back());
  DescentResult res{0.0, true, 0};
  int total_iters = 0;
  for (auto lvl = levels.rbegin(); lvl != levels.rend(); ++lvl) {
    if (static_cast<int>(nodes.rows()) - 1 != *lvl) nodes = refine_chain(nodes, *lvl);
    res = descend(metric, nodes, opts.tol, budget);
    total_iters += res.iterations;
    budget = std::max(0, opts.max_iters - total_iters);
  }

  if (!res.converged) {
    auto chord = straight_chord(a, b, n);
    if (discrete_energy(metric, chord) < res.energy) {
      nodes = chord;
      res.energy = discrete_energy(metric, chord);
    }
  }

  geo.nodes = std::move(nodes);
  geo.nodes.row(0) = a.transpose();
  geo.nodes.row(n) = b.transpose();
  geo.energy = res.energy;
  geo.converged = res.converged;
  geo.iterations = total_iters;
  if (!geo.nodes.allFinite())
    throw std::runtime_error("geodesic_between: NaN in optimized chain");
  return geo;
}

GeodesicSchedule::GeodesicSchedule(std::vector<Geodesic> geodesics, double tau,
                                   double t0)
    : geodesics_(std::move(geodesics)), tau_(tau), t0_(t0) {
  if (geodesics_.empty())
    throw std::invalid_argument("GeodesicSchedule: no geodesics");
  if (!(tau_ > 0.0)) throw std::invalid_argument("GeodesicSchedule: tau must be positive");
}

Vec GeodesicSchedule::at(double t) const {
  double s = (t - t0_) / tau_;
  int k = static_cast<int>(std::floor(s));
  k = std::max(0, std::min(k, intervals() - 1));
  return geodesics_[k].at(s - k);
}

Vec GeodesicSchedule::at(int interval, double tprime) const {
  return geodesics_.at(interval).at(tprime);
}

GeodesicSchedule build_schedule(std::vector<Geodesic> geodesics, double tau,
                                double t0) {
  return GeodesicSchedule(std::move(geodesics), tau, t0);
}

void dump_geodesics_csv(const GeodesicSchedule& schedule, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_geodesics_csv: cannot open " + path);
  const int d = static_cast<int>(schedule.geodesic(0).nodes.cols());
  out << "interval,k,tprime";
  for (int j = 1; j <= d; ++j) out << ",x" << j;
  out << "\n";
  for (int i = 0; i < schedule.intervals(); ++i) {
    const Geodesic& g = schedule.geodesic(i);
    for (long k = 0; k < g.nodes.rows(); ++k) {
      out << i << "," << k << "," << format_double(g.ts(k));
      for (int j = 0; j < d; ++j) out << "," << format_double(g.nodes(k, j));
      out << "\n";
    }
  }
}

}  // namespace geodrift
