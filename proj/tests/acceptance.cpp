// Acceptance gate: twelve end-to-end checks, one [PASS]/[FAIL] line each.
// Exit code is the number of failed criteria.
//
// The expensive criteria (1-3, 12) run full pipelines over several seeds and
// cache each run's stage errors as JSON under ./acceptance_cache, so an
// interrupted or repeated invocation only pays for runs it has not done yet.
// Optional argv: a list of criterion numbers to run (default: all).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodrift/bridge.hpp"
#include "geodrift/em.hpp"
#include "geodrift/eval.hpp"
#include "geodrift/geodesic.hpp"
#include "geodrift/gp.hpp"
#include "geodrift/metric.hpp"
#include "geodrift/ot.hpp"
#include "geodrift/rng.hpp"
#include "geodrift/score.hpp"
#include "geodrift/sde.hpp"

using namespace geodrift;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------- tolerances and reference bands, pinned ----------
constexpr double kC1Lo = 0.59, kC1Hi = 0.70;       // naive wRMSE band, stride 80
constexpr double kC2Lo = 0.35, kC2Hi = 0.55;       // augmented band, stride 120
constexpr double kC4ControlRel = 0.25;             // bridge control probes
constexpr double kC5MeanRel = 0.15;                // OU bridge slice means
constexpr double kC6ScoreRms = 0.2;                // score RMS vs -x
constexpr double kC7ChordTol = 1e-8;               // constant-metric geodesic
constexpr double kC7DijkstraRel = 0.05;            // vs grid shortest path
constexpr double kC8GradRel = 1e-5;                // metric gradient vs FD
constexpr double kC9MeanTol = 1e-9;                // ETPF mean preservation
constexpr double kC10FieldRel = 0.05;              // GP recovery of g
constexpr double kC11Closed = 1e-6;                // closed-form diagnostics
constexpr double kC11FdRel = 1e-3;                 // FD vs analytic
constexpr double kC12Spread = 0.15;                // noise-mismatch spread

const std::vector<std::uint64_t> kSeeds5 = {1, 2, 3, 4, 5};
const std::vector<std::uint64_t> kSeeds3 = {1, 2, 3};

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------- cached pipeline runs ----------

struct CellRun {
  bool ok = false;
  std::string error;
  std::vector<double> wrmse_pc;   // per stage (0 = naive), per-component units
  std::vector<long> failures;     // failed bridges per EM iteration
};

fs::path cache_dir() {
  fs::path dir = "acceptance_cache";
  fs::create_directories(dir);
  return dir;
}

std::string cell_key(double sigma_true, long stride, double sigma_aug,
                     int iterations, std::uint64_t seed) {
  std::ostringstream key;
  key << "vdp_sig" << sigma_true << "_str" << stride << "_aug" << sigma_aug
      << "_it" << iterations << "_seed" << seed;
  return key.str();
}

// Simulates, runs the pipeline, and scores every stage model against the
// true drift on a KDE-weighted grid (weights from the dense trajectory, the
// closest available stand-in for the invariant density). Per-component units.
CellRun run_cell(double sigma_true, long stride, double sigma_aug,
                 int iterations, std::uint64_t seed) {
  const fs::path file =
      cache_dir() / (cell_key(sigma_true, stride, sigma_aug, iterations, seed) + ".json");
  if (fs::exists(file)) {
    std::ifstream in(file);
    json j = json::parse(in);
    CellRun r;
    r.ok = j["ok"].get<bool>();
    r.error = j.value("error", "");
    r.wrmse_pc = j["wrmse_pc"].get<std::vector<double>>();
    r.failures = j["failures"].get<std::vector<long>>();
    return r;
  }

  const DriftField truth = make_drift("vdp", {{"mu", 1.0}});
  SimConfig sim;
  sim.dt = 0.01;
  sim.T = 500.0;
  sim.sigma = sigma_true;
  sim.x0 = Vec(2);
  sim.x0 << 1.81, -1.41;
  sim.seed = seed;
  const Trajectory traj = euler_maruyama(truth, sim);
  const ObservationSet obs = subsample(traj, stride);
  const EvalGrid grid = make_eval_grid(obs.observations, {}, 0.05, &traj.states);

  EMConfig em;
  em.iterations = iterations;
  em.bridge.sigma = sigma_aug;
  em.bridge.beta = 0.5;
  em.bridge.particles = 100;
  em.bridge.inducing = 40;
  em.gp_inducing = 300;
  em.seed = derive_seed(seed, 0xE5EEDull);
  em.threads = 1;

  CellRun r;
  auto score_stages = [&](const EMHistory& h) {
    for (const auto& rec : h.records)
      r.wrmse_pc.push_back(wrmse(truth, rec.model, grid) / std::sqrt(2.0));
    for (std::size_t i = 1; i < h.records.size(); ++i)
      r.failures.push_back(h.records[i].bridge_failures);
  };
  try {
    EMResult res = run_em(obs, em, nullptr);
    score_stages(res.history);
    r.ok = true;
  } catch (const EMFailure& e) {
    score_stages(e.history);
    r.ok = false;
    r.error = e.what();
  }

  json j;
  j["ok"] = r.ok;
  if (!r.error.empty()) j["error"] = r.error;
  j["wrmse_pc"] = r.wrmse_pc;
  j["failures"] = r.failures;
  std::ofstream out(file);
  out << j.dump(2) << "\n";
  return r;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ---------- criteria ----------

bool criterion1(std::string& msg) {
  std::vector<double> vals;
  for (auto s : kSeeds5) {
    CellRun r = run_cell(0.25, 80, 0.25, 0, s);
    if (!r.ok || r.wrmse_pc.empty()) {
      msg = "baseline run failed (seed " + std::to_string(s) + "): " + r.error;
      return false;
    }
    vals.push_back(r.wrmse_pc[0]);
  }
  const double m = mean(vals);
  std::ostringstream os;
  os << "naive wRMSE mean " << m << " over 5 seeds, band [" << kC1Lo << ", "
     << kC1Hi << "]";
  msg = os.str();
  return m >= kC1Lo && m <= kC1Hi;
}

bool criterion2(std::string& msg) {
  std::vector<double> naive, final;
  for (auto s : kSeeds5) {
    CellRun r = run_cell(0.25, 120, 0.25, 2, s);
    if (!r.ok || r.wrmse_pc.size() != 3) {
      msg = "pipeline run failed (seed " + std::to_string(s) + "): " + r.error;
      return false;
    }
    naive.push_back(r.wrmse_pc[0]);
    final.push_back(r.wrmse_pc[2]);
  }
  const double mn = mean(naive), mf = mean(final);
  std::ostringstream os;
  os << "augmented wRMSE mean " << mf << " (naive " << mn << "), band ["
     << kC2Lo << ", " << kC2Hi << "]";
  msg = os.str();
  return mf >= kC2Lo && mf <= kC2Hi && mf < mn;
}

bool criterion3(std::string& msg) {
  std::ostringstream os;
  bool pass = true;
  for (double sig : {0.25, 0.5}) {
    for (long stride : {80L, 160L, 240L}) {
      std::vector<double> naive, final;
      for (auto s : kSeeds5) {
        CellRun r = run_cell(sig, stride, sig, 2, s);
        if (!r.ok || r.wrmse_pc.size() != 3) {
          msg = "cell sigma=" + std::to_string(sig) + " stride=" +
                std::to_string(stride) + " seed " + std::to_string(s) +
                " failed: " + r.error;
          return false;
        }
        naive.push_back(r.wrmse_pc[0]);
        final.push_back(r.wrmse_pc[2]);
      }
      const double mn = mean(naive), mf = mean(final);
      if (!(mf < mn)) pass = false;
      os << "[s" << sig << ",t" << stride << ": " << mf << (mf < mn ? "<" : ">=")
         << mn << "] ";
    }
  }
  msg = "iteration-2 vs naive, 5-seed means: " + os.str();
  return pass;
}

bool criterion4(std::string& msg) {
  const DriftField zero = make_drift("zero", {{"dim", 2.0}});
  const FieldEval fhat(zero);
  Vec a = Vec::Zero(2), b(2);
  b << 1.0, 0.5;
  BridgeProblem prob;
  prob.fhat = &fhat;
  prob.a = a;
  prob.b = b;
  prob.tau = 1.0;
  prob.dt = 0.01;
  prob.params.sigma = 0.5;
  prob.params.beta = 0.0;
  prob.seed = 42;
  BridgeSolution sol = solve_bridge(prob);
  if (!sol.ok) {
    msg = "bridge failed: " + sol.failure;
    return false;
  }
  const long L = sol.L;
  long checked = 0;
  double worst = 0.0;
  for (long ti = L / 5; ti <= (4 * L) / 5 && checked < 20; ti += (3 * L) / 100) {
    const double t = ti * prob.dt;
    const Vec x = sol.F[ti].row(checked % sol.F[ti].rows()).transpose();
    const Vec u = sol.control_at(x, ti);
    const Vec u_true = (b - x) / (prob.tau - t);
    worst = std::max(worst, (u - u_true).norm() / std::max(u_true.norm(), 1e-12));
    ++checked;
  }
  const double term_tol =
      3.0 * std::sqrt(prob.params.eps_init) + 3.0 * prob.params.sigma * std::sqrt(prob.dt);
  std::ostringstream os;
  os << "control worst rel err " << worst << " (tol " << kC4ControlRel
     << "), terminal miss " << sol.terminal_miss << " (tol " << term_tol << ")";
  msg = os.str();
  return checked >= 20 && worst < kC4ControlRel && sol.terminal_miss < term_tol;
}

bool criterion5(std::string& msg) {
  const DriftField ou = make_drift("linear", {{"a11", -1.0}, {"a22", -1.0}});
  const FieldEval fhat(ou);
  Vec a(2), b(2);
  a << 1.5, -0.5;
  b << 0.5, 0.5;
  const double sigma = 0.5, tau = 1.0, dt = 0.01;
  BridgeProblem prob;
  prob.fhat = &fhat;
  prob.a = a;
  prob.b = b;
  prob.tau = tau;
  prob.dt = dt;
  prob.params.sigma = sigma;
  prob.params.beta = 0.0;
  prob.params.particles = 400;
  prob.seed = 5;
  BridgeSolution sol = solve_bridge(prob);
  if (!sol.ok) {
    msg = "bridge failed: " + sol.failure;
    return false;
  }
  auto vt = [&](double t) { return sigma * sigma * (1.0 - std::exp(-2.0 * t)) / 2.0; };
  const double scale = (b - a).norm();
  double worst = 0.0;
  const long L = sol.L;
  for (long ti = L / 10; ti <= L; ti += L / 10) {
    const double t = ti * dt;
    const Vec m_true = a * std::exp(-t) +
                       std::exp(-(tau - t)) * vt(t) / vt(tau) * (b - a * std::exp(-tau));
    const Vec m_est = sol.F[ti].colwise().mean().transpose();
    worst = std::max(worst, (m_est - m_true).norm() / std::max(scale, m_true.norm()));
  }
  std::ostringstream os;
  os << "worst slice-mean rel err " << worst << " (tol " << kC5MeanRel << ")";
  msg = os.str();
  return worst < kC5MeanRel;
}

bool criterion6(std::string& msg) {
  Rng rng(2026);
  const long N = 2000;
  Mat X(N, 2);
  for (long i = 0; i < N; ++i)
    for (long c = 0; c < 2; ++c) X(i, c) = rng.gauss();
  const ScoreEstimate se = fit_score(X, 40, 1e-3, 7);
  const Mat S = se.at_batch(X);
  const double rms = std::sqrt((S + X).array().square().rowwise().sum().mean());
  std::ostringstream os;
  os << "score RMS error vs -x: " << rms << " (tol " << kC6ScoreRms << ")";
  msg = os.str();
  return rms < kC6ScoreRms;
}

// 16-neighbour Dijkstra over a regular grid, Riemannian edge lengths from the
// midpoint metric. An independent oracle for the geodesic length.
double dijkstra_length(const MetricField& metric, const Vec& lo, const Vec& hi,
                       long n_side, const Vec& a, const Vec& b) {
  const long n2 = n_side * n_side;
  const double hx = (hi(0) - lo(0)) / double(n_side - 1);
  const double hy = (hi(1) - lo(1)) / double(n_side - 1);
  auto node_xy = [&](long v) {
    Vec p(2);
    p << lo(0) + hx * double(v % n_side), lo(1) + hy * double(v / n_side);
    return p;
  };
  auto nearest = [&](const Vec& p) {
    const long i = std::clamp<long>(std::lround((p(0) - lo(0)) / hx), 0, n_side - 1);
    const long j = std::clamp<long>(std::lround((p(1) - lo(1)) / hy), 0, n_side - 1);
    return j * n_side + i;
  };
  const std::vector<std::pair<long, long>> moves = {
      {1, 0},  {0, 1},  {-1, 0}, {0, -1}, {1, 1},  {1, -1}, {-1, 1}, {-1, -1},
      {1, 2},  {2, 1},  {-1, 2}, {-2, 1}, {1, -2}, {2, -1}, {-1, -2}, {-2, -1}};

  std::vector<double> dist(n2, std::numeric_limits<double>::infinity());
  using QE = std::pair<double, long>;
  std::priority_queue<QE, std::vector<QE>, std::greater<QE>> pq;
  const long src = nearest(a), dst = nearest(b);
  dist[src] = 0.0;
  pq.push({0.0, src});
  while (!pq.empty()) {
    const auto [d, v] = pq.top();
    pq.pop();
    if (d > dist[v]) continue;
    if (v == dst) break;
    const long vi = v % n_side, vj = v / n_side;
    const Vec pv = node_xy(v);
    for (const auto& [di, dj] : moves) {
      const long wi = vi + di, wj = vj + dj;
      if (wi < 0 || wi >= n_side || wj < 0 || wj >= n_side) continue;
      const long w = wj * n_side + wi;
      const Vec pw = node_xy(w);
      const Vec mid = 0.5 * (pv + pw);
      const Vec H = metric.metric_at(mid);
      const Vec dx = pw - pv;
      const double len = std::sqrt(H(0) * dx(0) * dx(0) + H(1) * dx(1) * dx(1));
      if (dist[v] + len < dist[w]) {
        dist[w] = dist[v] + len;
        pq.push({dist[w], w});
      }
    }
  }
  return dist[dst];
}

double riemann_length(const MetricField& metric, const Mat& nodes) {
  double len = 0.0;
  for (long i = 0; i + 1 < nodes.rows(); ++i) {
    const Vec mid = 0.5 * (nodes.row(i) + nodes.row(i + 1)).transpose();
    const Vec H = metric.metric_at(mid);
    const Vec dx = (nodes.row(i + 1) - nodes.row(i)).transpose();
    double q = 0.0;
    for (long c = 0; c < dx.size(); ++c) q += H(c) * dx(c) * dx(c);
    len += std::sqrt(q);
  }
  return len;
}

bool criterion7(std::string& msg) {
  // (a) far from all data the metric saturates to the constant 1/eps, and the
  // geodesic must be the straight chord.
  Mat far(1, 2);
  far << 100.0, 100.0;
  const MetricField const_metric(far, 1.0, 1e-4);
  Vec a(2), b(2);
  a << 0.0, 0.0;
  b << 1.0, 2.0;
  const Geodesic g = geodesic_between(const_metric, a, b, 64);
  double chord_dev = 0.0;
  for (long i = 0; i < g.nodes.rows(); ++i) {
    const double t = double(i) / double(g.nodes.rows() - 1);
    chord_dev = std::max(chord_dev,
                         (g.nodes.row(i).transpose() - (a + t * (b - a))).norm());
  }

  // (b) two-cluster metric: geodesic length within 5% of a dense grid oracle.
  Rng rng(99);
  Mat obs(400, 2);
  for (long i = 0; i < 200; ++i) {
    obs(i, 0) = 0.0 + 0.4 * rng.gauss();
    obs(i, 1) = 0.0 + 0.4 * rng.gauss();
    obs(200 + i, 0) = 3.0 + 0.4 * rng.gauss();
    obs(200 + i, 1) = 0.0 + 0.4 * rng.gauss();
  }
  const MetricField metric = build_metric(obs);
  Vec ca(2), cb(2);
  ca << 0.0, 0.0;
  cb << 3.0, 0.0;
  const Geodesic g2 = geodesic_between(metric, ca, cb, 128);
  const double len_geo = riemann_length(metric, g2.nodes);
  Vec lo(2), hi(2);
  lo << obs.col(0).minCoeff() - 0.5, obs.col(1).minCoeff() - 0.5;
  hi << obs.col(0).maxCoeff() + 0.5, obs.col(1).maxCoeff() + 0.5;
  const double len_dij = dijkstra_length(metric, lo, hi, 200, ca, cb);
  const double rel = std::abs(len_geo - len_dij) / len_dij;

  std::ostringstream os;
  os << "chord deviation " << chord_dev << " (tol " << kC7ChordTol
     << "), length " << len_geo << " vs grid oracle " << len_dij << ", rel "
     << rel << " (tol " << kC7DijkstraRel << ")";
  msg = os.str();
  return chord_dev < kC7ChordTol && rel < kC7DijkstraRel;
}

bool criterion8(std::string& msg) {
  Rng rng(31);
  Mat obs(300, 2);
  for (long i = 0; i < 300; ++i)
    for (long c = 0; c < 2; ++c) obs(i, c) = rng.gauss();
  const double eps = 1e-4;
  const MetricField metric = build_metric(obs, 0.0, eps);

  double worst = 0.0;
  bool bounds_ok = true;
  const double step = 1e-5;
  for (int p = 0; p < 100; ++p) {
    Vec x(2);
    x << 4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0;
    const Mat G = metric.metric_grad_at(x);
    Mat Gfd(2, 2);
    for (long j = 0; j < 2; ++j) {
      Vec xp = x, xm = x;
      xp(j) += step;
      xm(j) -= step;
      Gfd.col(j) = (metric.metric_at(xp) - metric.metric_at(xm)) / (2.0 * step);
    }
    worst = std::max(worst, (G - Gfd).norm() / std::max(Gfd.norm(), 1e-12));
    const Vec H = metric.metric_at(x);
    if (!(H.minCoeff() > 0.0) || H.maxCoeff() > 1.0 / eps + 1e-9) bounds_ok = false;
  }
  Vec far(2);
  far << 50.0, 50.0;
  const Vec Hfar = metric.metric_at(far);
  if (!(Hfar.minCoeff() > 0.0) || Hfar.maxCoeff() > 1.0 / eps + 1e-9)
    bounds_ok = false;

  std::ostringstream os;
  os << "gradient worst rel err " << worst << " (tol " << kC8GradRel
     << "), bounds " << (bounds_ok ? "hold" : "VIOLATED");
  msg = os.str();
  return worst < kC8GradRel && bounds_ok;
}

bool criterion9(std::string& msg) {
  Rng rng(77);
  Mat X(100, 2);
  Vec w(100);
  for (long i = 0; i < 100; ++i) {
    X(i, 0) = rng.gauss();
    X(i, 1) = rng.gauss();
    w(i) = rng.uniform() + 0.05;
  }
  const Vec wn = w / w.sum();
  const Mat Y = etpf_transform(X, w);
  const Vec target_mean = X.transpose() * wn;
  const double mean_err = (Y.colwise().mean().transpose() - target_mean).norm();

  const Mat Yu = etpf_transform(X, Vec::Ones(100));
  const bool identity_ok = (Yu == X);

  // Two points on a line, masses 3/4 and 1/4 onto 1/2-1/2: the optimum keeps
  // 1/2 in place and ships 1/4 from the heavy point, so the transformed
  // ensemble is {0, 1/2}.
  Mat X2(2, 1);
  X2 << 0.0, 1.0;
  Vec w2(2);
  w2 << 0.75, 0.25;
  const Mat Y2 = etpf_transform(X2, w2);
  const bool two_point_ok =
      std::abs(Y2(0, 0) - 0.0) < 1e-12 && std::abs(Y2(1, 0) - 0.5) < 1e-12;

  std::ostringstream os;
  os << "mean error " << mean_err << " (tol " << kC9MeanTol << "), identity "
     << (identity_ok ? "ok" : "BROKEN") << ", two-point "
     << (two_point_ok ? "ok" : "BROKEN");
  msg = os.str();
  return mean_err < kC9MeanTol && identity_ok && two_point_ok;
}

// Fabricates bridge ensembles with a prescribed effective drift g and checks
// that the sparse posterior recovers it.
bool gp_recovers(const std::function<Vec(const Vec&)>& g_of_x, double scale,
                 double& worst_rel) {
  // Augmented time comparable to one benchmark EM iteration (~500 time
  // units); the posterior shrinkage decays like 1/T, so short fabricated
  // records would test the prior, not the integrals.
  const long L = 50, N = 20, n_bridges = 1000;
  std::vector<BridgeSolution> bridges(n_bridges);
  for (long b = 0; b < n_bridges; ++b) {
    Rng rng(13 + static_cast<uint64_t>(b));
    BridgeSolution& sol = bridges[b];
    sol.dim = 2;
    sol.L = L;
    sol.dt = 0.01;
    sol.params.particles = static_cast<int>(N);
    sol.ok = true;
    sol.F.resize(L + 1);
    sol.g.resize(L + 1);
    for (long ti = 0; ti <= L; ++ti) {
      Mat F(N, 2);
      for (long i = 0; i < N; ++i)
        for (long c = 0; c < 2; ++c) F(i, c) = 2.0 * rng.uniform() - 1.0;
      sol.F[ti] = F;
      Mat G(N, 2);
      for (long i = 0; i < N; ++i)
        G.row(i) = g_of_x(F.row(i).transpose()).transpose();
      sol.g[ti] = G;
    }
  }
  Mat box(2, 2);
  box << -1.0, -1.0, 1.0, 1.0;
  const Mat ZS = default_inducing_grid(box, 100, 0.05);
  KernelConfig kc;
  kc.lengthscales = Vec::Constant(2, 0.8);
  kc.variance = 1.0;
  const BridgeIntegrals ints = accumulate_bridge_integrals(bridges, ZS, kc);
  const GPDriftModel model = sparse_posterior_drift(ints, 0.25);

  // Lambda must stay positive semidefinite.
  Eigen::SelfAdjointEigenSolver<Mat> es(model.Lambda);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()))
    return false;

  worst_rel = 0.0;
  for (double x = -0.6; x <= 0.61; x += 0.3) {
    for (double y = -0.6; y <= 0.61; y += 0.3) {
      Vec p(2);
      p << x, y;
      const Vec got = model.eval(p);
      const Vec want = g_of_x(p);
      worst_rel = std::max(worst_rel, (got - want).norm() / scale);
    }
  }
  return true;
}

bool criterion10(std::string& msg) {
  Vec c(2);
  c << 0.7, -0.3;
  double rel_const = 0.0, rel_lin = 0.0;
  const bool psd1 = gp_recovers([&](const Vec&) { return c; }, c.norm(), rel_const);
  Mat A(2, 2);
  A << -1.0, 0.3, -0.2, -0.8;
  const bool psd2 = gp_recovers([&](const Vec& x) { return Vec(A * x); },
                                A.norm() * 0.6, rel_lin);
  std::ostringstream os;
  os << "constant-g rel err " << rel_const << ", linear-g rel err " << rel_lin
     << " (tol " << kC10FieldRel << "), Lambda PSD "
     << ((psd1 && psd2) ? "ok" : "VIOLATED");
  msg = os.str();
  return psd1 && psd2 && rel_const < kC10FieldRel && rel_lin < kC10FieldRel;
}

bool criterion11(std::string& msg) {
  // (a) linear field: closed form (tau/2) A^3 x, exactly (Hessians vanish).
  Mat A(2, 2);
  A << -1.0, 0.5, 0.2, -0.7;
  const DriftField lin = make_drift(
      "linear", {{"a11", A(0, 0)}, {"a12", A(0, 1)}, {"a21", A(1, 0)}, {"a22", A(1, 1)}});
  Vec x(2);
  x << 0.8, -0.4;
  const double tau = 0.9;
  const Vec bias = em_bias_estimate(lin, 0.3, tau, x);
  const Vec bias_closed = 0.5 * tau * (A * A * A) * x;
  const double err_lin = (bias - bias_closed).norm();

  // (b) constant field: zero curvature. (c) rotation field: hand value.
  DriftField constf;
  constf.dim = 2;
  constf.f = [](const Vec&) { Vec v(2); v << 0.5, 0.2; return v; };
  constf.jac = [](const Vec&) { return Mat::Zero(2, 2); };
  const double err_const = flow_curvature(constf, x).norm();

  DriftField rot;
  rot.dim = 2;
  rot.f = [](const Vec& p) { Vec v(2); v << -p(1), p(0); return v; };
  rot.jac = [](const Vec&) { Mat J(2, 2); J << 0, -1, 1, 0; return J; };
  Vec e1(2);
  e1 << 1.0, 0.0;
  Vec want(2);
  want << -1.0, 0.0;
  const double err_rot = (flow_curvature(rot, e1) - want).norm();

  // (d) analytic vs finite-difference derivatives on the benchmark field.
  const DriftField vdp = make_drift("vdp", {{"mu", 1.0}});
  DriftField vdp_fd = vdp;
  vdp_fd.jac = nullptr;
  vdp_fd.hess = nullptr;
  Vec z(2);
  z << 1.81, -1.41;
  const Vec k_an = flow_curvature(vdp, z);
  const Vec k_fd = flow_curvature(vdp_fd, z);
  const Vec b_an = em_bias_estimate(vdp, 0.25, 0.8, z, true);
  const Vec b_fd = em_bias_estimate(vdp_fd, 0.25, 0.8, z, false);
  const double rel_k = (k_an - k_fd).norm() / k_an.norm();
  const double rel_b = (b_an - b_fd).norm() / b_an.norm();

  std::ostringstream os;
  os << "closed forms: linear " << err_lin << ", const " << err_const
     << ", rotation " << err_rot << " (tol " << kC11Closed << "); FD rel: kappa "
     << rel_k << ", bias " << rel_b << " (tol " << kC11FdRel << ")";
  msg = os.str();
  return err_lin < kC11Closed && err_const < kC11Closed &&
         err_rot < kC11Closed && rel_k < kC11FdRel && rel_b < kC11FdRel;
}

bool criterion12(std::string& msg) {
  std::vector<double> means;
  for (double aug : {0.15, 0.25, 0.35}) {
    std::vector<double> vals;
    for (auto s : kSeeds3) {
      CellRun r = run_cell(0.25, 160, aug, 2, s);
      if (!r.ok || r.wrmse_pc.size() != 3) {
        msg = "aug=" + std::to_string(aug) + " seed " + std::to_string(s) +
              " failed: " + r.error;
        return false;
      }
      vals.push_back(r.wrmse_pc[2]);
    }
    means.push_back(mean(vals));
  }
  const double spread =
      *std::max_element(means.begin(), means.end()) -
      *std::min_element(means.begin(), means.end());
  std::ostringstream os;
  os << "iteration-2 wRMSE at aug {0.15, 0.25, 0.35}: " << means[0] << ", "
     << means[1] << ", " << means[2] << "; spread " << spread << " (tol "
     << kC12Spread << ")";
  msg = os.str();
  return spread < kC12Spread;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  const std::vector<std::pair<int, bool (*)(std::string&)>> criteria = {
      {1, criterion1}, {2, criterion2},  {3, criterion3},  {4, criterion4},
      {5, criterion5}, {6, criterion6},  {7, criterion7},  {8, criterion8},
      {9, criterion9}, {10, criterion10}, {11, criterion11}, {12, criterion12}};

  int failed = 0;
  for (const auto& [num, fn] : criteria) {
    if (!wanted.empty() && wanted.count(num) == 0) continue;
    const double t0 = now_s();
    std::string msg;
    bool ok = false;
    try {
      ok = fn(msg);
    } catch (const std::exception& e) {
      msg = std::string("exception: ") + e.what();
    }
    if (!ok) ++failed;
    std::printf("criterion %2d [%s] %s  (%.1f s)\n", num, ok ? "PASS" : "FAIL",
                msg.c_str(), now_s() - t0);
    std::fflush(stdout);
  }
  return failed;
}
