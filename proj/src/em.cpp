#include "geodrift/em.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <utility>

#include "geodrift/eval.hpp"
#include "geodrift/metric.hpp"
#include "geodrift/rng.hpp"

namespace geodrift {

using nlohmann::json;

void EMConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("em: iterations must be >= 0");
  bridge.validate();
  if (metric_sigma < 0.0) throw std::invalid_argument("em: metric_sigma must be >= 0");
  if (metric_epsilon <= 0.0) throw std::invalid_argument("em: metric_epsilon must be > 0");
  if (gp_inducing < 4) throw std::invalid_argument("em: need >= 4 GP inducing points");
  if (gp_ridge <= 0.0) throw std::invalid_argument("em: gp_ridge must be > 0");
  if (lengthscale_factor <= 0.0 || variance_factor <= 0.0)
    throw std::invalid_argument("em: kernel factors must be > 0");
  if (threads < 1) throw std::invalid_argument("em: threads must be >= 1");
}

json EMHistory::to_json() const {
  json j;
  j["kernel"] = kernel.to_json();
  j["metric_sigma_used"] = metric_sigma_used;
  j["geodesics_built"] = geodesics_built;
  j["sigma_augmentation"] = sigma_augmentation;
  json recs = json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    json rj;
    rj["iteration"] = i;
    rj["kind"] = r.model.kind;
    rj["bridge_count"] = r.bridge_count;
    rj["bridge_failures"] = r.bridge_failures;
    if (std::isfinite(r.wrmse)) {
      rj["wrmse"] = r.wrmse;
      rj["wrmse_per_component"] =
          r.wrmse / std::sqrt(static_cast<double>(r.model.dim()));
    }
    rj["wall_seconds"] = r.wall_seconds;
    if (i > 0) {
      rj["path_likelihood_literal"] = r.path_lik.literal;
      rj["path_likelihood_consistent"] = r.path_lik.consistent;
    }
    recs.push_back(std::move(rj));
  }
  j["records"] = std::move(recs);
  return j;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::vector<Geodesic> build_geodesics(const MetricField& metric,
                                      const ObservationSet& obs, long n_nodes,
                                      const GeodesicOptions& opts,
                                      int threads) {
  const long K = obs.observations.rows() - 1;
  std::vector<Geodesic> geos(K);
  auto solve = [&](long k) {
    return geodesic_between(metric, obs.observations.row(k).transpose(),
                            obs.observations.row(k + 1).transpose(), n_nodes,
                            opts);
  };
  if (threads <= 1) {
    for (long k = 0; k < K; ++k) geos[k] = solve(k);
    return geos;
  }
  const long window = std::min<long>(K, threads + 2);
  std::vector<std::future<Geodesic>> inflight(K);
  for (long k = 0; k < window; ++k)
    inflight[k] = std::async(std::launch::async, solve, k);
  for (long k = 0; k < K; ++k) {
    geos[k] = inflight[k].get();
    if (k + window < K)
      inflight[k + window] = std::async(std::launch::async, solve, k + window);
  }
  return geos;
}

}  // namespace

EMResult run_em(const ObservationSet& obs, const EMConfig& cfg,
                const DriftField* truth) {
  cfg.validate();
  const long K = obs.observations.rows();
  if (K < 2) throw std::invalid_argument("run_em: need >= 2 observations");

  EMHistory history;
  history.sigma_augmentation = cfg.bridge.sigma;

  // Kernel policy frozen once, from the raw observations.
  {
    const long n = K - 1;
    Mat X = obs.observations.topRows(n);
    Mat Y = (obs.observations.bottomRows(n) - X) / obs.tau;
    history.kernel = KernelConfig::from_data(X, Y, cfg.lengthscale_factor,
                                             cfg.variance_factor);
  }

  EvalGrid grid;
  if (truth != nullptr) grid = make_eval_grid(obs.observations);

  auto record_stage = [&](GPDriftModel model, long count, long failures,
                          double wall, PathDiagnostic diag) {
    EMIterationRecord rec;
    rec.bridge_count = count;
    rec.bridge_failures = failures;
    rec.wall_seconds = wall;
    rec.path_lik = diag;
    if (truth != nullptr) rec.wrmse = wrmse(*truth, model, grid);
    rec.model = std::move(model);
    history.records.push_back(std::move(rec));
  };

  // Stage 0: naive increment regression.
  auto t0 = std::chrono::steady_clock::now();
  GPDriftModel current =
      naive_gp_drift(obs, history.kernel, cfg.bridge.sigma);
  record_stage(current, 0, 0, seconds_since(t0), {});

  if (cfg.iterations == 0)  // baseline mode: naive regression only
    return EMResult{std::move(current), std::move(history)};

  // One-time geometry: metric from observations, geodesics per interval.
  t0 = std::chrono::steady_clock::now();
  history.metric_sigma_used = cfg.metric_sigma > 0.0
                                  ? cfg.metric_sigma
                                  : knn_bandwidth(obs.observations);
  MetricField metric =
      build_metric(obs.observations, history.metric_sigma_used, cfg.metric_epsilon);
  std::vector<Geodesic> geos =
      build_geodesics(metric, obs, obs.stride, cfg.geodesic, cfg.threads);
  GeodesicSchedule schedule = build_schedule(std::move(geos), obs.tau);
  history.geodesics_built += 1;

  Mat ZS = default_inducing_grid(obs.observations, cfg.gp_inducing);

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    t0 = std::chrono::steady_clock::now();
    std::vector<BridgeSolution> bridges;
    try {
      bridges = augment_all(obs, current, &schedule, cfg.bridge, cfg.seed,
                            iter, cfg.threads);
    } catch (const std::exception& e) {
      throw EMFailure(std::string("em iteration ") + std::to_string(iter) +
                          ": " + e.what(),
                      std::move(history));
    }
    long failures = 0;
    for (const auto& b : bridges)
      if (!b.ok) ++failures;

    BridgeIntegrals ints =
        accumulate_bridge_integrals(bridges, ZS, history.kernel);
    GPDriftModel next;
    try {
      next = sparse_posterior_drift(ints, cfg.bridge.sigma, cfg.gp_ridge);
    } catch (const std::exception& e) {
      throw EMFailure(std::string("em iteration ") + std::to_string(iter) +
                          ": " + e.what(),
                      std::move(history));
    }
    PathDiagnostic diag = path_likelihood(next, bridges);
    record_stage(next, static_cast<long>(bridges.size()), failures,
                 seconds_since(t0), diag);
    current = std::move(next);
  }

  return EMResult{std::move(current), std::move(history)};
}

}  // namespace geodrift
