// Command-line driver: config-driven simulate / infer / eval / diagnose /
// fullrun with self-describing, write-once run directories.
//
// Exit codes: 0 ok, 2 config/validation, 3 numerical failure, 4 IO.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "geodrift/config.hpp"
#include "geodrift/em.hpp"
#include "geodrift/eval.hpp"
#include "geodrift/gp.hpp"
#include "geodrift/io.hpp"
#include "geodrift/rng.hpp"
#include "geodrift/sde.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace geodrift;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool force = false;
  int threads = 1;
};

RunConfig load_config(const CommonOpts& o) {
  RunConfig cfg = RunConfig::load(o.config_path);
  if (o.seed_set) {
    cfg.system.seed = o.seed;
    cfg.em.seed = derive_seed(o.seed, 0xE5EEDull);
  }
  if (!o.out_dir.empty()) cfg.output = o.out_dir;
  if (cfg.output.empty())
    throw ConfigError(
        "no output directory (set \"output\" in the config or pass --out)");
  cfg.em.threads = std::max(1, o.threads);
  return cfg;
}

/// Write-once guard: refuses to overwrite any listed file unless --force.
void claim_outputs(const fs::path& dir, const std::vector<std::string>& names,
                   bool force) {
  if (force) return;
  for (const auto& n : names) {
    const fs::path p = dir / n;
    if (fs::exists(p))
      throw IoError("refusing to overwrite " + p.string() + " (pass --force)");
  }
}

void write_json_file(const json& j, const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + p.string());
}

std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

ObservationSet load_observations(const RunConfig& cfg, const fs::path& p) {
  std::vector<double> times;
  Mat states;
  read_states_csv(p.string(), times, states);
  if (states.rows() < 2)
    throw ConfigError("observation file has fewer than 2 rows: " + p.string());
  if (states.cols() != cfg.system.x0.size())
    throw ConfigError("observation dimension in " + p.string() +
                      " does not match system.x0");
  ObservationSet obs;
  obs.observations = std::move(states);
  obs.tau = cfg.tau();
  obs.dt = cfg.system.dt;
  obs.stride = cfg.stride;
  return obs;
}

json history_json(const RunConfig& cfg, const EMHistory& h) {
  json j = h.to_json();
  j["seed"] = cfg.system.seed;
  j["sigma_simulation"] = cfg.system.sigma;
  const bool mismatch =
      cfg.sigma_aug_explicit && cfg.em.bridge.sigma != cfg.system.sigma;
  j["sigma_mismatch"] = mismatch;
  if (mismatch)
    j["sigma_mismatch_note"] =
        "augmentation sigma " + format_double(cfg.em.bridge.sigma) +
        " differs from simulation sigma " + format_double(cfg.system.sigma);
  return j;
}

void save_stage_models(const EMHistory& h, const fs::path& dir) {
  for (std::size_t i = 0; i < h.records.size(); ++i)
    h.records[i].model.save(
        (dir / ("drift_iter" + std::to_string(i) + ".json")).string());
}

std::vector<std::string> infer_outputs(int iterations) {
  std::vector<std::string> owned = {"history.json"};
  for (int i = 0; i <= iterations; ++i)
    owned.push_back("drift_iter" + std::to_string(i) + ".json");
  return owned;
}

/// Runs the pipeline and persists its artifacts into `dir`.  On an EM abort
/// the partial history and completed stage models are still written.
int run_and_persist(const RunConfig& cfg, const fs::path& dir,
                    const ObservationSet& obs) {
  const DriftField truth = cfg.make_field();
  try {
    EMResult res = run_em(obs, cfg.em, &truth);
    save_stage_models(res.history, dir);
    write_json_file(history_json(cfg, res.history), dir / "history.json");
    for (std::size_t i = 0; i < res.history.records.size(); ++i)
      std::cout << "stage " << i << " (" << res.history.records[i].model.kind
                << "): wrmse " << res.history.records[i].wrmse << "\n";
    return 0;
  } catch (const EMFailure& e) {
    save_stage_models(e.history, dir);
    json h = history_json(cfg, e.history);
    h["failure"] = e.what();
    write_json_file(h, dir / "history.json");
    std::cerr << "error: " << e.what() << " (partial history persisted)\n";
    return 3;
  }
}

int cmd_simulate(const CommonOpts& o) {
  const RunConfig cfg = load_config(o);
  const fs::path dir(cfg.output);
  claim_outputs(dir, {"config.json", "trajectory.csv", "observations.csv"},
                o.force);
  const DriftField field = cfg.make_field();
  const Trajectory traj = euler_maruyama(field, cfg.make_sim());
  const ObservationSet obs = subsample(traj, cfg.stride);
  fs::create_directories(dir);
  write_json_file(cfg.to_json(), dir / "config.json");
  write_trajectory_csv(traj, (dir / "trajectory.csv").string());
  write_observations_csv(obs, (dir / "observations.csv").string());
  std::cout << "trajectory.csv: " << traj.size()
            << " rows; observations.csv: " << obs.count() << " rows\n";
  return 0;
}

int cmd_infer(const CommonOpts& o) {
  const RunConfig cfg = load_config(o);
  const fs::path dir(cfg.output);
  const bool have_obs = fs::exists(dir / "observations.csv");
  std::vector<std::string> owned = infer_outputs(cfg.em.iterations);
  if (!have_obs) owned.push_back("observations.csv");
  claim_outputs(dir, owned, o.force);

  ObservationSet obs;
  if (have_obs) {
    obs = load_observations(cfg, dir / "observations.csv");
  } else {
    const Trajectory traj = euler_maruyama(cfg.make_field(), cfg.make_sim());
    obs = subsample(traj, cfg.stride);
  }
  fs::create_directories(dir);
  if (!have_obs) write_observations_csv(obs, (dir / "observations.csv").string());
  if (!fs::exists(dir / "config.json") || o.force)
    write_json_file(cfg.to_json(), dir / "config.json");
  return run_and_persist(cfg, dir, obs);
}

int cmd_eval(const CommonOpts& o) {
  const RunConfig cfg = load_config(o);
  const fs::path dir(cfg.output);
  if (!fs::exists(dir / "observations.csv"))
    throw ConfigError("missing input " + (dir / "observations.csv").string() +
                      " (run simulate or infer first)");
  int best = -1;
  for (int i = 0; i < 100000; ++i) {
    if (fs::exists(dir / ("drift_iter" + std::to_string(i) + ".json")))
      best = i;
    else
      break;
  }
  if (best < 0)
    throw ConfigError("missing input " + (dir / "drift_iter0.json").string() +
                      " (run infer first)");
  const std::string model_file = "drift_iter" + std::to_string(best) + ".json";
  claim_outputs(dir, {"metrics.json", "drift_grid.csv"}, o.force);

  const GPDriftModel model = GPDriftModel::load((dir / model_file).string());
  const ObservationSet obs = load_observations(cfg, dir / "observations.csv");
  // Weight the error by the visitation density: the dense trajectory (when
  // simulate ran first) beats the sparse observations as a density sample.
  Mat density;
  std::string weights_sample = "observations";
  if (fs::exists(dir / "trajectory.csv")) {
    std::vector<double> traj_times;
    read_states_csv((dir / "trajectory.csv").string(), traj_times, density);
    if (density.cols() != obs.observations.cols())
      throw ConfigError("trajectory.csv dimension mismatch with observations");
    weights_sample = "trajectory";
  }
  const EvalGrid grid =
      make_eval_grid(obs.observations, cfg.grid_shape, cfg.grid_inflate,
                     density.rows() > 0 ? &density : nullptr);
  const DriftField truth = cfg.make_field();

  json m;
  m["model_file"] = model_file;
  m["weights_sample"] = weights_sample;
  m["wrmse"] = wrmse(truth, model, grid);
  m["wrmse_per_component"] =
      m["wrmse"].get<double>() / std::sqrt(static_cast<double>(model.dim()));
  m["wrmse_sum_nodes"] = wrmse_sum_nodes(truth, model, grid);
  m["grid"] = json{{"shape", grid.shape},
                   {"lo", to_std(grid.lo)},
                   {"hi", to_std(grid.hi)},
                   {"inflate", cfg.grid_inflate},
                   {"bandwidths", to_std(grid.bandwidths)}};
  m["seed"] = cfg.system.seed;
  write_json_file(m, dir / "metrics.json");
  write_drift_grid_csv((dir / "drift_grid.csv").string(), grid, truth, model);
  std::cout << model_file << ": wrmse " << m["wrmse"].get<double>() << "\n";
  return 0;
}

int cmd_diagnose(const CommonOpts& o) {
  const RunConfig cfg = load_config(o);
  const fs::path dir(cfg.output);
  if (!fs::exists(dir / "observations.csv"))
    throw ConfigError("missing input " + (dir / "observations.csv").string() +
                      " (run simulate or infer first)");
  claim_outputs(dir, {"diagnostics.csv", "diagnostics.json"}, o.force);
  const ObservationSet obs = load_observations(cfg, dir / "observations.csv");
  const EvalGrid grid =
      make_eval_grid(obs.observations, cfg.grid_shape, cfg.grid_inflate);
  const DriftField truth = cfg.make_field();
  const CurvatureReport rep =
      curvature_scan(truth, cfg.system.sigma, cfg.tau(), grid.nodes);
  write_diagnostics_csv((dir / "diagnostics.csv").string(), grid.nodes, truth,
                        rep);
  json summary;
  summary["tau"] = cfg.tau();
  summary["sigma"] = cfg.system.sigma;
  summary["nodes"] = grid.nodes.rows();
  summary["skipped_near_equilibrium"] = rep.skipped;
  summary["max_kappa_norm"] = rep.max_kappa_norm;
  summary["mean_kappa_norm"] = rep.mean_kappa_norm;
  summary["max_bias_norm"] = rep.max_bias_norm;
  summary["mean_bias_norm"] = rep.mean_bias_norm;
  write_json_file(summary, dir / "diagnostics.json");
  std::cout << "diagnostics over " << grid.nodes.rows() << " nodes ("
            << rep.skipped << " skipped near equilibria)\n";
  return 0;
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

struct SeedRow {
  std::uint64_t seed = 0;
  std::string status;
  std::vector<double> wrmse;  ///< per stage, NaN where unavailable
};

int cmd_fullrun(const CommonOpts& o) {
  RunConfig cfg = load_config(o);
  if (o.seed_set) cfg.seeds = {o.seed};
  if (cfg.seeds.empty())
    throw ConfigError("fullrun needs a non-empty eval.seeds list");
  const fs::path dir(cfg.output);
  claim_outputs(dir, {"summary.csv"}, o.force);

  const int n = static_cast<int>(cfg.seeds.size());
  const int stages = cfg.em.iterations + 1;
  const int workers = std::max(1, std::min(o.threads, n));
  const int inner = std::max(1, o.threads / workers);

  auto run_one = [&](std::uint64_t s) -> SeedRow {
    SeedRow row;
    row.seed = s;
    row.status = "ok";
    row.wrmse.assign(stages, std::numeric_limits<double>::quiet_NaN());
    RunConfig cs = cfg;
    cs.system.seed = s;
    cs.em.seed = derive_seed(s, 0xE5EEDull);
    cs.em.threads = inner;
    cs.output = (dir / ("seed_" + std::to_string(s))).string();
    const fs::path sd(cs.output);
    auto note_wrmse = [&](const EMHistory& h) {
      for (std::size_t i = 0; i < h.records.size() && i < row.wrmse.size(); ++i)
        row.wrmse[i] = h.records[i].wrmse;
    };
    try {
      std::vector<std::string> owned = infer_outputs(cs.em.iterations);
      owned.insert(owned.end(), {"config.json", "observations.csv",
                                 "metrics.json", "drift_grid.csv"});
      claim_outputs(sd, owned, o.force);
      const DriftField truth = cs.make_field();
      const Trajectory traj = euler_maruyama(truth, cs.make_sim());
      const ObservationSet obs = subsample(traj, cs.stride);
      fs::create_directories(sd);
      write_json_file(cs.to_json(), sd / "config.json");
      write_observations_csv(obs, (sd / "observations.csv").string());

      EMResult res = run_em(obs, cs.em, &truth);
      save_stage_models(res.history, sd);
      write_json_file(history_json(cs, res.history), sd / "history.json");
      note_wrmse(res.history);

      const EvalGrid grid = make_eval_grid(
          obs.observations, cs.grid_shape, cs.grid_inflate, &traj.states);
      const GPDriftModel& model = res.history.records.back().model;
      json m;
      m["model_file"] =
          "drift_iter" + std::to_string(res.history.records.size() - 1) +
          ".json";
      m["weights_sample"] = "trajectory";
      m["wrmse"] = wrmse(truth, model, grid);
      m["wrmse_per_component"] =
          m["wrmse"].get<double>() / std::sqrt(static_cast<double>(model.dim()));
      m["wrmse_sum_nodes"] = wrmse_sum_nodes(truth, model, grid);
      m["grid"] = json{{"shape", grid.shape},
                       {"lo", to_std(grid.lo)},
                       {"hi", to_std(grid.hi)},
                       {"inflate", cs.grid_inflate},
                       {"bandwidths", to_std(grid.bandwidths)}};
      m["seed"] = s;
      write_json_file(m, sd / "metrics.json");
      write_drift_grid_csv((sd / "drift_grid.csv").string(), grid, truth,
                           model);
    } catch (const EMFailure& e) {
      note_wrmse(e.history);
      row.status = "failed: " + csv_safe(e.what());
      try {
        save_stage_models(e.history, sd);
        json h = history_json(cs, e.history);
        h["failure"] = e.what();
        write_json_file(h, sd / "history.json");
      } catch (const std::exception&) {
        // keep the original failure as the row status
      }
    } catch (const std::exception& e) {
      row.status = "failed: " + csv_safe(e.what());
    }
    return row;
  };

  std::vector<SeedRow> rows(n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) rows[i] = run_one(cfg.seeds[i]);
  } else {
    std::vector<std::future<SeedRow>> inflight(n);
    const int window = std::min(n, workers);
    for (int i = 0; i < window; ++i)
      inflight[i] = std::async(std::launch::async, run_one, cfg.seeds[i]);
    for (int i = 0; i < n; ++i) {
      rows[i] = inflight[i].get();
      if (i + window < n)
        inflight[i + window] =
            std::async(std::launch::async, run_one, cfg.seeds[i + window]);
    }
  }

  fs::create_directories(dir);
  std::ofstream out(dir / "summary.csv");
  if (!out) throw IoError("cannot write " + (dir / "summary.csv").string());
  out << "seed,status";
  for (int j = 0; j < stages; ++j) out << ",wrmse_iter" << j;
  out << "\n";
  for (const auto& r : rows) {
    out << r.seed << "," << r.status;
    for (double w : r.wrmse)
      out << "," << (std::isfinite(w) ? format_double(w) : "");
    out << "\n";
  }
  int ok_count = 0;
  std::vector<double> mean(stages, 0.0), sd(stages, 0.0);
  for (const auto& r : rows)
    if (r.status == "ok") {
      ++ok_count;
      for (int j = 0; j < stages; ++j) mean[j] += r.wrmse[j];
    }
  if (ok_count > 0)
    for (int j = 0; j < stages; ++j) mean[j] /= ok_count;
  if (ok_count > 1) {
    for (const auto& r : rows)
      if (r.status == "ok")
        for (int j = 0; j < stages; ++j) {
          const double d = r.wrmse[j] - mean[j];
          sd[j] += d * d;
        }
    for (int j = 0; j < stages; ++j)
      sd[j] = std::sqrt(sd[j] / (ok_count - 1));
  }
  out << "mean,";
  for (int j = 0; j < stages; ++j)
    out << "," << (ok_count > 0 ? format_double(mean[j]) : "");
  out << "\n";
  out << "std,";
  for (int j = 0; j < stages; ++j)
    out << "," << (ok_count > 0 ? format_double(sd[j]) : "");
  out << "\n";
  if (!out) throw IoError("write failed for " + (dir / "summary.csv").string());
  out.close();

  for (const auto& r : rows) {
    std::cout << "seed " << r.seed << ": " << r.status;
    for (double w : r.wrmse)
      if (std::isfinite(w)) std::cout << " " << w;
    std::cout << "\n";
  }
  std::cout << ok_count << "/" << n << " seeds ok";
  if (ok_count > 0)
    std::cout << "; final-stage wrmse mean " << mean[stages - 1] << " std "
              << sd[stages - 1];
  std::cout << "\n";
  if (ok_count == 0) {
    std::cerr << "error: all seeds failed\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometry-aware drift inference for sparsely observed "
               "diffusions"};
  app.require_subcommand(1);
  CommonOpts o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration")
        ->required();
    sub->add_option("--out", o.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", o.seed, "master seed override")
        ->each([&](const std::string&) { o.seed_set = true; });
    sub->add_flag("--force", o.force, "allow overwriting existing outputs");
    sub->add_option("--threads", o.threads, "worker threads")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* sim = app.add_subcommand(
      "simulate", "integrate the SDE and write trajectory + observations");
  CLI::App* inf = app.add_subcommand(
      "infer", "run the augmentation pipeline on the observations");
  CLI::App* ev = app.add_subcommand(
      "eval", "score an inferred drift against the ground truth");
  CLI::App* diag = app.add_subcommand(
      "diagnose", "curvature / discretization-bias scan of the true field");
  CLI::App* full = app.add_subcommand(
      "fullrun", "simulate + infer + eval for every seed in the config");
  for (CLI::App* sub : {sim, inf, ev, diag, full}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? 0 : 2;
  }

  int code = 0;
  try {
    if (sim->parsed())
      code = cmd_simulate(o);
    else if (inf->parsed())
      code = cmd_infer(o);
    else if (ev->parsed())
      code = cmd_eval(o);
    else if (diag->parsed())
      code = cmd_diagnose(o);
    else if (full->parsed())
      code = cmd_fullrun(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 3;
  }
  return code;
}
