#include "geodrift/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "geodrift/rng.hpp"

namespace geodrift {

using nlohmann::json;

namespace {

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (allowed.find(it.key()) == allowed.end())
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
T get_req(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": bad value for '" + key + "'");
  }
}

template <typename T>
T get_opt(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": bad value for '" + key + "'");
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  require_object(j, "config");
  reject_unknown(j, {"schema_version", "system", "observation", "em", "eval",
                     "output"},
                 "config");
  if (get_req<int>(j, "schema_version", "config") != 1)
    throw ConfigError("config: unsupported schema_version (expected 1)");

  RunConfig cfg;

  const json& sys = j.contains("system") ? j.at("system") : json::object();
  require_object(sys, "system");
  reject_unknown(sys, {"name", "params", "sigma", "dt", "T", "x0", "seed"},
                 "system");
  cfg.system.name = get_req<std::string>(sys, "name", "system");
  if (sys.contains("params")) {
    require_object(sys.at("params"), "system.params");
    for (auto it = sys.at("params").begin(); it != sys.at("params").end(); ++it) {
      if (!it.value().is_number())
        throw ConfigError("system.params: '" + it.key() + "' must be a number");
      cfg.system.params[it.key()] = it.value().get<double>();
    }
  }
  cfg.system.sigma = get_opt<double>(sys, "sigma", 0.25, "system");
  cfg.system.dt = get_opt<double>(sys, "dt", 0.01, "system");
  cfg.system.T = get_req<double>(sys, "T", "system");
  const auto x0 = get_req<std::vector<double>>(sys, "x0", "system");
  cfg.system.x0 = Eigen::Map<const Vec>(x0.data(), x0.size());
  cfg.system.seed = get_opt<std::uint64_t>(sys, "seed", 0, "system");

  const json& obs = j.contains("observation") ? j.at("observation") : json::object();
  require_object(obs, "observation");
  reject_unknown(obs, {"stride"}, "observation");
  cfg.stride = get_req<long>(obs, "stride", "observation");

  cfg.em.bridge.sigma = cfg.system.sigma;
  cfg.em.iterations = 0;  // baseline unless the config opts in below
  if (j.contains("em")) {
    const json& em = j.at("em");
    require_object(em, "em");
    reject_unknown(em,
                   {"iterations", "beta", "particles", "score_inducing",
                    "score_lambda", "eps_init", "terminal_factor",
                    "sigma_augmentation", "metric", "geodesic", "gp"},
                   "em");
    // Absent => baseline mode (naive regression only). An explicit value
    // must request at least one refinement pass.
    cfg.em.iterations = get_opt<int>(em, "iterations", 0, "em");
    if (em.contains("iterations") && cfg.em.iterations < 1)
      throw ConfigError("em.iterations must be >= 1 when given; "
                        "omit the key for the naive baseline");
    cfg.em.bridge.beta = get_opt<double>(em, "beta", 0.5, "em");
    cfg.em.bridge.particles = get_opt<int>(em, "particles", 100, "em");
    cfg.em.bridge.inducing = get_opt<int>(em, "score_inducing", 40, "em");
    cfg.em.bridge.lambda = get_opt<double>(em, "score_lambda", 1e-3, "em");
    cfg.em.bridge.eps_init = get_opt<double>(em, "eps_init", 1e-3, "em");
    cfg.em.bridge.terminal_factor =
        get_opt<double>(em, "terminal_factor", 5.0, "em");
    if (em.contains("sigma_augmentation")) {
      cfg.em.bridge.sigma =
          get_req<double>(em, "sigma_augmentation", "em");
      cfg.sigma_aug_explicit = true;
    }
    if (em.contains("metric")) {
      const json& m = em.at("metric");
      require_object(m, "em.metric");
      reject_unknown(m, {"sigma", "epsilon"}, "em.metric");
      cfg.em.metric_sigma = get_opt<double>(m, "sigma", 0.0, "em.metric");
      cfg.em.metric_epsilon = get_opt<double>(m, "epsilon", 1e-4, "em.metric");
    }
    if (em.contains("geodesic")) {
      const json& g = em.at("geodesic");
      require_object(g, "em.geodesic");
      reject_unknown(g, {"tol", "max_iters", "multilevel"}, "em.geodesic");
      cfg.em.geodesic.tol = get_opt<double>(g, "tol", 1e-6, "em.geodesic");
      cfg.em.geodesic.max_iters =
          get_opt<int>(g, "max_iters", 5000, "em.geodesic");
      cfg.em.geodesic.multilevel =
          get_opt<bool>(g, "multilevel", true, "em.geodesic");
    }
    if (em.contains("gp")) {
      const json& g = em.at("gp");
      require_object(g, "em.gp");
      reject_unknown(g,
                     {"inducing", "ridge", "lengthscale_factor",
                      "variance_factor"},
                     "em.gp");
      cfg.em.gp_inducing = get_opt<int>(g, "inducing", 300, "em.gp");
      cfg.em.gp_ridge = get_opt<double>(g, "ridge", 1e-3, "em.gp");
      cfg.em.lengthscale_factor =
          get_opt<double>(g, "lengthscale_factor", 1.0, "em.gp");
      cfg.em.variance_factor =
          get_opt<double>(g, "variance_factor", 1.0, "em.gp");
    }
  }

  if (j.contains("eval")) {
    const json& ev = j.at("eval");
    require_object(ev, "eval");
    reject_unknown(ev, {"grid", "inflate", "seeds"}, "eval");
    cfg.grid_shape = get_opt<std::vector<long>>(ev, "grid", {}, "eval");
    cfg.grid_inflate = get_opt<double>(ev, "inflate", 0.05, "eval");
    cfg.seeds = get_opt<std::vector<std::uint64_t>>(ev, "seeds", {}, "eval");
  }

  cfg.output = get_opt<std::string>(j, "output", "", "config");
  cfg.em.seed = derive_seed(cfg.system.seed, 0xE5EEDull);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  j["schema_version"] = 1;
  json sys;
  sys["name"] = system.name;
  json params = json::object();
  for (const auto& [k, v] : system.params) params[k] = v;
  sys["params"] = std::move(params);
  sys["sigma"] = system.sigma;
  sys["dt"] = system.dt;
  sys["T"] = system.T;
  sys["x0"] = std::vector<double>(system.x0.data(),
                                  system.x0.data() + system.x0.size());
  sys["seed"] = system.seed;
  j["system"] = std::move(sys);
  j["observation"] = json{{"stride", stride}};
  json em;
  // Baseline mode is encoded by the key's absence (see from_json).
  if (this->em.iterations > 0) em["iterations"] = this->em.iterations;
  em["beta"] = this->em.bridge.beta;
  em["particles"] = this->em.bridge.particles;
  em["score_inducing"] = this->em.bridge.inducing;
  em["score_lambda"] = this->em.bridge.lambda;
  em["eps_init"] = this->em.bridge.eps_init;
  em["terminal_factor"] = this->em.bridge.terminal_factor;
  em["sigma_augmentation"] = this->em.bridge.sigma;
  em["metric"] = json{{"sigma", this->em.metric_sigma},
                      {"epsilon", this->em.metric_epsilon}};
  em["geodesic"] = json{{"tol", this->em.geodesic.tol},
                        {"max_iters", this->em.geodesic.max_iters},
                        {"multilevel", this->em.geodesic.multilevel}};
  em["gp"] = json{{"inducing", this->em.gp_inducing},
                  {"ridge", this->em.gp_ridge},
                  {"lengthscale_factor", this->em.lengthscale_factor},
                  {"variance_factor", this->em.variance_factor}};
  j["em"] = std::move(em);
  json ev;
  ev["grid"] = grid_shape;
  ev["inflate"] = grid_inflate;
  ev["seeds"] = seeds;
  j["eval"] = std::move(ev);
  j["output"] = output;
  return j;
}

void RunConfig::validate() const {
  if (system.name.empty()) throw ConfigError("system.name is empty");
  if (system.sigma < 0.0) throw ConfigError("system.sigma must be >= 0");
  if (system.dt <= 0.0) throw ConfigError("system.dt must be > 0");
  if (system.T <= 0.0) throw ConfigError("system.T must be > 0");
  if (system.x0.size() == 0) throw ConfigError("system.x0 is empty");
  const double steps = system.T / system.dt;
  if (std::abs(steps - std::lround(steps)) > 1e-6)
    throw ConfigError("system.T must be a whole number of dt steps");
  if (stride < 1) throw ConfigError("observation.stride must be >= 1");
  if (std::lround(steps) < stride)
    throw ConfigError("observation.stride exceeds the step count");
  try {
    em.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("em: ") + e.what());
  }
  if (!grid_shape.empty() &&
      static_cast<long>(grid_shape.size()) != system.x0.size())
    throw ConfigError("eval.grid rank must match the state dimension");
  for (long n : grid_shape)
    if (n < 2) throw ConfigError("eval.grid entries must be >= 2");
  if (grid_inflate < 0.0) throw ConfigError("eval.inflate must be >= 0");
  try {
    make_field();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
}

DriftField RunConfig::make_field() const {
  DriftField f = make_drift(system.name, system.params);
  if (f.dim != system.x0.size())
    throw ConfigError("system.x0 dimension does not match the system");
  return f;
}

SimConfig RunConfig::make_sim() const {
  SimConfig sim;
  sim.dt = system.dt;
  sim.T = system.T;
  sim.sigma = system.sigma;
  sim.x0 = system.x0;
  sim.seed = derive_seed(system.seed, 0x51Bull);
  return sim;
}

}  // namespace geodrift
