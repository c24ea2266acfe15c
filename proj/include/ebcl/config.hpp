#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebcl/error.hpp"
#include "ebcl/harness.hpp"
#include "ebcl/optimizer.hpp"

namespace ebcl {

inline constexpr const char* kLibraryVersion = "1.0.0";

struct ExperimentConfig {
  std::string mode;
  std::vector<std::uint64_t> seeds{0};
  HarnessConfig harness;
  std::optional<std::string> out;
  std::vector<std::string> inputs;
};

inline const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> modes{"run",      "baseline", "merge-experiment",
                                              "spectrum", "metrics",  "compare"};
  return modes;
}

inline bool mode_writes_directory(const std::string& mode) {
  return mode == "run" || mode == "baseline" || mode == "merge-experiment";
}

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::string& where, std::set<std::string> allowed) {
  if (!j.is_object()) fail(ErrorKind::ConfigError, where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) fail(ErrorKind::ConfigError, where + ": unknown key '" + key + "'");
}

template <typename T>
void read_key(const json& j, const char* key, T& dst, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    dst = it->template get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::ConfigError, where + "." + key + ": wrong type");
  }
}

inline void read_count(const json& j, const char* key, std::size_t& dst, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_integer() || it->get<long long>() < 0)
    fail(ErrorKind::ConfigError, where + "." + key + ": expected a nonnegative integer");
  dst = it->get<std::size_t>();
}

inline std::uint64_t read_seed(const json& v, const std::string& where) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
    fail(ErrorKind::ConfigError, where + ": seed must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

inline void read_optimizer(const json& j, InnerOptimizerConfig& o, const std::string& where) {
  reject_unknown(j, where, {"kind", "learning_rate", "momentum", "beta1", "beta2", "eps_adam",
                            "weight_decay", "project_moments"});
  if (auto it = j.find("kind"); it != j.end()) {
    if (!it->is_string()) fail(ErrorKind::ConfigError, where + ".kind: expected a string");
    o.kind = parse_optimizer_kind(it->get<std::string>());
  }
  read_key(j, "learning_rate", o.learning_rate, where);
  read_key(j, "momentum", o.momentum, where);
  read_key(j, "beta1", o.beta1, where);
  read_key(j, "beta2", o.beta2, where);
  read_key(j, "eps_adam", o.eps_adam, where);
  read_key(j, "weight_decay", o.weight_decay, where);
  read_key(j, "project_moments", o.project_moments, where);
}

inline json optimizer_json(const InnerOptimizerConfig& o) {
  return json{{"kind", std::string(to_string(o.kind))},
              {"learning_rate", o.learning_rate},
              {"momentum", o.momentum},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"eps_adam", o.eps_adam},
              {"weight_decay", o.weight_decay},
              {"project_moments", o.project_moments}};
}

}  // namespace detail

/// Reads a nested JSON config. Absent keys keep their defaults; unknown keys
/// and wrong types raise ConfigError. The `info` section is ignored so that
/// manifests can be fed back in.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read_count;
  using detail::read_key;
  ExperimentConfig c;
  HarnessConfig& h = c.harness;
  detail::reject_unknown(j, "config",
                         {"mode", "seed", "seeds", "dims", "rank", "task", "optimizer",
                          "baseline_optimizer", "gpm", "scale", "steps_per_task", "alpha_grid",
                          "merge", "paths", "info"});
  read_key(j, "mode", c.mode, "config");
  if (j.contains("seed") && j.contains("seeds"))
    fail(ErrorKind::ConfigError, "config: give either seed or seeds, not both");
  if (auto it = j.find("seed"); it != j.end()) c.seeds = {detail::read_seed(*it, "config.seed")};
  if (auto it = j.find("seeds"); it != j.end()) {
    if (!it->is_array() || it->empty())
      fail(ErrorKind::ConfigError, "config.seeds: expected a nonempty array");
    c.seeds.clear();
    for (const auto& v : *it) c.seeds.push_back(detail::read_seed(v, "config.seeds"));
  }
  if (auto it = j.find("dims"); it != j.end()) {
    detail::reject_unknown(*it, "dims", {"d", "n", "layers"});
    read_count(*it, "d", h.d, "dims");
    read_count(*it, "n", h.n, "dims");
    read_count(*it, "layers", h.layers, "dims");
  }
  read_count(j, "rank", h.rank, "config");
  if (auto it = j.find("task"); it != j.end()) {
    detail::reject_unknown(*it, "task",
                           {"count", "r_plant", "plant_decay", "perturbation_ratio", "input_focus",
                            "overlap", "noise_std", "n_train", "n_eval"});
    read_count(*it, "count", h.tasks, "task");
    read_count(*it, "r_plant", h.r_plant, "task");
    read_key(*it, "plant_decay", h.plant_decay, "task");
    read_key(*it, "perturbation_ratio", h.perturbation_ratio, "task");
    read_key(*it, "input_focus", h.input_focus, "task");
    read_key(*it, "overlap", h.overlap, "task");
    read_key(*it, "noise_std", h.noise_std, "task");
    read_count(*it, "n_train", h.n_train, "task");
    read_count(*it, "n_eval", h.n_eval, "task");
  }
  if (auto it = j.find("optimizer"); it != j.end()) detail::read_optimizer(*it, h.optimizer, "optimizer");
  if (auto it = j.find("baseline_optimizer"); it != j.end())
    detail::read_optimizer(*it, h.baseline_optimizer, "baseline_optimizer");
  if (auto it = j.find("gpm"); it != j.end()) {
    detail::reject_unknown(*it, "gpm", {"epsilon", "n_snapshot", "enabled"});
    read_key(*it, "epsilon", h.epsilon, "gpm");
    read_count(*it, "n_snapshot", h.n_snapshot, "gpm");
    read_key(*it, "enabled", h.use_gpm, "gpm");
  }
  if (auto it = j.find("scale"); it != j.end()) {
    detail::reject_unknown(*it, "scale", {"s_min", "s_max", "depth_aware"});
    read_key(*it, "s_min", h.s_min, "scale");
    read_key(*it, "s_max", h.s_max, "scale");
    read_key(*it, "depth_aware", h.depth_aware, "scale");
  }
  read_count(j, "steps_per_task", h.steps_per_task, "config");
  read_key(j, "alpha_grid", h.alpha_grid, "config");
  if (auto it = j.find("merge"); it != j.end()) {
    detail::reject_unknown(*it, "merge", {"smooth_target"});
    read_key(*it, "smooth_target", h.smooth_target, "merge");
  }
  if (auto it = j.find("paths"); it != j.end()) {
    detail::reject_unknown(*it, "paths", {"out", "inputs"});
    if (auto o = it->find("out"); o != it->end()) {
      if (o->is_null()) {
        c.out.reset();
      } else {
        std::string s;
        read_key(*it, "out", s, "paths");
        c.out = s;
      }
    }
    read_key(*it, "inputs", c.inputs, "paths");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::ConfigError, "cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::ConfigError, "config " + path + ": " + e.what());
  }
  return parse_config(j);
}

/// Fully resolved config; parse_config(config_json(c)) reproduces c.
inline nlohmann::json config_json(const ExperimentConfig& c) {
  using nlohmann::json;
  const HarnessConfig& h = c.harness;
  json j;
  j["mode"] = c.mode;
  j["seeds"] = c.seeds;
  j["dims"] = {{"d", h.d}, {"n", h.n}, {"layers", h.layers}};
  j["rank"] = h.rank;
  j["task"] = {{"count", h.tasks},
               {"r_plant", h.r_plant},
               {"plant_decay", h.plant_decay},
               {"perturbation_ratio", h.perturbation_ratio},
               {"input_focus", h.input_focus},
               {"overlap", h.overlap},
               {"noise_std", h.noise_std},
               {"n_train", h.n_train},
               {"n_eval", h.n_eval}};
  j["optimizer"] = detail::optimizer_json(h.optimizer);
  j["baseline_optimizer"] = detail::optimizer_json(h.baseline_optimizer);
  j["gpm"] = {{"epsilon", h.epsilon}, {"n_snapshot", h.n_snapshot}, {"enabled", h.use_gpm}};
  j["scale"] = {{"s_min", h.s_min}, {"s_max", h.s_max}, {"depth_aware", h.depth_aware}};
  j["steps_per_task"] = h.steps_per_task;
  j["alpha_grid"] = h.alpha_grid;
  j["merge"] = {{"smooth_target", h.smooth_target}};
  j["paths"] = {{"out", c.out ? json(*c.out) : json(nullptr)}, {"inputs", c.inputs}};
  return j;
}

/// Resolved config for one seed plus an `info` block that parse_config skips.
inline nlohmann::json manifest_json(const ExperimentConfig& c, std::uint64_t seed,
                                    const nlohmann::json& run_info = nlohmann::json::object()) {
  ExperimentConfig one = c;
  one.seeds = {seed};
  nlohmann::json j = config_json(one);
  j["info"] = {{"library_version", kLibraryVersion},
               {"modules",
                {{"linalg", "1.0"},
                 {"manifold", "1.0"},
                 {"optimizer", "1.0"},
                 {"gpm", "1.0"},
                 {"adapter", "1.0"},
                 {"spectral", "1.0"},
                 {"harness", "1.0"},
                 {"cli", "1.0"}}},
               {"rng_streams", {"task-gen", "init", "data", "snapshot", "merge-init"}},
               {"snapshot_normalization", "per-minibatch block scaled to unit Frobenius norm"},
               {"v_optimizer", "same settings as optimizer (U)"},
               {"run", run_info}};
  return j;
}

}  // namespace ebcl
