#pragma once

// Experiment configuration: one JSON document with sections kiti, dsmc,
// network, train, sweep plus output_dir. Every field has a default, every
// seed is explicit after defaulting, and unknown keys are rejected. The
// materialized form echoed next to run outputs reproduces the run exactly.

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kitinet/dsmc.hpp"
#include "kitinet/kinetic.hpp"
#include "kitinet/net.hpp"

namespace kitinet::cli {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DsmcRunConfig {
  dsmc::DsmcConfig gas;
  std::size_t steps = 200;
  std::size_t hist_bins = 30;
};

struct TrainRunConfig {
  net::TrainConfig opt;
  std::size_t dataset_n = 80;
  std::uint64_t dataset_seed = 4;
  std::vector<std::size_t> analyze_layers;  // defaults to every hidden layer
  double score_threshold = 0.95;
};

struct SweepConfig {
  std::vector<std::size_t> n_divide = {1, 2, 4};
  std::vector<double> coll_coef = {0.3, 0.6, 0.9};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct ExperimentConfig {
  std::string output_dir = "runs/out";
  KitiConfig kiti;
  DsmcRunConfig dsmc_run;
  net::NetworkSpec network;
  TrainRunConfig train;
  SweepConfig sweep;
};

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& section) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in section '" + section + "'");
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + key + "': " + e.what());
  }
}

inline net::Activation parse_activation(const std::string& s) {
  if (s == "relu") return net::Activation::relu;
  if (s == "leaky_relu") return net::Activation::leaky_relu;
  if (s == "sigmoid") return net::Activation::sigmoid;
  if (s == "tanh") return net::Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

inline std::string activation_name(net::Activation a) {
  switch (a) {
    case net::Activation::relu: return "relu";
    case net::Activation::leaky_relu: return "leaky_relu";
    case net::Activation::sigmoid: return "sigmoid";
    case net::Activation::tanh: return "tanh";
  }
  return "relu";
}

inline dsmc::WallModel parse_wall(const std::string& s) {
  if (s == "specular") return dsmc::WallModel::specular;
  if (s == "periodic") return dsmc::WallModel::periodic;
  throw ConfigError("unknown wall_model '" + s + "'");
}

inline std::string wall_name(dsmc::WallModel w) {
  return w == dsmc::WallModel::specular ? "specular" : "periodic";
}

inline net::Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return net::Optimizer::sgd;
  if (s == "adam") return net::Optimizer::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

inline std::string optimizer_name(net::Optimizer o) {
  return o == net::Optimizer::sgd ? "sgd" : "adam";
}

}  // namespace detail

// Library defaults plus whatever the document overrides; unknown keys fail.
inline ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
  detail::check_keys(doc, {"output_dir", "kiti", "dsmc", "network", "train", "sweep"},
                     "<root>");

  ExperimentConfig cfg;
  // experiment-level defaults that differ from the bare struct defaults
  cfg.kiti.coll_coef = 0.3;
  cfg.kiti.n_divide = 2;
  cfg.kiti.seed = 1;
  cfg.dsmc_run.gas.seed = 2;
  cfg.train.opt.seed = 3;
  cfg.network.kiti_layers = {2};

  cfg.output_dir = detail::get_or<std::string>(doc, "output_dir", cfg.output_dir);

  if (doc.contains("kiti")) {
    const json& k = doc.at("kiti");
    detail::check_keys(
        k, {"dt", "n_divide", "coll_coef", "seed", "update_positions", "training"}, "kiti");
    cfg.kiti.dt = detail::get_or(k, "dt", cfg.kiti.dt);
    cfg.kiti.n_divide = detail::get_or(k, "n_divide", cfg.kiti.n_divide);
    cfg.kiti.coll_coef = detail::get_or(k, "coll_coef", cfg.kiti.coll_coef);
    cfg.kiti.seed = detail::get_or(k, "seed", cfg.kiti.seed);
    cfg.kiti.update_positions = detail::get_or(k, "update_positions", cfg.kiti.update_positions);
    cfg.kiti.training = detail::get_or(k, "training", cfg.kiti.training);
  }

  if (doc.contains("dsmc")) {
    const json& d = doc.at("dsmc");
    detail::check_keys(d,
                       {"num_particles", "f_n", "diameter", "tau", "box", "cells_per_axis",
                        "wall_model", "dimensionality", "seed", "initial_temperature",
                        "steps", "hist_bins"},
                       "dsmc");
    auto& g = cfg.dsmc_run.gas;
    g.num_particles = detail::get_or(d, "num_particles", g.num_particles);
    g.f_n = detail::get_or(d, "f_n", g.f_n);
    g.diameter = detail::get_or(d, "diameter", g.diameter);
    g.tau = detail::get_or(d, "tau", g.tau);
    g.box = detail::get_or(d, "box", g.box);
    g.cells_per_axis = detail::get_or(d, "cells_per_axis", g.cells_per_axis);
    if (d.contains("wall_model"))
      g.wall_model = detail::parse_wall(d.at("wall_model").get<std::string>());
    g.dimensionality = detail::get_or(d, "dimensionality", g.dimensionality);
    g.seed = detail::get_or(d, "seed", g.seed);
    g.initial_temperature = detail::get_or(d, "initial_temperature", g.initial_temperature);
    cfg.dsmc_run.steps = detail::get_or(d, "steps", cfg.dsmc_run.steps);
    cfg.dsmc_run.hist_bins = detail::get_or(d, "hist_bins", cfg.dsmc_run.hist_bins);
  }

  if (doc.contains("network")) {
    const json& m = doc.at("network");
    detail::check_keys(m,
                       {"input_dim", "hidden_dim", "output_dim", "depth", "activation",
                        "skip_connections", "kiti_layers", "gamma"},
                       "network");
    auto& s = cfg.network;
    s.input_dim = detail::get_or(m, "input_dim", s.input_dim);
    s.hidden_dim = detail::get_or(m, "hidden_dim", s.hidden_dim);
    s.output_dim = detail::get_or(m, "output_dim", s.output_dim);
    s.depth = detail::get_or(m, "depth", s.depth);
    if (m.contains("activation"))
      s.activation = detail::parse_activation(m.at("activation").get<std::string>());
    s.skip_connections = detail::get_or(m, "skip_connections", s.skip_connections);
    if (m.contains("kiti_layers")) {
      const auto v = m.at("kiti_layers").get<std::vector<std::size_t>>();
      s.kiti_layers = std::set<std::size_t>(v.begin(), v.end());
    }
    s.gamma = detail::get_or(m, "gamma", s.gamma);
  }

  if (doc.contains("train")) {
    const json& t = doc.at("train");
    detail::check_keys(t,
                       {"epochs", "learning_rate", "optimizer", "batch", "seed",
                        "checkpoints", "dataset_n", "dataset_seed", "analyze_layers",
                        "score_threshold"},
                       "train");
    auto& tr = cfg.train;
    tr.opt.epochs = detail::get_or(t, "epochs", tr.opt.epochs);
    tr.opt.learning_rate = detail::get_or(t, "learning_rate", tr.opt.learning_rate);
    if (t.contains("optimizer"))
      tr.opt.optimizer = detail::parse_optimizer(t.at("optimizer").get<std::string>());
    tr.opt.batch = detail::get_or(t, "batch", tr.opt.batch);
    tr.opt.seed = detail::get_or(t, "seed", tr.opt.seed);
    tr.opt.checkpoints = detail::get_or(t, "checkpoints", tr.opt.checkpoints);
    tr.dataset_n = detail::get_or(t, "dataset_n", tr.dataset_n);
    tr.dataset_seed = detail::get_or(t, "dataset_seed", tr.dataset_seed);
    tr.analyze_layers = detail::get_or(t, "analyze_layers", tr.analyze_layers);
    tr.score_threshold = detail::get_or(t, "score_threshold", tr.score_threshold);
  }

  if (doc.contains("sweep")) {
    const json& s = doc.at("sweep");
    detail::check_keys(s, {"n_divide", "coll_coef", "seeds"}, "sweep");
    cfg.sweep.n_divide = detail::get_or(s, "n_divide", cfg.sweep.n_divide);
    cfg.sweep.coll_coef = detail::get_or(s, "coll_coef", cfg.sweep.coll_coef);
    cfg.sweep.seeds = detail::get_or(s, "seeds", cfg.sweep.seeds);
  }

  // materialize remaining defaults
  cfg.network.kiti = cfg.kiti;
  if (cfg.train.analyze_layers.empty())
    for (std::size_t l = 1; l < cfg.network.depth; ++l) cfg.train.analyze_layers.push_back(l);

  try {
    cfg.kiti.validate();
    cfg.dsmc_run.gas.validate();
    cfg.network.validate();
    cfg.train.opt.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (!(cfg.train.score_threshold > 0.0 && cfg.train.score_threshold < 1.0))
    throw ConfigError("train.score_threshold must lie in (0, 1)");
  for (std::size_t l : cfg.train.analyze_layers)
    if (l < 1 || l > cfg.network.depth)
      throw ConfigError("train.analyze_layers entries must lie in 1..depth");
  if (cfg.dsmc_run.hist_bins < 10) throw ConfigError("dsmc.hist_bins must be >= 10");
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

// Fully materialized document: every field explicit, suitable as the sole
// input for reproducing the run.
inline json to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["output_dir"] = cfg.output_dir;
  doc["kiti"] = {{"dt", cfg.kiti.dt},
                 {"n_divide", cfg.kiti.n_divide},
                 {"coll_coef", cfg.kiti.coll_coef},
                 {"seed", cfg.kiti.seed},
                 {"update_positions", cfg.kiti.update_positions},
                 {"training", cfg.kiti.training}};
  doc["dsmc"] = {{"num_particles", cfg.dsmc_run.gas.num_particles},
                 {"f_n", cfg.dsmc_run.gas.f_n},
                 {"diameter", cfg.dsmc_run.gas.diameter},
                 {"tau", cfg.dsmc_run.gas.tau},
                 {"box", cfg.dsmc_run.gas.box},
                 {"cells_per_axis", cfg.dsmc_run.gas.cells_per_axis},
                 {"wall_model", detail::wall_name(cfg.dsmc_run.gas.wall_model)},
                 {"dimensionality", cfg.dsmc_run.gas.dimensionality},
                 {"seed", cfg.dsmc_run.gas.seed},
                 {"initial_temperature", cfg.dsmc_run.gas.initial_temperature},
                 {"steps", cfg.dsmc_run.steps},
                 {"hist_bins", cfg.dsmc_run.hist_bins}};
  doc["network"] = {{"input_dim", cfg.network.input_dim},
                    {"hidden_dim", cfg.network.hidden_dim},
                    {"output_dim", cfg.network.output_dim},
                    {"depth", cfg.network.depth},
                    {"activation", detail::activation_name(cfg.network.activation)},
                    {"skip_connections", cfg.network.skip_connections},
                    {"kiti_layers", std::vector<std::size_t>(cfg.network.kiti_layers.begin(),
                                                             cfg.network.kiti_layers.end())},
                    {"gamma", cfg.network.gamma}};
  doc["train"] = {{"epochs", cfg.train.opt.epochs},
                  {"learning_rate", cfg.train.opt.learning_rate},
                  {"optimizer", detail::optimizer_name(cfg.train.opt.optimizer)},
                  {"batch", cfg.train.opt.batch},
                  {"seed", cfg.train.opt.seed},
                  {"checkpoints", cfg.train.opt.checkpoints},
                  {"dataset_n", cfg.train.dataset_n},
                  {"dataset_seed", cfg.train.dataset_seed},
                  {"analyze_layers", cfg.train.analyze_layers},
                  {"score_threshold", cfg.train.score_threshold}};
  doc["sweep"] = {{"n_divide", cfg.sweep.n_divide},
                  {"coll_coef", cfg.sweep.coll_coef},
                  {"seeds", cfg.sweep.seeds}};
  return doc;
}

// Master seed override: pins every per-module seed to the given value.
inline void override_seeds(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.kiti.seed = seed;
  cfg.network.kiti.seed = seed;
  cfg.dsmc_run.gas.seed = seed;
  cfg.train.opt.seed = seed;
  cfg.train.dataset_seed = seed;
}

}  // namespace kitinet::cli
