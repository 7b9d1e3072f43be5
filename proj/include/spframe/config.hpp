#pragma once

// Run configuration and its JSON form. Unknown keys are rejected so typos in
// config files surface as input errors instead of silently using defaults.

#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "error.hpp"
#include "frames.hpp"
#include "network.hpp"

namespace spframe {

struct TrainConfig {
  std::size_t epochs = 200;
  double lr = 2e-3;
  // "constant" or "cosine" (decays to lr_min_fraction · lr).
  std::string lr_schedule = "cosine";
  double lr_min_fraction = 0.05;
  std::size_t batch_size = 8;
  bool standardize_targets = true;
  std::uint64_t seed = 0;
};

struct DatasetConfig {
  std::size_t n_structures = 200;
  double holdout_fraction = 0.2;
  std::size_t min_atoms = 2;
  std::size_t max_atoms = 4;
  std::uint64_t seed = 0;
};

struct VerifyConfig {
  std::size_t trials = 100;
  double tol = 1e-8;
  double translation_range = 5.0;
};

struct DemoConfig {
  int angle = 180;
  double c = 5.0;
  std::size_t motif_size = 3;
  double collapse_tol = 1e-8;
  double separation_tol = 1e-3;
  double invariant_frame_tol = 1e-10;
  double equivariant_frame_tol = 1e-8;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetConfig dataset;
  VerifyConfig verify;
  DemoConfig demo;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) fail<InputError>("config section '" + where + "' must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) fail<InputError>("unknown config key '" + where + "." + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail<InputError>("config key '" + where + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"feature_dim", c.feature_dim},     {"n_layers", c.n_layers},
          {"frame_mode", to_string(c.frame_mode)}, {"global_method", to_string(c.global_method)},
          {"identity_global", c.identity_global},  {"cutoff", c.cutoff},
          {"max_neighbors", c.max_neighbors},      {"n_centers", c.n_centers},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  detail::reject_unknown(j,
                         {"feature_dim", "n_layers", "frame_mode", "global_method", "identity_global", "cutoff",
                          "max_neighbors", "n_centers", "seed"},
                         "model");
  detail::read(j, "feature_dim", c.feature_dim, "model");
  detail::read(j, "n_layers", c.n_layers, "model");
  std::string mode = to_string(c.frame_mode), method = to_string(c.global_method);
  detail::read(j, "frame_mode", mode, "model");
  detail::read(j, "global_method", method, "model");
  c.frame_mode = parse_frame_mode(mode);
  c.global_method = parse_global_method(method);
  detail::read(j, "identity_global", c.identity_global, "model");
  detail::read(j, "cutoff", c.cutoff, "model");
  detail::read(j, "max_neighbors", c.max_neighbors, "model");
  detail::read(j, "n_centers", c.n_centers, "model");
  detail::read(j, "seed", c.seed, "model");
  c.validate();
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train",
           {{"epochs", c.train.epochs},
            {"lr", c.train.lr},
            {"lr_schedule", c.train.lr_schedule},
            {"lr_min_fraction", c.train.lr_min_fraction},
            {"batch_size", c.train.batch_size},
            {"standardize_targets", c.train.standardize_targets},
            {"seed", c.train.seed}}},
          {"dataset",
           {{"n_structures", c.dataset.n_structures},
            {"holdout_fraction", c.dataset.holdout_fraction},
            {"min_atoms", c.dataset.min_atoms},
            {"max_atoms", c.dataset.max_atoms},
            {"seed", c.dataset.seed}}},
          {"verify",
           {{"trials", c.verify.trials},
            {"tol", c.verify.tol},
            {"translation_range", c.verify.translation_range}}},
          {"demo",
           {{"angle", c.demo.angle},
            {"c", c.demo.c},
            {"motif_size", c.demo.motif_size},
            {"collapse_tol", c.demo.collapse_tol},
            {"separation_tol", c.demo.separation_tol},
            {"invariant_frame_tol", c.demo.invariant_frame_tol},
            {"equivariant_frame_tol", c.demo.equivariant_frame_tol}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::read;
  RunConfig c;
  detail::reject_unknown(j, {"model", "train", "dataset", "verify", "demo"}, "config");
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t,
                           {"epochs", "lr", "lr_schedule", "lr_min_fraction", "batch_size", "standardize_targets",
                            "seed"},
                           "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "lr", c.train.lr, "train");
    read(t, "lr_schedule", c.train.lr_schedule, "train");
    read(t, "lr_min_fraction", c.train.lr_min_fraction, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "standardize_targets", c.train.standardize_targets, "train");
    read(t, "seed", c.train.seed, "train");
    if (c.train.lr_schedule != "constant" && c.train.lr_schedule != "cosine")
      fail<InputError>("train.lr_schedule must be 'constant' or 'cosine'");
    if (c.train.batch_size < 1) fail<InputError>("train.batch_size must be at least 1");
    if (!(c.train.lr >= 0)) fail<InputError>("train.lr must be non-negative");
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown(d, {"n_structures", "holdout_fraction", "min_atoms", "max_atoms", "seed"}, "dataset");
    read(d, "n_structures", c.dataset.n_structures, "dataset");
    read(d, "holdout_fraction", c.dataset.holdout_fraction, "dataset");
    read(d, "min_atoms", c.dataset.min_atoms, "dataset");
    read(d, "max_atoms", c.dataset.max_atoms, "dataset");
    read(d, "seed", c.dataset.seed, "dataset");
    if (c.dataset.min_atoms < 1 || c.dataset.max_atoms < c.dataset.min_atoms)
      fail<InputError>("dataset atom count range is empty");
    if (!(c.dataset.holdout_fraction >= 0 && c.dataset.holdout_fraction < 1))
      fail<InputError>("dataset.holdout_fraction must lie in [0, 1)");
  }
  if (j.contains("verify")) {
    const auto& v = j.at("verify");
    detail::reject_unknown(v, {"trials", "tol", "translation_range"}, "verify");
    read(v, "trials", c.verify.trials, "verify");
    read(v, "tol", c.verify.tol, "verify");
    read(v, "translation_range", c.verify.translation_range, "verify");
  }
  if (j.contains("demo")) {
    const auto& d = j.at("demo");
    detail::reject_unknown(d,
                           {"angle", "c", "motif_size", "collapse_tol", "separation_tol", "invariant_frame_tol",
                            "equivariant_frame_tol"},
                           "demo");
    read(d, "angle", c.demo.angle, "demo");
    read(d, "c", c.demo.c, "demo");
    read(d, "motif_size", c.demo.motif_size, "demo");
    read(d, "collapse_tol", c.demo.collapse_tol, "demo");
    read(d, "separation_tol", c.demo.separation_tol, "demo");
    read(d, "invariant_frame_tol", c.demo.invariant_frame_tol, "demo");
    read(d, "equivariant_frame_tol", c.demo.equivariant_frame_tol, "demo");
  }
  return c;
}

}  // namespace spframe
