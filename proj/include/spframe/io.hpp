#pragma once

// JSON files: structures, checkpoints and reports.
//
// Structure schema:
//   {"lattice": [[x,y,z] x3],            one row per lattice vector, Å
//    "species": [Z, ...],
//    "frac_coords": [[f1,f2,f3], ...],
//    "symmetry_ops": [{"w_rot": [[int]x3], "w_trans": [t1,t2,t3]}, ...],   optional
//    "property": y}                                                         optional

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "crystal.hpp"
#include "error.hpp"
#include "network.hpp"
#include "params.hpp"

namespace spframe {

using nlohmann::json;

struct StructureFile {
  Structure structure;
  std::vector<SymmetryOp> symmetry_ops;
  std::optional<double> property;
  std::vector<std::string> warnings;
};

namespace detail {

// Coordinates this close outside [0, 1) are wrapped with a warning; anything
// further out is rejected.
constexpr double kWrapSlack = 1e-6;

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail<InputError>("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::size_t start = text.rfind('\n', e.byte ? e.byte - 1 : 0);
    start = start == std::string::npos ? 0 : start + 1;
    std::size_t stop = text.find('\n', start);
    const std::string context = text.substr(start, stop == std::string::npos ? std::string::npos : stop - start);
    fail<InputError>(origin + ":" + std::to_string(line) + ":" + std::to_string(col) +
                     ": malformed JSON\n  " + context);
  }
}

inline const json& require(const json& j, const char* key, const std::string& origin) {
  if (!j.is_object() || !j.contains(key)) fail<InputError>(origin + ": missing key '" + key + "'");
  return j.at(key);
}

inline Vec3 vec3_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) fail<InputError>(what + " must be an array of 3 numbers");
  Vec3 v{};
  for (int k = 0; k < 3; ++k) {
    if (!j[static_cast<std::size_t>(k)].is_number()) fail<InputError>(what + " must contain numbers");
    v[k] = j[static_cast<std::size_t>(k)].get<double>();
    if (!std::isfinite(v[k])) fail<InputError>(what + " is not finite");
  }
  return v;
}

}  // namespace detail

inline StructureFile structure_from_json(const json& j, const std::string& origin = "<json>") {
  using detail::require;
  const json& lat = require(j, "lattice", origin);
  if (!lat.is_array() || lat.size() != 3) fail<InputError>(origin + ": 'lattice' must be a 3x3 array");
  Mat3 rows{};
  for (std::size_t r = 0; r < 3; ++r) rows[r] = detail::vec3_from(lat[r], origin + ": lattice row " + std::to_string(r));
  std::optional<Lattice> lattice;
  try {
    lattice.emplace(Lattice::from_rows(rows));
  } catch (const InvalidLattice& e) {
    fail<InputError>(origin + ": invalid lattice: " + e.what());
  }

  const json& sp = require(j, "species", origin);
  const json& fc = require(j, "frac_coords", origin);
  if (!sp.is_array() || !fc.is_array()) fail<InputError>(origin + ": 'species' and 'frac_coords' must be arrays");
  if (sp.size() != fc.size())
    fail<InputError>(origin + ": 'species' has " + std::to_string(sp.size()) + " entries but 'frac_coords' has " +
                     std::to_string(fc.size()));
  std::vector<std::string> warnings;
  std::vector<int> species;
  std::vector<Vec3> frac;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (!sp[i].is_number_integer()) fail<InputError>(origin + ": species[" + std::to_string(i) + "] is not an integer");
    species.push_back(sp[i].get<int>());
    Vec3 f = detail::vec3_from(fc[i], origin + ": frac_coords[" + std::to_string(i) + "]");
    for (int k = 0; k < 3; ++k) {
      if (f[k] >= 0.0 && f[k] < 1.0) continue;
      if (f[k] < -detail::kWrapSlack || f[k] > 1.0 + detail::kWrapSlack)
        fail<InputError>(origin + ": frac_coords[" + std::to_string(i) + "] component " + std::to_string(k) +
                         " = " + std::to_string(f[k]) + " is outside [0, 1)");
      const double w = wrap_frac(f[k]);
      warnings.push_back("frac_coords[" + std::to_string(i) + "] component " + std::to_string(k) + " = " +
                         std::to_string(f[k]) + " wrapped to " + std::to_string(w));
      f[k] = w;
    }
    frac.push_back(f);
  }
  Structure s(*lattice, std::move(species), std::move(frac));

  std::vector<SymmetryOp> ops;
  if (j.contains("symmetry_ops")) {
    const json& jo = j.at("symmetry_ops");
    if (!jo.is_array()) fail<InputError>(origin + ": 'symmetry_ops' must be an array");
    for (std::size_t k = 0; k < jo.size(); ++k) {
      const std::string where = origin + ": symmetry_ops[" + std::to_string(k) + "]";
      const json& w = require(jo[k], "w_rot", where);
      if (!w.is_array() || w.size() != 3) fail<InputError>(where + ".w_rot must be 3x3");
      SymmetryOp op;
      for (std::size_t r = 0; r < 3; ++r) {
        if (!w[r].is_array() || w[r].size() != 3) fail<InputError>(where + ".w_rot must be 3x3");
        for (std::size_t c = 0; c < 3; ++c) {
          if (!w[r][c].is_number_integer()) fail<InputError>(where + ".w_rot must hold integers");
          op.w_rot[r][c] = w[r][c].get<int>();
        }
      }
      op.w_trans = detail::vec3_from(require(jo[k], "w_trans", where), where + ".w_trans");
      try {
        validate(op, s.lattice());
      } catch (const InvalidOp& e) {
        fail<InputError>(where + ": " + e.what());
      }
      ops.push_back(op);
    }
  }
  std::optional<double> property;
  if (j.contains("property")) {
    if (!j.at("property").is_number()) fail<InputError>(origin + ": 'property' must be a number");
    property = j.at("property").get<double>();
  }
  return {std::move(s), std::move(ops), property, std::move(warnings)};
}

inline StructureFile load_structure(const std::string& path) {
  return structure_from_json(detail::parse_json_text(detail::read_text(path), path), path);
}

inline json to_json(const Structure& s) {
  json lattice = json::array();
  for (int k = 0; k < 3; ++k) {
    const Vec3 v = s.lattice().vector(k);
    lattice.push_back({v[0], v[1], v[2]});
  }
  json frac = json::array();
  for (const auto& f : s.frac()) frac.push_back({f[0], f[1], f[2]});
  return {{"lattice", lattice}, {"species", s.species()}, {"frac_coords", frac}};
}

inline json to_json(const SymmetryOp& op) {
  json w = json::array();
  for (const auto& row : op.w_rot) w.push_back({row[0], row[1], row[2]});
  return {{"w_rot", w}, {"w_trans", {op.w_trans[0], op.w_trans[1], op.w_trans[2]}}};
}

inline json to_json(const StructureFile& f) {
  json j = to_json(f.structure);
  if (!f.symmetry_ops.empty()) {
    json ops = json::array();
    for (const auto& op : f.symmetry_ops) ops.push_back(to_json(op));
    j["symmetry_ops"] = ops;
  }
  if (f.property) j["property"] = *f.property;
  return j;
}

inline void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) fail<InputError>("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline void save_structure(const StructureFile& f, const std::string& path) { write_json(to_json(f), path); }

// ---------------------------------------------------------------------------
// Checkpoints

constexpr const char* kCheckpointFormat = "spframe-checkpoint";
constexpr int kCheckpointVersion = 1;

inline json checkpoint_json(const ModelConfig& c, const ParameterStore& p) {
  json params = json::object();
  for (const auto& [name, t] : p.all()) params[name] = {{"shape", t.shape()}, {"data", t.data()}};
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"config", to_json(c)},
          {"target_mean", p.target_mean}, {"target_scale", p.target_scale}, {"params", params}};
}

inline void save_checkpoint(const ModelConfig& c, const ParameterStore& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail<InputError>("cannot write '" + path + "'");
  out << checkpoint_json(c, p).dump() << '\n';
}

struct Checkpoint {
  ModelConfig config;
  ParameterStore params;
};

inline Checkpoint checkpoint_from_json(const json& j, const std::string& origin) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
    fail<InputError>(origin + ": not a checkpoint file");
  if (j.value("version", -1) != kCheckpointVersion)
    fail<InputError>(origin + ": unsupported checkpoint version");
  try {
    Checkpoint ck{model_config_from_json(j.at("config")), {}};
    const ParameterStore reference = init_parameters(ck.config);
    for (const auto& [name, entry] : j.at("params").items()) {
      Tensor t(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>());
      if (!reference.contains(name)) fail<InputError>(origin + ": unexpected parameter '" + name + "'");
      if (reference.at(name).shape() != t.shape())
        fail<InputError>(origin + ": parameter '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                         shape_str(reference.at(name).shape()));
      ck.params.add(name, std::move(t));
    }
    for (const auto& [name, t] : reference.all())
      if (!ck.params.contains(name)) fail<InputError>(origin + ": missing parameter '" + name + "'");
    ck.params.target_mean = j.at("target_mean").get<double>();
    ck.params.target_scale = j.at("target_scale").get<double>();
    return ck;
  } catch (const json::exception& e) {
    fail<InputError>(origin + ": malformed checkpoint: " + e.what());
  } catch (const DimensionError& e) {
    fail<InputError>(origin + ": malformed checkpoint: " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return checkpoint_from_json(detail::parse_json_text(detail::read_text(path), path), path);
}

inline RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(detail::parse_json_text(detail::read_text(path), path));
}

// ---------------------------------------------------------------------------
// Reports

struct Report {
  std::string command;
  json config = json::object();
  json metrics = json::object();
  bool pass = true;
  std::vector<std::string> diagnostics;

  // Records a named check; the report passes only if every check does.
  void check(const std::string& name, bool ok) {
    metrics["checks"][name] = ok;
    pass = pass && ok;
  }

  json to_json() const {
    return {{"command", command}, {"config", config}, {"metrics", metrics}, {"pass", pass},
            {"diagnostics", diagnostics}};
  }
};

inline void write_report(const Report& r, const std::string& path) { write_json(r.to_json(), path); }

}  // namespace spframe
