#pragma once

// Verification suites, dataset handling, training and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "config.hpp"
#include "crystal.hpp"
#include "frames.hpp"
#include "graph.hpp"
#include "io.hpp"
#include "network.hpp"
#include "params.hpp"
#include "synthetic.hpp"

namespace spframe {

inline RigidMotion random_rigid_motion(std::mt19937_64& rng, double translation_range) {
  RigidMotion g = random_rotation(rng());
  std::uniform_real_distribution<double> t(-translation_range, translation_range);
  g.translation = {t(rng), t(rng), t(rng)};
  return g;
}

inline void add_diagnostics(Report& r, const ForwardDiagnostics& d) {
  r.metrics["diagnostics"] = {{"quaternion_clamps", d.quaternion_clamps},
                              {"gs_fallbacks", d.gs_fallbacks},
                              {"gs_fallback_recovered", d.gs_fallback_recovered},
                              {"gs_identity_frames", d.gs_identity_frames},
                              {"pca_fallbacks", d.pca_fallbacks}};
  if (d.gs_fallbacks)
    r.diagnostics.push_back(std::to_string(d.gs_fallbacks) +
                            " atom frame(s) took the angular-information fallback, " +
                            std::to_string(d.gs_identity_frames) + " ended with an identity frame");
  if (d.quaternion_clamps)
    r.diagnostics.push_back(std::to_string(d.quaternion_clamps) + " quaternion(s) clamped to (1,0,0,0)");
  if (d.pca_fallbacks) r.diagnostics.push_back("pca global frame degenerate; qr used instead");
}

// ---------------------------------------------------------------------------
// Invariance

inline Report verify_invariance(const Structure& s, const ModelConfig& c, const ParameterStore& p,
                                const VerifyConfig& v, std::uint64_t seed) {
  if (v.trials < 1) fail<InputError>("verify needs at least one trial");
  Report r;
  r.command = "verify";
  const Evaluation base = evaluate(s, c, p);
  ForwardDiagnostics diag = base.diagnostics;
  std::mt19937_64 rng(seed);
  double max_dev = 0.0, sum_dev = 0.0;
  for (std::size_t t = 0; t < v.trials; ++t) {
    const RigidMotion g = random_rigid_motion(rng, v.translation_range);
    const Evaluation moved = evaluate(apply_rigid_motion(s, g), c, p);
    diag += moved.diagnostics;
    const double dev = std::abs(moved.prediction - base.prediction) / (std::abs(base.prediction) + 1e-12);
    max_dev = std::max(max_dev, dev);
    sum_dev += dev;
  }
  r.metrics["prediction"] = base.prediction;
  r.metrics["trials"] = v.trials;
  r.metrics["tol"] = v.tol;
  r.metrics["max_relative_deviation"] = max_dev;
  r.metrics["mean_relative_deviation"] = sum_dev / static_cast<double>(v.trials);
  r.check("invariance", max_dev < v.tol);
  add_diagnostics(r, diag);
  return r;
}

// Number of classes under single-linkage closure of "max-norm distance < tol".
inline std::size_t count_distinct_embeddings(const Tensor& emb, double tol) {
  if (!(tol > 0)) fail<ContractError>("tolerance must be positive");
  const std::size_t n = emb.rows(), d = emb.cols();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) dist = std::max(dist, std::abs(emb[i * d + k] - emb[j * d + k]));
      if (dist < tol) parent[find(i)] = find(j);
    }
  std::size_t classes = 0;
  for (std::size_t i = 0; i < n; ++i) classes += find(i) == i;
  return classes;
}

inline double row_distance(const Tensor& emb, std::size_t i, std::size_t j) {
  const std::size_t d = emb.cols();
  double dist = 0.0;
  for (std::size_t k = 0; k < d; ++k) dist = std::max(dist, std::abs(emb[i * d + k] - emb[j * d + k]));
  return dist;
}

// Sorted (species, distance) pairs of the edges entering atom i.
inline std::vector<std::pair<int, double>> neighbourhood_signature(const PeriodicGraph& g, std::size_t i) {
  std::vector<std::pair<int, double>> sig;
  for (std::size_t e = g.begin(i); e < g.end(i); ++e)
    sig.emplace_back(g.structure().species()[g.edges()[e].src], g.edges()[e].distance);
  std::sort(sig.begin(), sig.end());
  return sig;
}

// ---------------------------------------------------------------------------
// Symmetry demonstration

inline Report symmetry_demo(const RunConfig& cfg, std::uint64_t seed) {
  Report r;
  r.command = "demo-symmetry";
  const DemoConfig& dc = cfg.demo;
  const StructureFile sf = generate_screw_structure(dc.angle, dc.c, dc.motif_size, seed);
  const Structure& s = sf.structure;
  const auto orb = orbits(s, sf.symmetry_ops);
  const std::size_t n = s.size();
  std::size_t merged = 0;
  for (const auto& o : orb) merged += o.size() - 1;

  // For each orbit member q ≠ p (p = first member), the op taking p to q.
  struct Related {
    std::size_t p, q;
    Mat3 rotation;
  };
  std::vector<Related> related;
  for (const auto& o : orb)
    for (std::size_t k = 1; k < o.size(); ++k)
      for (const auto& op : sf.symmetry_ops)
        if (find_atom(s, spframe::apply(op, s.frac()[o[0]]), 1e-5) == static_cast<long>(o[k])) {
          related.push_back({o[0], o[k], cartesian_rotation(op, s.lattice())});
          break;
        }

  const PeriodicGraph graph = build_graph(s, cfg.model.cutoff, cfg.model.max_neighbors);
  double premise = 0.0;
  bool premise_ok = true;
  for (const auto& rel : related) {
    const auto a = neighbourhood_signature(graph, rel.p), b = neighbourhood_signature(graph, rel.q);
    if (a.size() != b.size()) {
      premise_ok = false;
      continue;
    }
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (a[k].first != b[k].first) premise_ok = false;
      premise = std::max(premise, std::abs(a[k].second - b[k].second));
    }
  }
  premise_ok = premise_ok && premise < 1e-8;

  ModelConfig eq = cfg.model;
  eq.frame_mode = FrameMode::local_gs_equivariant;
  ModelConfig sp = cfg.model;
  sp.frame_mode = FrameMode::spframe_quaternion;
  const Evaluation ee = evaluate(s, eq, init_parameters(eq));
  const Evaluation es = evaluate(s, sp, init_parameters(sp));

  double eq_frame_dev = 0.0, inv_frame_dev = 0.0, collapse = 0.0, separation = INFINITY;
  for (const auto& rel : related) {
    for (const auto& layer : ee.frames)
      eq_frame_dev = std::max(eq_frame_dev, max_abs_diff(layer[rel.q].axes(), rel.rotation * layer[rel.p].axes()));
    inv_frame_dev = std::max(inv_frame_dev, max_abs_diff(es.invariant_frames.front()[rel.q].matrix(),
                                                         es.invariant_frames.front()[rel.p].matrix()));
    collapse = std::max(collapse, row_distance(ee.embeddings, rel.p, rel.q));
    separation = std::min(separation, row_distance(es.embeddings, rel.p, rel.q));
  }
  const std::size_t count_eq = count_distinct_embeddings(ee.embeddings, 1e-6);
  const std::size_t count_sp = count_distinct_embeddings(es.embeddings, 1e-6);

  r.metrics["atoms"] = n;
  r.metrics["orbits"] = orb.size();
  r.metrics["related_pairs"] = related.size();
  r.metrics["neighbourhood_premise_deviation"] = premise;
  r.metrics["equivariant_frame_relation_deviation"] = eq_frame_dev;
  r.metrics["invariant_frame_deviation"] = inv_frame_dev;
  r.metrics["equivariant_max_pair_distance"] = collapse;
  r.metrics["spframe_min_pair_distance"] = separation;
  r.metrics["distinct_embeddings_equivariant"] = count_eq;
  r.metrics["distinct_embeddings_spframe"] = count_sp;
  r.metrics["expected_distinct_equivariant"] = n - merged;
  r.metrics["expected_distinct_spframe"] = n;
  r.config = {{"seed", seed}, {"angle", dc.angle}, {"c", dc.c}, {"motif_size", dc.motif_size}};

  r.check("neighbourhood_premise", premise_ok);
  r.check("equivariant_frames_related", eq_frame_dev < dc.equivariant_frame_tol);
  r.check("invariant_frames_equal", inv_frame_dev < dc.invariant_frame_tol);
  r.check("equivariant_collapse", collapse < dc.collapse_tol);
  r.check("spframe_separation", separation > dc.separation_tol);
  r.check("distinct_counts", count_eq == n - merged && count_sp == n);
  if (separation > dc.separation_tol && separation < 10 * dc.separation_tol)
    r.diagnostics.push_back("separation margin is thin: min pair distance " + std::to_string(separation) +
                            " against threshold " + std::to_string(dc.separation_tol));
  ForwardDiagnostics diag = ee.diagnostics;
  diag += es.diagnostics;
  add_diagnostics(r, diag);
  return r;
}

// ---------------------------------------------------------------------------
// Gradient check of the full network

inline GradCheckReport network_grad_check(const Structure& s, const ModelConfig& c, const ParameterStore& p,
                                          const GradCheckOptions& opt) {
  const PreparedInput in = prepare(s, c);
  Tape tape;
  const ForwardResult r = forward(tape, in, c, p);
  return grad_check(tape, r.output, opt);
}

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  std::vector<StructureFile> items;
  std::vector<std::string> files;
  std::vector<std::size_t> train, holdout;
};

constexpr const char* kManifestFormat = "spframe-dataset";

inline Dataset make_dataset(const std::string& dir, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const DatasetConfig& dc = cfg.dataset;
  if (dc.n_structures < 2) fail<InputError>("dataset needs at least two structures");
  std::mt19937_64 rng(dc.seed);
  RandomStructureOptions opt;
  opt.min_atoms = dc.min_atoms;
  opt.max_atoms = dc.max_atoms;
  Dataset ds;
  for (std::size_t k = 0; k < dc.n_structures; ++k) {
    Structure s = random_structure(rng, opt);
    const double y = synthetic_target(s, cfg.model.cutoff, cfg.model.max_neighbors);
    char name[32];
    std::snprintf(name, sizeof name, "s%04zu.json", k);
    StructureFile sf{std::move(s), {}, y, {}};
    save_structure(sf, (fs::path(dir) / name).string());
    ds.items.push_back(std::move(sf));
    ds.files.push_back(name);
  }
  std::vector<std::size_t> order(dc.n_structures);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = static_cast<std::size_t>(std::round(dc.holdout_fraction * static_cast<double>(order.size())));
  ds.holdout.assign(order.begin(), order.begin() + static_cast<long>(n_hold));
  ds.train.assign(order.begin() + static_cast<long>(n_hold), order.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.holdout.begin(), ds.holdout.end());

  json entries = json::array();
  std::vector<std::string> split(ds.items.size(), "train");
  for (std::size_t i : ds.holdout) split[i] = "holdout";
  for (std::size_t i = 0; i < ds.items.size(); ++i) entries.push_back({{"file", ds.files[i]}, {"split", split[i]}});
  write_json({{"format", kManifestFormat},
              {"version", 1},
              {"seed", dc.seed},
              {"cutoff", cfg.model.cutoff},
              {"max_neighbors", cfg.model.max_neighbors},
              {"entries", entries}},
             (fs::path(dir) / "manifest.json").string());
  return ds;
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  const json m = detail::parse_json_text(detail::read_text(manifest_path), manifest_path);
  if (!m.is_object() || m.value("format", "") != kManifestFormat)
    fail<InputError>(manifest_path + ": not a dataset manifest");
  Dataset ds;
  try {
    for (const auto& e : m.at("entries")) {
      const std::string file = e.at("file").get<std::string>();
      const std::string split = e.at("split").get<std::string>();
      StructureFile sf = load_structure((fs::path(dir) / file).string());
      if (!sf.property) fail<InputError>(file + ": dataset structures need a 'property'");
      const std::size_t idx = ds.items.size();
      if (split == "train") {
        ds.train.push_back(idx);
      } else if (split == "holdout") {
        ds.holdout.push_back(idx);
      } else {
        fail<InputError>(file + ": unknown split '" + split + "'");
      }
      ds.items.push_back(std::move(sf));
      ds.files.push_back(file);
    }
  } catch (const json::exception& e) {
    fail<InputError>(manifest_path + ": " + e.what());
  }
  if (ds.items.empty()) fail<InputError>(manifest_path + ": dataset is empty");
  return ds;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch;
  double train_loss;
  double holdout_mae;
};

struct TrainResult {
  ParameterStore params;
  std::vector<EpochRecord> curve;  // row 0: the untrained model
  double initial_train_loss = 0.0;
  double final_train_mae = 0.0;
  double holdout_mae = 0.0;
  double baseline_holdout_mae = 0.0;
  Report report;
};

inline double mean_absolute_error(const std::vector<PreparedInput>& inputs, const std::vector<double>& targets,
                                  const std::vector<std::size_t>& idx, const ModelConfig& c, const ParameterStore& p) {
  if (idx.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i : idx) s += std::abs(evaluate(inputs[i], c, p).prediction - targets[i]);
  return s / static_cast<double>(idx.size());
}

// Mean absolute deviation of the targets about their own mean.
inline double mean_predictor_mae(const std::vector<double>& targets, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  double mean = 0.0;
  for (std::size_t i : idx) mean += targets[i];
  mean /= static_cast<double>(idx.size());
  double s = 0.0;
  for (std::size_t i : idx) s += std::abs(targets[i] - mean);
  return s / static_cast<double>(idx.size());
}

class Adam {
 public:
  explicit Adam(const ParameterStore& p, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& [name, t] : p.all()) {
      m_.emplace(name, Tensor(t.shape()));
      v_.emplace(name, Tensor(t.shape()));
    }
  }

  void step(ParameterStore& p, const GradientMap& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [name, w] : p.all()) {
      auto g = grads.find(name);
      if (g == grads.end()) continue;
      Tensor& m = m_.at(name);
      Tensor& v = v_.at(name);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g->second[i];
        m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
        v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

inline double scheduled_lr(const TrainConfig& t, std::size_t epoch) {
  if (t.lr_schedule == "constant" || t.epochs <= 1) return t.lr;
  const double progress = static_cast<double>(epoch) / static_cast<double>(t.epochs - 1);
  const double floor = t.lr_min_fraction * t.lr;
  return floor + 0.5 * (t.lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

// L1 regression with Adam. The loss is taken on standardized targets; every
// reported number is in target units.
inline TrainResult train(const Dataset& ds, const RunConfig& cfg, const std::string& loss_csv = "") {
  const ModelConfig& mc = cfg.model;
  const TrainConfig& tc = cfg.train;
  if (ds.train.empty()) fail<InputError>("dataset has no training structures");
  std::vector<PreparedInput> inputs;
  std::vector<double> targets;
  for (const auto& it : ds.items) {
    inputs.push_back(prepare(it.structure, mc));
    targets.push_back(*it.property);
  }

  TrainResult res;
  res.params = init_parameters(mc);
  ParameterStore& p = res.params;
  if (tc.standardize_targets) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i : ds.train) mean += targets[i];
    mean /= static_cast<double>(ds.train.size());
    for (std::size_t i : ds.train) var += (targets[i] - mean) * (targets[i] - mean);
    var /= static_cast<double>(ds.train.size());
    p.target_mean = mean;
    p.target_scale = var > 0 ? std::sqrt(var) : 1.0;
  }

  std::ofstream csv;
  if (!loss_csv.empty()) {
    csv.open(loss_csv);
    if (!csv) fail<InputError>("cannot write '" + loss_csv + "'");
    csv << "epoch,train_loss,holdout_mae\n";
    csv.precision(17);
  }
  auto record = [&](std::size_t epoch, double train_loss, double hold) {
    res.curve.push_back({epoch, train_loss, hold});
    if (csv) csv << epoch << ',' << train_loss << ',' << hold << '\n';
  };

  res.initial_train_loss = mean_absolute_error(inputs, targets, ds.train, mc, p);
  record(0, res.initial_train_loss, mean_absolute_error(inputs, targets, ds.holdout, mc, p));

  Adam adam(p);
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order = ds.train;
  ForwardDiagnostics diag;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = scheduled_lr(tc, epoch - 1);
    double running = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      GradientMap total;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        Tape tape;
        const ForwardResult r = forward(tape, inputs[i], mc, p);
        diag += r.diagnostics;
        const double y = (targets[i] - p.target_mean) / p.target_scale;
        Var loss = abs(sub(r.output, tape.constant(Tensor({1, 1}, y))));
        loss = reshape(loss, {1});
        running += loss.value().item() * p.target_scale;
        if (!std::isfinite(running)) fail<ContractError>("training loss became non-finite at epoch " + std::to_string(epoch));
        for (auto& [name, g] : tape.backward(loss)) {
          auto it = total.find(name);
          if (it == total.end()) {
            total.emplace(name, scale(g, inv_batch));
          } else {
            for (std::size_t q = 0; q < g.size(); ++q) it->second[q] += inv_batch * g[q];
          }
        }
      }
      adam.step(p, total, lr);
    }
    record(epoch, running / static_cast<double>(order.size()),
           mean_absolute_error(inputs, targets, ds.holdout, mc, p));
  }

  res.final_train_mae = mean_absolute_error(inputs, targets, ds.train, mc, p);
  res.holdout_mae = mean_absolute_error(inputs, targets, ds.holdout, mc, p);
  res.baseline_holdout_mae = mean_predictor_mae(targets, ds.holdout);
  double train_mean = 0.0;
  for (std::size_t i : ds.train) train_mean += targets[i];
  train_mean /= static_cast<double>(ds.train.size());
  double baseline_train_mean = 0.0;
  for (std::size_t i : ds.holdout) baseline_train_mean += std::abs(targets[i] - train_mean);
  if (!ds.holdout.empty()) baseline_train_mean /= static_cast<double>(ds.holdout.size());

  Report& r = res.report;
  r.command = "train";
  r.config = to_json(cfg);
  r.metrics["initial_train_loss"] = res.initial_train_loss;
  r.metrics["final_epoch_running_loss"] = res.curve.back().train_loss;
  r.metrics["final_train_mae"] = res.final_train_mae;
  r.metrics["holdout_mae"] = res.holdout_mae;
  r.metrics["baseline_holdout_mae"] = res.baseline_holdout_mae;
  r.metrics["baseline_holdout_mae_train_mean"] = baseline_train_mean;
  r.metrics["train_size"] = ds.train.size();
  r.metrics["holdout_size"] = ds.holdout.size();
  json curve = json::array();
  for (const auto& e : res.curve) curve.push_back({e.epoch, e.train_loss, e.holdout_mae});
  r.metrics["loss_curve"] = curve;
  if (tc.lr > 0) {
    r.check("train_loss_reduced", res.final_train_mae < 0.2 * res.initial_train_loss);
    if (!ds.holdout.empty())
      r.check("holdout_beats_baseline",
              res.holdout_mae < std::min(res.baseline_holdout_mae, baseline_train_mean));
  }
  add_diagnostics(r, diag);
  return res;
}

// A checkpoint can only be evaluated under the model settings it was trained
// with; the init seed is the one field allowed to differ.
inline void require_matching_config(const ModelConfig& checkpoint, const ModelConfig& requested) {
  json a = to_json(checkpoint), b = to_json(requested);
  a.erase("seed");
  b.erase("seed");
  if (a != b)
    fail<InputError>("config does not match checkpoint: checkpoint has " + a.dump() + ", config has " + b.dump());
}

inline Report evaluate_mae(const Dataset& ds, const Checkpoint& ck) {
  std::vector<PreparedInput> inputs;
  std::vector<double> targets;
  for (const auto& it : ds.items) {
    inputs.push_back(prepare(it.structure, ck.config));
    targets.push_back(*it.property);
  }
  std::vector<std::size_t> all(ds.items.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::vector<std::size_t>& scored = ds.holdout.empty() ? all : ds.holdout;

  Report r;
  r.command = "eval";
  r.config = to_json(ck.config);
  r.metrics["mae"] = mean_absolute_error(inputs, targets, all, ck.config, ck.params);
  r.metrics["baseline_mae"] = mean_predictor_mae(targets, all);
  r.metrics["train_mae"] = mean_absolute_error(inputs, targets, ds.train, ck.config, ck.params);
  const double scored_mae = mean_absolute_error(inputs, targets, scored, ck.config, ck.params);
  const double scored_base = mean_predictor_mae(targets, scored);
  r.metrics["holdout_mae"] = scored_mae;
  r.metrics["holdout_baseline_mae"] = scored_base;
  r.metrics["structures"] = ds.items.size();
  r.check("beats_mean_predictor", scored_mae < scored_base || scored_mae == 0.0);
  return r;
}

}  // namespace spframe
