// spframe-lab: command line front end for graphs, frames, the invariance and
// symmetry checks, training and evaluation.
//
// Exit codes: 0 all checks passed, 1 a check failed, 2 bad input.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <spframe/spframe.hpp>

namespace fs = std::filesystem;
using namespace spframe;

namespace {

struct Options {
  std::string input;
  std::string config;
  std::string out = "-";
  std::string checkpoint;
  std::string frame_mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<double> tol;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
};

RunConfig run_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (!o.frame_mode.empty()) c.model.frame_mode = parse_frame_mode(o.frame_mode);
  if (o.trials) c.verify.trials = *o.trials;
  if (o.tol) c.verify.tol = *o.tol;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.lr) {
    if (!(*o.lr >= 0)) fail<InputError>("--lr must be non-negative");
    c.train.lr = *o.lr;
  }
  return c;
}

StructureFile input_structure(const Options& o) {
  if (o.input.empty()) fail<InputError>("--input is required");
  StructureFile f = load_structure(o.input);
  for (const auto& w : f.warnings) std::cerr << "warning: " << w << '\n';
  return f;
}

json matrix_json(const Mat3& m) {
  return {{m[0][0], m[0][1], m[0][2]}, {m[1][0], m[1][1], m[1][2]}, {m[2][0], m[2][1], m[2][2]}};
}

json frames_json(const std::vector<std::vector<Frame>>& layers) {
  json out = json::array();
  for (const auto& layer : layers) {
    json l = json::array();
    for (const auto& f : layer) l.push_back(matrix_json(f.matrix()));
    out.push_back(l);
  }
  return out;
}

// Model weights: a checkpoint when given, otherwise the seeded initialization.
std::pair<ModelConfig, ParameterStore> model_weights(const Options& o, const RunConfig& c) {
  if (o.checkpoint.empty()) return {c.model, init_parameters(c.model)};
  Checkpoint ck = load_checkpoint(o.checkpoint);
  if (!o.config.empty() || !o.frame_mode.empty()) require_matching_config(ck.config, c.model);
  return {ck.config, std::move(ck.params)};
}

int finish(const Report& r, const Options& o) {
  write_report(r, o.out);
  return r.pass ? 0 : 1;
}

int cmd_build_graph(const Options& o) {
  const RunConfig c = run_config(o);
  const StructureFile f = input_structure(o);
  const PeriodicGraph g = build_graph(f.structure, c.model.cutoff, c.model.max_neighbors);
  Report r;
  r.command = "build-graph";
  r.config = {{"cutoff", c.model.cutoff}, {"max_neighbors", c.model.max_neighbors}};
  json edges = json::array();
  for (const auto& e : g.edges())
    edges.push_back({{"src", e.src},
                     {"dst", e.dst},
                     {"image", e.image},
                     {"distance", e.distance},
                     {"direction", {e.direction[0], e.direction[1], e.direction[2]}}});
  r.metrics["num_atoms"] = g.num_atoms();
  r.metrics["num_edges"] = g.num_edges();
  json degree = json::array();
  for (std::size_t i = 0; i < g.num_atoms(); ++i) degree.push_back(g.degree(i));
  r.metrics["degree"] = degree;
  r.metrics["edges"] = edges;
  r.diagnostics = f.warnings;
  return finish(r, o);
}

int cmd_frames(const Options& o) {
  const RunConfig c = run_config(o);
  const StructureFile f = input_structure(o);
  const auto [model, params] = model_weights(o, c);
  const PreparedInput in = prepare(f.structure, model);
  const Evaluation e = evaluate(in, model, params);
  Report r;
  r.command = "frames";
  r.config = to_json(model);
  r.metrics["global_frame"] = matrix_json(in.global.matrix());
  r.metrics["frames"] = frames_json(e.frames);
  if (!e.invariant_frames.empty()) r.metrics["invariant_frames"] = frames_json(e.invariant_frames);
  r.metrics["prediction"] = e.prediction;
  r.diagnostics = f.warnings;
  add_diagnostics(r, e.diagnostics);
  return finish(r, o);
}

int cmd_verify(const Options& o) {
  const RunConfig c = run_config(o);
  const StructureFile f = input_structure(o);
  const auto [model, params] = model_weights(o, c);
  Report r = verify_invariance(f.structure, model, params, c.verify, o.seed.value_or(0));
  r.config = to_json(c);
  r.config["model"] = to_json(model);
  r.config["seed"] = o.seed.value_or(0);
  return finish(r, o);
}

int cmd_demo(const Options& o) {
  const RunConfig c = run_config(o);
  return finish(symmetry_demo(c, o.seed.value_or(0)), o);
}

int cmd_make_dataset(const Options& o) {
  RunConfig c = run_config(o);
  if (o.seed) c.dataset.seed = *o.seed;
  if (o.out.empty() || o.out == "-") fail<InputError>("make-dataset needs --out <directory>");
  const Dataset ds = make_dataset(o.out, c);
  std::cout << "wrote " << ds.items.size() << " structures (" << ds.train.size() << " train, "
            << ds.holdout.size() << " holdout) to " << o.out << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig c = run_config(o);
  if (o.seed) c.train.seed = *o.seed;
  if (o.input.empty()) fail<InputError>("--input <dataset directory> is required");
  const Dataset ds = load_dataset(o.input);
  const fs::path dir = (o.out.empty() || o.out == "-") ? fs::current_path() : fs::path(o.out).parent_path();
  const std::string ckpt = o.checkpoint.empty() ? (dir / "checkpoint.json").string() : o.checkpoint;
  const TrainResult res = train(ds, c, (dir / "loss.csv").string());
  save_checkpoint(c.model, res.params, ckpt);
  Report r = res.report;
  r.metrics["checkpoint"] = ckpt;
  return finish(r, o);
}

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) fail<InputError>("--checkpoint is required");
  if (o.input.empty()) fail<InputError>("--input <dataset directory> is required");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  if (!o.config.empty() || !o.frame_mode.empty()) require_matching_config(ck.config, run_config(o).model);
  return finish(evaluate_mae(load_dataset(o.input), ck), o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spframe-lab: symmetry-preserving frames for crystal graphs"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool needs_input) {
    auto* in = sub->add_option("--input", o.input, "structure JSON or dataset directory");
    if (needs_input) in->required();
    sub->add_option("--config", o.config, "run config JSON");
    sub->add_option("--out", o.out, "report path ('-' for stdout)");
    sub->add_option("--seed", o.seed, "seed");
    sub->add_option("--frame-mode", o.frame_mode, "none, global-qr, global-polar, global-pca, local-gs-equivariant, "
                                                  "spframe-gs, spframe-quaternion");
  };

  struct Command {
    CLI::App* app;
    int (*run)(const Options&);
  };
  std::vector<Command> commands;

  auto* bg = app.add_subcommand("build-graph", "radius graph with periodic images");
  common(bg, true);
  commands.push_back({bg, cmd_build_graph});

  auto* fr = app.add_subcommand("frames", "per-atom frames of every layer");
  common(fr, true);
  fr->add_option("--checkpoint", o.checkpoint, "model weights");
  commands.push_back({fr, cmd_frames});

  auto* ve = app.add_subcommand("verify", "rigid-motion invariance of the prediction");
  common(ve, true);
  ve->add_option("--trials", o.trials, "number of random rigid motions");
  ve->add_option("--tol", o.tol, "relative deviation tolerance");
  ve->add_option("--checkpoint", o.checkpoint, "model weights");
  commands.push_back({ve, cmd_verify});

  auto* de = app.add_subcommand("demo-symmetry", "screw-axis orbit collapse vs separation");
  common(de, false);
  commands.push_back({de, cmd_demo});

  auto* md = app.add_subcommand("make-dataset", "synthetic dataset with a manifest");
  common(md, false);
  commands.push_back({md, cmd_make_dataset});

  auto* tr = app.add_subcommand("train", "L1 training with Adam");
  common(tr, true);
  tr->add_option("--epochs", o.epochs, "epochs");
  tr->add_option("--lr", o.lr, "learning rate");
  tr->add_option("--checkpoint", o.checkpoint, "checkpoint output path");
  commands.push_back({tr, cmd_train});

  auto* ev = app.add_subcommand("eval", "MAE against the mean-predictor baseline");
  common(ev, true);
  ev->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  commands.push_back({ev, cmd_eval});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (const auto& c : commands)
      if (c.app->parsed()) return c.run(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
