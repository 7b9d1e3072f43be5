#include <algorithm>
#include <numeric>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "generators.hpp"

using namespace spframe;

namespace {

ModelConfig small_config(FrameMode mode, std::size_t d = 16) {
  ModelConfig c;
  c.feature_dim = d;
  c.n_centers = 16;
  c.frame_mode = mode;
  return c;
}

// Two atoms 0.6 Å apart along x in a long cell: with cutoff 1.0 each atom sees
// exactly one neighbour, so any two-vector frame construction is collinear.
Structure single_neighbour() {
  return Structure(Lattice(Mat3{{{2, 0, 0}, {0, 6, 0}, {0, 0, 6}}}), {6, 8}, {{0, 0, 0}, {0.3, 0, 0}});
}

double relative_deviation(double a, double b) { return std::abs(a - b) / (std::abs(b) + 1e-12); }

Tensor run_transformer(const Structure& s, const ModelConfig& c, const ParameterStore& p) {
  const PreparedInput in = prepare(s, c);
  Tape tape;
  ParameterBinder P(tape, p);
  Var h = gather_rows(P("embed.atom"), in.species_row);
  Var edge = softplus(detail::linear(P, tape.constant(in.rbf), "embed.edge.w", "embed.edge.b"));
  return detail::transformer_layer(P, "layer0.attn.", h, edge, in).value();
}

}  // namespace

TEST(Embedding, RowsFollowSpecies) {
  const ModelConfig c = small_config(FrameMode::spframe_quaternion);
  const ParameterStore p = init_parameters(c);
  Tape tape;
  Var h = gather_rows(tape.constant(p.at("embed.atom")), {5, 5, 7});
  ASSERT_EQ(h.shape(), (Shape{3, c.feature_dim}));
  for (std::size_t k = 0; k < c.feature_dim; ++k) EXPECT_EQ(h.value().at(0, k), h.value().at(1, k));
  double diff = 0.0;
  for (std::size_t k = 0; k < c.feature_dim; ++k) diff += std::abs(h.value().at(0, k) - h.value().at(2, k));
  EXPECT_GT(diff, 0.0);
}

TEST(Prepare, RejectsUnsupportedSpecies) {
  const Structure s(Lattice(3.0 * identity3()), {0}, {{0, 0, 0}});
  EXPECT_THROW(prepare(s, ModelConfig{}), InputError);
  const Structure big(Lattice(3.0 * identity3()), {101}, {{0, 0, 0}});
  EXPECT_THROW(prepare(big, ModelConfig{}), InputError);
}

TEST(Prepare, PcaFallsBackOnCubicCell) {
  ModelConfig c = small_config(FrameMode::global_pca);
  const PreparedInput in = prepare(gen::simple_cubic(3.0), c);
  EXPECT_TRUE(in.pca_fell_back);
  EXPECT_EQ(in.global.matrix(), global_frame(Lattice(3.0 * identity3()), GlobalMethod::qr).matrix());
}

TEST(Transformer, PermutationEquivariance) {
  std::mt19937_64 rng(1);
  const ModelConfig c = small_config(FrameMode::spframe_quaternion);
  const ParameterStore p = init_parameters(c);
  for (int t = 0; t < 10; ++t) {
    const Structure s = gen::structure(rng, 3, 4);
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const Tensor a = run_transformer(s, c, p), b = run_transformer(s.permuted(order), c, p);
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t k = 0; k < c.feature_dim; ++k) EXPECT_NEAR(b.at(i, k), a.at(order[i], k), 1e-12);
  }
}

TEST(Transformer, RigidMotionInvariance) {
  std::mt19937_64 rng(2);
  const ModelConfig c = small_config(FrameMode::spframe_quaternion);
  const ParameterStore p = init_parameters(c);
  for (int t = 0; t < 10; ++t) {
    const Structure s = gen::structure(rng);
    const Tensor a = run_transformer(s, c, p), b = run_transformer(apply_rigid_motion(s, gen::rigid_motion(rng)), c, p);
    EXPECT_LT(max_abs_diff(a, b), 1e-10);
  }
}

TEST(Transformer, ZeroValueProjectionLeavesSoftplusOfInput) {
  const ModelConfig c = small_config(FrameMode::spframe_quaternion);
  ParameterStore p = init_parameters(c);
  p.at("layer0.attn.wv2") = Tensor(p.at("layer0.attn.wv2").shape());
  std::mt19937_64 rng(3);
  const Structure s = gen::structure(rng);
  const Tensor out = run_transformer(s, c, p);
  const PreparedInput in = prepare(s, c);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t k = 0; k < c.feature_dim; ++k)
      EXPECT_NEAR(out.at(i, k), softplus(p.at("embed.atom").at(in.species_row[i], k)), 1e-12);
}

// Closed form on the two-atom single-neighbour toy. With identity frames,
// W_in = I and all-ones tensor-product weights, each atom's contraction is
// Y(+x)·Y(−x)·fp_other + Y₀·fp_self = h₀ + h₁ because Y(+x)·Y(−x) = 1.
TEST(EquivariantUpdate, SingleNeighbourClosedForm) {
  ModelConfig c = small_config(FrameMode::none, 4);
  c.cutoff = 1.0;
  ParameterStore p = init_parameters(c);
  const std::size_t d = c.feature_dim;
  Tensor eye({d, d});
  for (std::size_t k = 0; k < d; ++k) eye.at(k, k) = 1.0;
  p.at("layer0.eq.win") = eye;
  p.at("layer0.eq.ws") = eye;
  p.at("layer0.eq.wtp") = Tensor({d, 9}, 1.0);
  p.at("layer0.eq.wres") = Tensor({d, d});
  const PreparedInput in = prepare(single_neighbour(), c);
  ASSERT_EQ(in.graph.num_edges(), 2u);

  Tape tape;
  ParameterBinder P(tape, p);
  std::mt19937_64 rng(4);
  const Tensor h0 = gen::tensor(rng, {2, d});
  Var out = detail::equivariant_update(P, "layer0.eq.", tape.constant(h0),
                                       tape.constant(detail::frame_rows(Frame::identity(), 2)), in);
  std::vector<double> s(d);
  for (std::size_t k = 0; k < d; ++k) s[k] = h0.at(0, k) + h0.at(1, k);
  double mean = 0.0, var = 0.0;
  for (double x : s) mean += x / static_cast<double>(d);
  for (double x : s) var += (x - mean) * (x - mean) / static_cast<double>(d);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double ln = (s[k] - mean) / std::sqrt(var + 1e-6);
      EXPECT_NEAR(out.value().at(i, k), softplus(softplus(ln)), 1e-12);
    }
}

TEST(QuaternionHead, FramesInvariantUnderRigidMotion) {
  std::mt19937_64 rng(5);
  const ModelConfig c = small_config(FrameMode::spframe_quaternion);
  const ParameterStore p = init_parameters(c);
  for (int t = 0; t < 10; ++t) {
    const Structure s = gen::structure(rng, 3, 4);
    const Evaluation a = evaluate(s, c, p);
    const Evaluation b = evaluate(apply_rigid_motion(s, gen::rigid_motion(rng)), c, p);
    for (std::size_t l = 0; l < c.n_layers; ++l)
      for (std::size_t i = 0; i < s.size(); ++i)
        EXPECT_LT(max_abs_diff(a.invariant_frames[l][i].matrix(), b.invariant_frames[l][i].matrix()), 1e-10);
    // Distinct environments get distinct frames.
    EXPECT_GT(max_abs_diff(a.invariant_frames[0][0].matrix(), a.invariant_frames[0][1].matrix()), 1e-6);
  }
}

TEST(QuaternionHead, DegenerateOutputIsClampedAndCounted) {
  const ModelConfig c = small_config(FrameMode::spframe_quaternion);
  ParameterStore p = init_parameters(c);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".quat.";
    p.at(pre + "wout") = Tensor(p.at(pre + "wout").shape());
    p.at(pre + "bout") = Tensor({4}, -200.0);
  }
  std::mt19937_64 rng(6);
  const Structure s = gen::structure(rng, 3, 3);
  const Evaluation e = evaluate(s, c, p);
  EXPECT_EQ(e.diagnostics.quaternion_clamps, 3u * c.n_layers);
  for (const Frame& f : e.invariant_frames[0]) EXPECT_EQ(f.matrix(), identity3());
  EXPECT_TRUE(std::isfinite(e.prediction));
}

TEST(GsHead, EquivariantFramesRotateWithStructure) {
  std::mt19937_64 rng(7);
  const ModelConfig c = small_config(FrameMode::local_gs_equivariant);
  const ParameterStore p = init_parameters(c);
  const Structure s = gen::structure(rng, 3, 4);
  const Evaluation a = evaluate(s, c, p);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const RigidMotion m = gen::rigid_motion(rng);
    const Evaluation b = evaluate(apply_rigid_motion(s, m), c, p);
    for (std::size_t l = 0; l < c.n_layers; ++l)
      for (std::size_t i = 0; i < s.size(); ++i)
        worst = std::max(worst, max_abs_diff(b.frames[l][i].axes(), m.rotation * a.frames[l][i].axes()));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(GsHead, SingleNeighbourTakesFallback) {
  ModelConfig c = small_config(FrameMode::local_gs_equivariant);
  c.cutoff = 1.0;
  const Evaluation e = evaluate(single_neighbour(), c, init_parameters(c));
  EXPECT_TRUE(std::isfinite(e.prediction));
  // One edge direction per atom: every layer's two vectors are collinear.
  EXPECT_EQ(e.diagnostics.gs_fallbacks, 2u * c.n_layers);
  EXPECT_EQ(e.diagnostics.gs_fallbacks, e.diagnostics.gs_fallback_recovered + e.diagnostics.gs_identity_frames);
  for (const auto& layer : e.frames)
    for (const Frame& f : layer) EXPECT_LT(orthogonality_error(f.matrix()), 1e-12);

  // Invariant vectors are not tied to the single direction.
  c.frame_mode = FrameMode::spframe_gs;
  EXPECT_TRUE(std::isfinite(evaluate(single_neighbour(), c, init_parameters(c)).prediction));
}

// Property: the prediction is invariant under rigid motions for every framed
// mode, and not for the unprotected one.
TEST(Forward, InvarianceAcrossModes) {
  std::mt19937_64 rng(8);
  const Structure s = gen::structure(rng, 4, 4);
  for (FrameMode mode : all_frame_modes()) {
    ModelConfig c = small_config(mode);
    if (mode == FrameMode::global_pca) c.global_method = GlobalMethod::pca;
    const ParameterStore p = init_parameters(c);
    const double base = evaluate(s, c, p).prediction;
    double worst = 0.0;
    for (int t = 0; t < 20; ++t)
      worst = std::max(worst, relative_deviation(evaluate(apply_rigid_motion(s, gen::rigid_motion(rng)), c, p).prediction, base));
    if (mode == FrameMode::none)
      EXPECT_GT(worst, 1e-6) << "unprotected mode should not be invariant";
    else
      EXPECT_LT(worst, 1e-9) << to_string(mode);
  }
}

TEST(Forward, PermutationInvariance) {
  std::mt19937_64 rng(9);
  for (FrameMode mode : {FrameMode::spframe_quaternion, FrameMode::local_gs_equivariant, FrameMode::spframe_gs}) {
    const ModelConfig c = small_config(mode);
    const ParameterStore p = init_parameters(c);
    const Structure s = gen::structure(rng, 4, 4);
    const Evaluation a = evaluate(s, c, p), b = evaluate(s.permuted({2, 0, 3, 1}), c, p);
    EXPECT_NEAR(a.prediction, b.prediction, 1e-12 * (1 + std::abs(a.prediction)));
  }
}

TEST(Forward, SingleAtomPoolingIsIdentity) {
  const ModelConfig c = small_config(FrameMode::global_qr);
  const ParameterStore p = init_parameters(c);
  const PreparedInput in = prepare(gen::simple_cubic(2.0), c);
  Tape tape;
  const ForwardResult r = forward(tape, in, c, p);
  auto C = [&](const char* name) { return tape.constant(p.at(name)); };
  Var hidden = softplus(add_bias(matmul(r.embeddings, C("readout.w1")), C("readout.b1")));
  EXPECT_EQ(add_bias(matmul(hidden, C("readout.w2")), C("readout.b2")).value().item(), r.output.value().item());
}

TEST(Forward, Deterministic) {
  std::mt19937_64 rng(10);
  const Structure s = gen::structure(rng, 4, 4);
  const ModelConfig c = small_config(FrameMode::spframe_quaternion);
  const ParameterStore p = init_parameters(c);
  const Evaluation a = evaluate(s, c, p), b = evaluate(s, c, p);
  EXPECT_EQ(a.prediction, b.prediction);
  EXPECT_EQ(a.embeddings.data(), b.embeddings.data());
}

TEST(Forward, IdentityGlobalFlagStillInvariant) {
  std::mt19937_64 rng(11);
  ModelConfig c = small_config(FrameMode::spframe_quaternion);
  c.identity_global = true;
  const ParameterStore p = init_parameters(c);
  const Structure s = gen::structure(rng, 3, 3);
  const double base = evaluate(s, c, p).prediction;
  // Invariant frames alone do not rotate with the structure, so the
  // canonicalized directions are not protected.
  double worst = 0.0;
  for (int t = 0; t < 5; ++t)
    worst = std::max(worst, relative_deviation(evaluate(apply_rigid_motion(s, gen::rigid_motion(rng)), c, p).prediction, base));
  EXPECT_GT(worst, 1e-6);
}

// Small-width full-network gradient check for every trainable mode.
TEST(Forward, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  const Structure s = gen::structure(rng, 3, 3);
  for (FrameMode mode : all_frame_modes()) {
    ModelConfig c = small_config(mode, 8);
    c.n_centers = 8;
    const ParameterStore p = init_parameters(c);
    GradCheckOptions opt;
    opt.max_entries_per_parameter = 6;
    const GradCheckReport r = network_grad_check(s, c, p, opt);
    EXPECT_TRUE(r.passed) << to_string(mode) << " max rel " << r.max_rel_error;
    EXPECT_GT(r.checked, 50u);
  }
}
