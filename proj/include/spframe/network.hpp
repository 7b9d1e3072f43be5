#pragma once

// Desk-scale frame-aware message-passing network. Every layer runs a
// node-wise transformer block, builds per-atom frames from the current
// features, and applies a spherical-harmonic update on frame-canonicalized
// edge directions. All computation is recorded on a Tape.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "crystal.hpp"
#include "error.hpp"
#include "frames.hpp"
#include "graph.hpp"
#include "kernels.hpp"
#include "params.hpp"
#include "tensor.hpp"

namespace spframe {

constexpr int kMaxAtomicNumber = 100;
constexpr std::size_t kAngleFeatures = 3;

enum class FrameMode {
  none,
  global_qr,
  global_polar,
  global_pca,
  local_gs_equivariant,
  spframe_gs,
  spframe_quaternion,
};

inline const std::vector<FrameMode>& all_frame_modes() {
  static const std::vector<FrameMode> modes{FrameMode::none,
                                            FrameMode::global_qr,
                                            FrameMode::global_polar,
                                            FrameMode::global_pca,
                                            FrameMode::local_gs_equivariant,
                                            FrameMode::spframe_gs,
                                            FrameMode::spframe_quaternion};
  return modes;
}

inline std::string to_string(FrameMode m) {
  switch (m) {
    case FrameMode::none: return "none";
    case FrameMode::global_qr: return "global-qr";
    case FrameMode::global_polar: return "global-polar";
    case FrameMode::global_pca: return "global-pca";
    case FrameMode::local_gs_equivariant: return "local-gs-equivariant";
    case FrameMode::spframe_gs: return "spframe-gs";
    case FrameMode::spframe_quaternion: return "spframe-quaternion";
  }
  return "?";
}

inline FrameMode parse_frame_mode(const std::string& s) {
  for (FrameMode m : all_frame_modes())
    if (to_string(m) == s) return m;
  fail<InputError>("unknown frame mode '" + s + "'");
}

inline bool uses_gs_head(FrameMode m) {
  return m == FrameMode::local_gs_equivariant || m == FrameMode::spframe_gs;
}

struct ModelConfig {
  std::size_t feature_dim = 64;
  std::size_t n_layers = 2;
  FrameMode frame_mode = FrameMode::spframe_quaternion;
  // Global frame used by the spframe modes.
  GlobalMethod global_method = GlobalMethod::qr;
  // Replace the global frame by the identity in the spframe modes.
  bool identity_global = false;
  double cutoff = 4.0;
  std::size_t max_neighbors = 12;
  std::size_t n_centers = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (feature_dim < 4) fail<InputError>("feature_dim must be at least 4");
    if (n_layers < 1) fail<InputError>("n_layers must be at least 1");
    if (!(cutoff > 0)) fail<InputError>("cutoff must be positive");
    if (max_neighbors < 1) fail<InputError>("max_neighbors must be at least 1");
    if (n_centers < 2) fail<InputError>("n_centers must be at least 2");
  }

  // Same architecture and parameter shapes.
  bool compatible_with(const ModelConfig& o) const {
    return feature_dim == o.feature_dim && n_layers == o.n_layers && frame_mode == o.frame_mode &&
           n_centers == o.n_centers;
  }
};

struct ForwardDiagnostics {
  std::size_t quaternion_clamps = 0;
  // Atoms whose Gram-Schmidt input was collinear on the first attempt.
  std::size_t gs_fallbacks = 0;
  std::size_t gs_fallback_recovered = 0;
  std::size_t gs_identity_frames = 0;
  // Global frame fell back from pca to qr.
  std::size_t pca_fallbacks = 0;

  ForwardDiagnostics& operator+=(const ForwardDiagnostics& o) {
    quaternion_clamps += o.quaternion_clamps;
    gs_fallbacks += o.gs_fallbacks;
    gs_fallback_recovered += o.gs_fallback_recovered;
    gs_identity_frames += o.gs_identity_frames;
    pca_fallbacks += o.pca_fallbacks;
    return *this;
  }
};

// Everything the forward pass needs that does not depend on the weights.
struct PreparedInput {
  PeriodicGraph graph;
  Tensor rbf;         // E × n_centers
  Tensor directions;  // E × 3
  Tensor inv_degree;  // n × 1
  std::vector<std::size_t> src, dst, species_row;
  Frame global;         // frame used by global-* and spframe modes
  Frame lattice_frame;  // QR frame, used by the angular fallback
  bool pca_fell_back = false;
};

namespace detail {

inline GlobalMethod global_method_for(const ModelConfig& c) {
  switch (c.frame_mode) {
    case FrameMode::global_qr: return GlobalMethod::qr;
    case FrameMode::global_polar: return GlobalMethod::polar;
    case FrameMode::global_pca: return GlobalMethod::pca;
    default: return c.global_method;
  }
}

}  // namespace detail

inline PreparedInput prepare(const Structure& s, const ModelConfig& c) {
  c.validate();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.species()[i] < 1 || s.species()[i] > kMaxAtomicNumber)
      fail<InputError>("atom " + std::to_string(i) + " has unsupported atomic number " +
                       std::to_string(s.species()[i]));
  PeriodicGraph g = build_graph(s, c.cutoff, c.max_neighbors);
  const std::size_t n = s.size();
  Tensor inv_degree({n, 1});
  for (std::size_t i = 0; i < n; ++i) inv_degree[i] = 1.0 / static_cast<double>(g.degree(i));
  std::vector<std::size_t> species_row(n);
  for (std::size_t i = 0; i < n; ++i) species_row[i] = static_cast<std::size_t>(s.species()[i] - 1);

  const Frame lattice_frame = global_frame(s.lattice(), GlobalMethod::qr);
  Frame global = lattice_frame;
  bool fell_back = false;
  const GlobalMethod method = detail::global_method_for(c);
  if (method != GlobalMethod::qr) {
    try {
      global = global_frame(s.lattice(), method);
    } catch (const DegenerateSpectrum&) {
      fell_back = true;
    }
  }
  Tensor rbf = rbf_features(g, c.n_centers, c.cutoff);
  Tensor dirs = direction_matrix(g);
  auto src = g.sources();
  auto dst = g.destinations();
  return PreparedInput{std::move(g),    std::move(rbf), std::move(dirs), std::move(inv_degree),
                       std::move(src),  std::move(dst), std::move(species_row), global,
                       lattice_frame,   fell_back};
}

namespace detail {

inline void add_message_block(ParameterStore& p, Initializer& init, const std::string& pre, std::size_t d,
                              std::size_t edge_dim, bool with_aggregate_norm) {
  // The key and value maps act on concatenations; they are stored split by
  // block so each part can be applied per atom before gathering onto edges.
  p.add(pre + "wq", init.weight(d, d));
  p.add(pre + "bq", Initializer::zeros(d));
  p.add(pre + "wk", init.weight(d, d));
  p.add(pre + "bk", Initializer::zeros(d));
  p.add(pre + "wk2.dst", init.weight(d, d, 2 * d));
  p.add(pre + "wk2.src", init.weight(d, d, 2 * d));
  p.add(pre + "bk2", Initializer::zeros(d));
  p.add(pre + "wv", init.weight(d, d));
  p.add(pre + "bv", Initializer::zeros(d));
  p.add(pre + "we", init.weight(edge_dim, d));
  p.add(pre + "wv1.dst", init.weight(d, d, 3 * d));
  p.add(pre + "wv1.src", init.weight(d, d, 3 * d));
  p.add(pre + "wv1.edge", init.weight(d, d, 3 * d));
  p.add(pre + "bv1", Initializer::zeros(d));
  p.add(pre + "wv2", init.weight(d, d));
  p.add(pre + "ln_a.g", Initializer::ones(d));
  p.add(pre + "ln_a.b", Initializer::zeros(d));
  if (with_aggregate_norm) {
    p.add(pre + "ln_m.g", Initializer::ones(d));
    p.add(pre + "ln_m.b", Initializer::zeros(d));
  }
}

inline std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l) + "."; }

}  // namespace detail

inline ParameterStore init_parameters(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.feature_dim;
  Initializer init(c.seed);
  ParameterStore p;
  p.add("embed.atom", init.normal(kMaxAtomicNumber, d, 1.0));
  p.add("embed.edge.w", init.weight(c.n_centers, d));
  p.add("embed.edge.b", Initializer::zeros(d));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = detail::layer_prefix(l);
    detail::add_message_block(p, init, pre + "attn.", d, d, true);
    if (c.frame_mode == FrameMode::spframe_quaternion) {
      detail::add_message_block(p, init, pre + "quat.", d, d, true);
      p.add(pre + "quat.wout", init.weight(d, 4));
      p.add(pre + "quat.bout", Initializer::zeros(4));
    }
    if (uses_gs_head(c.frame_mode)) {
      const std::size_t outs = c.frame_mode == FrameMode::local_gs_equivariant ? 2 : 6;
      detail::add_message_block(p, init, pre + "gs.", d, d + kAngleFeatures, false);
      p.add(pre + "gs.wphi", init.weight(d, outs));
      p.add(pre + "gs.bphi", Initializer::zeros(outs));
    }
    p.add(pre + "eq.win", init.weight(d, d));
    p.add(pre + "eq.wtp", init.normal(d, 9, 1.0));
    p.add(pre + "eq.ln.g", Initializer::ones(d));
    p.add(pre + "eq.ln.b", Initializer::zeros(d));
    p.add(pre + "eq.ws", init.weight(d, d));
    p.add(pre + "eq.bs", Initializer::zeros(d));
    p.add(pre + "eq.wres", init.weight(d, d));
  }
  p.add("readout.w1", init.weight(d, d));
  p.add("readout.b1", Initializer::zeros(d));
  p.add("readout.w2", init.weight(d, 1));
  p.add("readout.b2", Initializer::zeros(1));
  return p;
}

namespace detail {

inline Var linear(ParameterBinder& P, Var x, const std::string& w, const std::string& b) {
  return add_bias(matmul(x, P(w)), P(b));
}

// Per-edge attention messages msg_ij = sigmoid(LN(α_ij)) ∘ ξ_V(v_ij), with
//   α_ij = q_i ∘ softplus([k_i | k_j]·W_k2 + b) / √d
//   ξ_V  = softplus([v_i | v_j | e_ij·W_e]·W_v1 + b)·W_v2
inline Var message_block(ParameterBinder& P, const std::string& pre, Var h, Var edge_in,
                         const PreparedInput& in) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(h.cols()));
  Var q = linear(P, h, pre + "wq", pre + "bq");
  Var k = linear(P, h, pre + "wk", pre + "bk");
  Var v = linear(P, h, pre + "wv", pre + "bv");
  Var key = add(gather_rows(matmul(k, P(pre + "wk2.dst")), in.dst),
                gather_rows(matmul(k, P(pre + "wk2.src")), in.src));
  Var xi_k = softplus(add_bias(key, P(pre + "bk2")));
  Var alpha = scale(hadamard(gather_rows(q, in.dst), xi_k), inv_sqrt_d);
  Var value = add(add(gather_rows(matmul(v, P(pre + "wv1.dst")), in.dst),
                      gather_rows(matmul(v, P(pre + "wv1.src")), in.src)),
                  matmul(edge_in, matmul(P(pre + "we"), P(pre + "wv1.edge"))));
  Var xi_v = matmul(softplus(add_bias(value, P(pre + "bv1"))), P(pre + "wv2"));
  return hadamard(sigmoid(layer_norm(alpha, P(pre + "ln_a.g"), P(pre + "ln_a.b"))), xi_v);
}

// h + LN(Σ_j msg_ij)
inline Var aggregate(ParameterBinder& P, const std::string& pre, Var h, Var msg, const PreparedInput& in) {
  Var agg = segment_sum(msg, in.dst, h.rows());
  return add(h, layer_norm(agg, P(pre + "ln_m.g"), P(pre + "ln_m.b")));
}

inline Var transformer_layer(ParameterBinder& P, const std::string& pre, Var h, Var edge_emb,
                             const PreparedInput& in) {
  return softplus(aggregate(P, pre, h, message_block(P, pre, h, edge_emb, in), in));
}

inline Tensor frame_rows(const Frame& f, std::size_t n) {
  Tensor t({n, 9});
  const auto flat = f.flat();
  for (std::size_t i = 0; i < n; ++i) std::copy(flat.begin(), flat.end(), t.data().begin() + i * 9);
  return t;
}

inline Var compose_with_global(Var f_inv, const Mat3& g) {
  return row_map<9, 9>(
      f_inv, [g](const auto& r) { return kernels::right_multiply_rows(r, g); }, "compose_spframe");
}

inline Var gram_schmidt(Var v) {
  return row_map<6, 9>(v, [](const auto& r) { return kernels::gram_schmidt_rows(r); }, "gram_schmidt");
}

inline std::vector<bool> collinear_rows(const Tensor& v) {
  std::vector<bool> bad(v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    const double* r = v.data().data() + i * 6;
    bad[i] = collinear({r[0], r[1], r[2]}, {r[3], r[4], r[5]});
  }
  return bad;
}

// Invariant per-edge angle features for the edges entering `atom`.
inline void fill_angle_features(Tensor& angles, const PreparedInput& in, std::size_t atom) {
  const PeriodicGraph& g = in.graph;
  std::vector<Vec3> vecs;
  for (std::size_t e = g.begin(atom); e < g.end(atom); ++e) vecs.push_back(g.edges()[e].vector());
  const auto axes = pca_axes(vecs, false);
  const Frame local = axes ? Frame(transpose(*axes)) : in.lattice_frame;
  const Lattice& lat = g.structure().lattice();
  for (std::size_t e = g.begin(atom); e < g.end(atom); ++e) {
    const Vec3 a = angle_features(g.edges()[e].direction, local, lat, in.lattice_frame);
    for (std::size_t k = 0; k < 3; ++k) angles[e * 3 + k] = a[k];
  }
}

// Gram-Schmidt frame head. Equivariant mode sums φ_k·ê_ij; invariant mode
// sums the six invariant φ outputs directly.
inline Var gs_frame_head(ParameterBinder& P, const std::string& pre, Var h, Var edge_emb,
                         const PreparedInput& in, bool equivariant, ForwardDiagnostics& diag) {
  Tape& tape = P.tape();
  const std::size_t n = h.rows(), E = in.src.size();
  Tensor angles({E, kAngleFeatures});
  auto vectors = [&](const Tensor& ang) {
    Var edge_in = concat_cols({edge_emb, tape.constant(ang)});
    Var msg = message_block(P, pre, h, edge_in, in);
    Var phi = linear(P, msg, pre + "wphi", pre + "bphi");
    if (!equivariant) return segment_sum(phi, in.dst, n);
    Var dirs = tape.constant(in.directions);
    Var v1 = segment_sum(scale_rows(dirs, slice_cols(phi, 0, 1)), in.dst, n);
    Var v2 = segment_sum(scale_rows(dirs, slice_cols(phi, 1, 2)), in.dst, n);
    return concat_cols({v1, v2});
  };
  Var v = vectors(angles);
  const std::vector<bool> bad = collinear_rows(v.value());
  std::size_t n_bad = 0;
  for (bool b : bad) n_bad += b;
  if (n_bad == 0) return gram_schmidt(v);

  diag.gs_fallbacks += n_bad;
  for (std::size_t i = 0; i < n; ++i)
    if (bad[i]) fill_angle_features(angles, in, i);
  v = vectors(angles);
  const std::vector<bool> still = collinear_rows(v.value());
  Tensor keep({n, 6}, 1.0), substitute({n, 6});
  std::size_t n_still = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (bad[i] && !still[i]) ++diag.gs_fallback_recovered;
    if (!still[i]) continue;
    ++n_still;
    for (std::size_t c = 0; c < 6; ++c) keep[i * 6 + c] = 0.0;
    substitute[i * 6 + 0] = 1.0;
    substitute[i * 6 + 4] = 1.0;
  }
  diag.gs_identity_frames += n_still;
  if (n_still) v = add(hadamard(v, tape.constant(keep)), tape.constant(substitute));
  return gram_schmidt(v);
}

inline Var quaternion_head(ParameterBinder& P, const std::string& pre, Var h, Var edge_emb,
                           const PreparedInput& in, ForwardDiagnostics& diag) {
  Tape& tape = P.tape();
  Var z = aggregate(P, pre, h, message_block(P, pre, h, edge_emb, in), in);
  Var q = softplus(linear(P, z, pre + "wout", pre + "bout"));
  const Tensor& qv = q.value();
  Tensor keep({q.rows(), 4}, 1.0), substitute({q.rows(), 4});
  std::size_t clamps = 0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += qv[i * 4 + c] * qv[i * 4 + c];
    if (std::sqrt(s) < 1e-12) {
      ++clamps;
      for (std::size_t c = 0; c < 4; ++c) keep[i * 4 + c] = 0.0;
      substitute[i * 4] = 1.0;
    }
  }
  diag.quaternion_clamps += clamps;
  if (clamps) q = add(hadamard(q, tape.constant(keep)), tape.constant(substitute));
  return row_map<4, 9>(q, [](const auto& r) { return kernels::quaternion_rows(r); }, "quat_to_rotation");
}

// Two tensor-product layers on canonicalized directions followed by the
// nonlinear/linear combination.
inline Var equivariant_update(ParameterBinder& P, const std::string& pre, Var h, Var frames,
                              const PreparedInput& in) {
  Tape& tape = P.tape();
  const std::size_t n = h.rows();
  Var inv_deg = tape.constant(in.inv_degree);
  Var sh_in = concat_cols({tape.constant(in.directions), gather_rows(frames, in.dst)});
  Var y = row_map<12, 9>(
      sh_in, [](const auto& r) { return kernels::canonical_harmonics_rows(r); }, "canonical_harmonics");
  Var fp = matmul(h, P(pre + "win"));
  Tensor e0({n, 9});
  for (std::size_t i = 0; i < n; ++i) e0[i * 9] = 1.0;
  Var first = add(scale_rows(segment_sum(outer_rows(gather_rows(fp, in.src), y), in.dst, n), inv_deg),
                  outer_rows(fp, tape.constant(e0)));
  Var second = contract_rows(gather_rows(first, in.src), y, P(pre + "wtp"));
  Var fstar = scale_rows(segment_sum(second, in.dst, n), inv_deg);
  Var nonlinear =
      softplus(linear(P, softplus(layer_norm(fstar, P(pre + "ln.g"), P(pre + "ln.b"))), pre + "ws", pre + "bs"));
  return add(nonlinear, matmul(h, P(pre + "wres")));
}

inline std::vector<Frame> frames_of(const Tensor& rows) {
  std::vector<Frame> out;
  for (std::size_t i = 0; i < rows.rows(); ++i) out.push_back(Frame::from_flat(rows.data().data() + i * 9));
  return out;
}

}  // namespace detail

struct ForwardResult {
  Var output;      // standardized scalar on the tape
  Var embeddings;  // n × feature_dim
  double prediction = 0.0;
  // Per layer, per atom: the frame applied to edge directions.
  std::vector<std::vector<Frame>> frames;
  // Per layer, per atom: the invariant frame (spframe modes only).
  std::vector<std::vector<Frame>> invariant_frames;
  ForwardDiagnostics diagnostics;
};

inline ForwardResult forward(Tape& tape, const PreparedInput& in, const ModelConfig& c,
                             const ParameterStore& params) {
  ParameterBinder P(tape, params);
  ForwardResult r;
  const std::size_t n = in.graph.num_atoms();
  if (in.pca_fell_back) ++r.diagnostics.pca_fallbacks;

  Var h = gather_rows(P("embed.atom"), in.species_row);
  if (h.cols() != c.feature_dim) fail<DimensionError>("parameters do not match feature_dim");
  Var edge_emb = softplus(detail::linear(P, tape.constant(in.rbf), "embed.edge.w", "embed.edge.b"));
  const Mat3 g = c.identity_global ? identity3() : in.global.matrix();

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = detail::layer_prefix(l);
    h = detail::transformer_layer(P, pre + "attn.", h, edge_emb, in);
    Var frames;
    switch (c.frame_mode) {
      case FrameMode::none:
        frames = tape.constant(detail::frame_rows(Frame::identity(), n));
        break;
      case FrameMode::global_qr:
      case FrameMode::global_polar:
      case FrameMode::global_pca:
        frames = tape.constant(detail::frame_rows(in.global, n));
        break;
      case FrameMode::local_gs_equivariant:
        frames = detail::gs_frame_head(P, pre + "gs.", h, edge_emb, in, true, r.diagnostics);
        break;
      case FrameMode::spframe_gs:
      case FrameMode::spframe_quaternion: {
        Var f_inv = c.frame_mode == FrameMode::spframe_gs
                        ? detail::gs_frame_head(P, pre + "gs.", h, edge_emb, in, false, r.diagnostics)
                        : detail::quaternion_head(P, pre + "quat.", h, edge_emb, in, r.diagnostics);
        r.invariant_frames.push_back(detail::frames_of(f_inv.value()));
        frames = c.identity_global ? f_inv : detail::compose_with_global(f_inv, g);
        break;
      }
    }
    r.frames.push_back(detail::frames_of(frames.value()));
    h = detail::equivariant_update(P, pre + "eq.", h, frames, in);
  }
  r.embeddings = h;
  Var pooled = mean_rows(h);
  Var hidden = softplus(detail::linear(P, pooled, "readout.w1", "readout.b1"));
  r.output = detail::linear(P, hidden, "readout.w2", "readout.b2");
  r.prediction = r.output.value().item() * params.target_scale + params.target_mean;
  return r;
}

// Forward pass without keeping the tape.
struct Evaluation {
  double prediction = 0.0;
  Tensor embeddings;
  std::vector<std::vector<Frame>> frames;
  std::vector<std::vector<Frame>> invariant_frames;
  ForwardDiagnostics diagnostics;
};

inline Evaluation evaluate(const PreparedInput& in, const ModelConfig& c, const ParameterStore& params) {
  Tape tape;
  ForwardResult r = forward(tape, in, c, params);
  return {r.prediction, r.embeddings.value(), std::move(r.frames), std::move(r.invariant_frames),
          r.diagnostics};
}

inline Evaluation evaluate(const Structure& s, const ModelConfig& c, const ParameterStore& params) {
  return evaluate(prepare(s, c), c, params);
}

}  // namespace spframe
