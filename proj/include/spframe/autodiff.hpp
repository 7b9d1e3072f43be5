#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape owns an append-only list of nodes. Leaves are either constants or
// named parameters; every other node stores the closure that produced it (so
// the tape can be replayed forward) and the closure that pushes its output
// gradient back to its inputs. Backward closures accumulate into the input
// gradients, never assign, so an input used twice is handled correctly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dual.hpp"
#include "error.hpp"
#include "tensor.hpp"

namespace spframe {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  inline const Tensor& value() const;
  inline bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using ForwardFn = std::function<Tensor(const std::vector<const Tensor*>&)>;
using BackwardFn = std::function<void(const std::vector<const Tensor*>& inputs, const Tensor& output,
                                      const Tensor& grad_out, const std::vector<Tensor*>& grad_in)>;
using GradientMap = std::map<std::string, Tensor>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    require_finite(value, "constant");
    nodes_.push_back(Node{"constant", std::move(value), {}, nullptr, nullptr, false, {}});
    return {this, nodes_.size() - 1};
  }

  Var parameter(const std::string& name, Tensor value) {
    require_finite(value, "parameter");
    for (const auto& [existing, id] : params_)
      if (existing == name) fail<ContractError>("parameter '" + name + "' registered twice on one tape");
    nodes_.push_back(Node{"parameter", std::move(value), {}, nullptr, nullptr, true, name});
    params_.emplace_back(name, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  Var record(const char* op, const std::vector<Var>& inputs, ForwardFn forward, BackwardFn backward) {
    std::vector<std::size_t> ids;
    std::vector<const Tensor*> values;
    bool needs_grad = false;
    for (const Var& v : inputs) {
      if (v.tape() != this) fail<ContractError>(std::string(op) + ": input belongs to another tape");
      ids.push_back(v.id());
      values.push_back(&nodes_[v.id()].value);
      needs_grad = needs_grad || nodes_[v.id()].requires_grad;
    }
    Tensor out = forward(values);
    require_finite(out, op);
    nodes_.push_back(Node{op, std::move(out), std::move(ids), std::move(forward), std::move(backward),
                          needs_grad, {}});
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::pair<std::string, std::size_t>>& parameters() const { return params_; }

  // Gradients of a scalar with respect to every registered parameter.
  // Parameters that do not influence the loss receive zeros.
  GradientMap backward(Var loss) const {
    if (loss.tape() != this) fail<ContractError>("backward: loss belongs to another tape");
    const Tensor& lv = nodes_[loss.id()].value;
    if (!lv.is_scalar())
      fail<ContractError>("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));
    std::vector<Tensor> grads(nodes_.size());
    grads[loss.id()] = Tensor(lv.shape(), 1.0);
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      const Node& node = nodes_[k];
      if (grads[k].size() == 0 || !node.backward || !node.requires_grad) continue;
      std::vector<const Tensor*> in;
      std::vector<Tensor*> gin;
      for (std::size_t id : node.inputs) {
        in.push_back(&nodes_[id].value);
        if (nodes_[id].requires_grad) {
          if (grads[id].size() == 0) grads[id] = Tensor(nodes_[id].value.shape());
          gin.push_back(&grads[id]);
        } else {
          gin.push_back(nullptr);
        }
      }
      node.backward(in, node.value, grads[k], gin);
    }
    GradientMap out;
    for (const auto& [name, id] : params_)
      out[name] = grads[id].size() ? std::move(grads[id]) : Tensor(nodes_[id].value.shape());
    return out;
  }

  // Overwrites a leaf; the caller must replay() before reading dependants.
  void set_leaf_value(std::size_t id, Tensor v) {
    Node& node = nodes_.at(id);
    if (node.forward) fail<ContractError>("set_leaf_value on a non-leaf node");
    if (v.shape() != node.value.shape()) fail<DimensionError>("set_leaf_value: shape mismatch");
    node.value = std::move(v);
  }

  void replay(std::size_t from = 0) {
    for (std::size_t k = from; k < nodes_.size(); ++k) {
      Node& node = nodes_[k];
      if (!node.forward) continue;
      node.value = node.forward(input_values(node));
      require_finite(node.value, node.op);
    }
  }

  // True when recomputing every node from its inputs reproduces the stored
  // value bit for bit.
  bool replay_matches() const {
    for (const Node& node : nodes_) {
      if (!node.forward) continue;
      if (!(node.forward(input_values(node)) == node.value)) return false;
    }
    return true;
  }

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad;
    std::string param_name;
  };

  std::vector<const Tensor*> input_values(const Node& node) const {
    std::vector<const Tensor*> in;
    in.reserve(node.inputs.size());
    for (std::size_t id : node.inputs) in.push_back(&nodes_[id].value);
    return in;
  }

  static void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) fail<ContractError>(std::string(op) + " produced a non-finite value");
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Differentiable primitives

inline Var matmul(Var a, Var b) {
  return a.tape()->record(
      "matmul", {a, b}, [](const auto& in) { return matmul(*in[0], *in[1]); },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const Tensor& A = *in[0];
        const Tensor& B = *in[1];
        const auto m = static_cast<Eigen::Index>(A.shape()[0]), k = static_cast<Eigen::Index>(A.shape()[1]),
                   n = static_cast<Eigen::Index>(B.shape()[1]);
        Eigen::Map<const RowMajor> a(A.data().data(), m, k), b(B.data().data(), k, n), gm(g.data().data(), m, n);
        if (gin[0]) Eigen::Map<RowMajor>(gin[0]->data().data(), m, k).noalias() += gm * b.transpose();
        if (gin[1]) Eigen::Map<RowMajor>(gin[1]->data().data(), k, n).noalias() += a.transpose() * gm;
      });
}

inline Var add(Var a, Var b) {
  return a.tape()->record(
      "add", {a, b}, [](const auto& in) { return add(*in[0], *in[1]); },
      [](const auto&, const Tensor&, const Tensor& g, const auto& gin) {
        if (gin[0]) add_into(*gin[0], g);
        if (gin[1]) add_into(*gin[1], g);
      });
}

inline Var sub(Var a, Var b) {
  return a.tape()->record(
      "sub", {a, b}, [](const auto& in) { return sub(*in[0], *in[1]); },
      [](const auto&, const Tensor&, const Tensor& g, const auto& gin) {
        if (gin[0]) add_into(*gin[0], g);
        if (gin[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
      });
}

inline Var hadamard(Var a, Var b) {
  return a.tape()->record(
      "hadamard", {a, b}, [](const auto& in) { return hadamard(*in[0], *in[1]); },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += g[i] * (*in[1])[i];
          if (gin[1]) (*gin[1])[i] += g[i] * (*in[0])[i];
        }
      });
}

inline Var scale(Var a, double s) {
  return a.tape()->record(
      "scale", {a}, [s](const auto& in) { return scale(*in[0], s); },
      [s](const auto&, const Tensor&, const Tensor& g, const auto& gin) {
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
      });
}

inline Var sigmoid(Var a) {
  return a.tape()->record(
      "sigmoid", {a}, [](const auto& in) { return sigmoid(*in[0]); },
      [](const auto&, const Tensor& y, const Tensor& g, const auto& gin) {
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

inline Var softplus(Var a) {
  return a.tape()->record(
      "softplus", {a}, [](const auto& in) { return softplus(*in[0]); },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * sigmoid((*in[0])[i]);
      });
}

inline Var abs(Var a) {
  return a.tape()->record(
      "abs", {a}, [](const auto& in) { return map(*in[0], [](double x) { return std::abs(x); }); },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = (*in[0])[i];
            (*gin[0])[i] += g[i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
          }
      });
}

namespace detail {
inline void require_row_vector(const Tensor& x, const Tensor& v, const char* op) {
  if (x.rank() != 2 || v.size() != x.cols())
    fail<DimensionError>(std::string(op) + ": expected " + std::to_string(x.cols()) +
                         " entries, got shape " + shape_str(v.shape()));
}
}  // namespace detail

// x[m×n] + b, where b holds n entries added to every row.
inline Var add_bias(Var x, Var b) {
  detail::require_row_vector(x.value(), b.value(), "add_bias");
  return x.tape()->record(
      "add_bias", {x, b},
      [](const auto& in) {
        Tensor out = *in[0];
        const std::size_t n = out.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i % n];
        return out;
      },
      [](const auto&, const Tensor&, const Tensor& g, const auto& gin) {
        const std::size_t n = g.cols();
        if (gin[0]) add_into(*gin[0], g);
        if (gin[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % n] += g[i];
      });
}

// x[m×n] ⊙ w, with w's n entries applied to every row.
inline Var mul_row_vector(Var x, Var w) {
  detail::require_row_vector(x.value(), w.value(), "mul_row_vector");
  return x.tape()->record(
      "mul_row_vector", {x, w},
      [](const auto& in) {
        Tensor out = *in[0];
        const std::size_t n = out.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i % n];
        return out;
      },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        const std::size_t n = g.cols();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += g[i] * (*in[1])[i % n];
          if (gin[1]) (*gin[1])[i % n] += g[i] * (*in[0])[i];
        }
      });
}

// Row r of x[m×n] multiplied by s[r]; s has m entries.
inline Var scale_rows(Var x, Var s) {
  if (x.value().rank() != 2 || s.value().size() != x.rows())
    fail<DimensionError>("scale_rows: expected " + std::to_string(x.rows()) + " row scales");
  return x.tape()->record(
      "scale_rows", {x, s},
      [](const auto& in) {
        Tensor out = *in[0];
        const std::size_t n = out.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i / n];
        return out;
      },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        const std::size_t n = g.cols();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += g[i] * (*in[1])[i / n];
          if (gin[1]) (*gin[1])[i / n] += g[i] * (*in[0])[i];
        }
      });
}

inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  if (x.value().rank() != 2) fail<DimensionError>("gather_rows: expected a matrix");
  for (auto i : index)
    if (i >= x.rows()) fail<DimensionError>("gather_rows: index out of range");
  if (index.empty()) fail<DimensionError>("gather_rows: empty index");
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  return x.tape()->record(
      "gather_rows", {x},
      [idx](const auto& in) {
        const Tensor& a = *in[0];
        const std::size_t n = a.cols();
        Tensor out({idx->size(), n});
        for (std::size_t r = 0; r < idx->size(); ++r)
          std::copy_n(a.data().begin() + (*idx)[r] * n, n, out.data().begin() + r * n);
        return out;
      },
      [idx](const auto&, const Tensor&, const Tensor& g, const auto& gin) {
        if (!gin[0]) return;
        const std::size_t n = g.cols();
        for (std::size_t r = 0; r < idx->size(); ++r)
          for (std::size_t c = 0; c < n; ++c) (*gin[0])[(*idx)[r] * n + c] += g[r * n + c];
      });
}

// Sums rows of x[k×n] into `segments` output rows: out[segment[r]] += x[r].
inline Var segment_sum(Var x, std::vector<std::size_t> segment, std::size_t segments) {
  if (x.value().rank() != 2 || segment.size() != x.rows())
    fail<DimensionError>("segment_sum: one segment id per row required");
  for (auto s : segment)
    if (s >= segments) fail<DimensionError>("segment_sum: segment id out of range");
  auto seg = std::make_shared<const std::vector<std::size_t>>(std::move(segment));
  return x.tape()->record(
      "segment_sum", {x},
      [seg, segments](const auto& in) {
        const Tensor& a = *in[0];
        const std::size_t n = a.cols();
        Tensor out({segments, n});
        for (std::size_t r = 0; r < seg->size(); ++r)
          for (std::size_t c = 0; c < n; ++c) out[(*seg)[r] * n + c] += a[r * n + c];
        return out;
      },
      [seg](const auto&, const Tensor&, const Tensor& g, const auto& gin) {
        if (!gin[0]) return;
        const std::size_t n = g.cols();
        for (std::size_t r = 0; r < seg->size(); ++r)
          for (std::size_t c = 0; c < n; ++c) (*gin[0])[r * n + c] += g[(*seg)[r] * n + c];
      });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail<DimensionError>("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].rows();
  for (const Var& p : parts)
    if (p.value().rank() != 2 || p.rows() != m) fail<DimensionError>("concat_cols: row counts differ");
  return parts[0].tape()->record(
      "concat_cols", parts,
      [](const auto& in) {
        std::size_t total = 0;
        for (const Tensor* t : in) total += t->cols();
        const std::size_t rows = in[0]->rows();
        Tensor out({rows, total});
        std::size_t off = 0;
        for (const Tensor* t : in) {
          const std::size_t n = t->cols();
          for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(t->data().begin() + r * n, n, out.data().begin() + r * total + off);
          off += n;
        }
        return out;
      },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        const std::size_t total = g.cols(), rows = g.rows();
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const std::size_t n = in[k]->cols();
          if (gin[k])
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < n; ++c) (*gin[k])[r * n + c] += g[r * total + off + c];
          off += n;
        }
      });
}

inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  if (x.value().rank() != 2 || begin >= end || end > x.cols())
    fail<DimensionError>("slice_cols: bad column range");
  return x.tape()->record(
      "slice_cols", {x},
      [begin, end](const auto& in) {
        const Tensor& a = *in[0];
        const std::size_t n = a.cols(), w = end - begin;
        Tensor out({a.rows(), w});
        for (std::size_t r = 0; r < a.rows(); ++r)
          std::copy_n(a.data().begin() + r * n + begin, w, out.data().begin() + r * w);
        return out;
      },
      [begin, end](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        if (!gin[0]) return;
        const std::size_t n = in[0]->cols(), w = end - begin;
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) (*gin[0])[r * n + begin + c] += g[r * w + c];
      });
}

inline Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) fail<DimensionError>("reshape: size mismatch");
  return x.tape()->record(
      "reshape", {x}, [shape](const auto& in) { return in[0]->reshaped(shape); },
      [](const auto&, const Tensor&, const Tensor& g, const auto& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
      });
}

// Per-row normalization over the feature axis with a learned affine map.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6) {
  detail::require_row_vector(x.value(), gamma.value(), "layer_norm");
  detail::require_row_vector(x.value(), beta.value(), "layer_norm");
  return x.tape()->record(
      "layer_norm", {x, gamma, beta},
      [eps](const auto& in) {
        const Tensor& a = *in[0];
        const std::size_t n = a.cols();
        Tensor out(a.shape());
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const double* row = a.data().data() + r * n;
          double mean = 0.0;
          for (std::size_t c = 0; c < n; ++c) mean += row[c];
          mean /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
          var /= static_cast<double>(n);
          const double inv = 1.0 / std::sqrt(var + eps);
          for (std::size_t c = 0; c < n; ++c)
            out[r * n + c] = (*in[1])[c] * (row[c] - mean) * inv + (*in[2])[c];
        }
        return out;
      },
      [eps](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        const Tensor& a = *in[0];
        const std::size_t n = a.cols();
        std::vector<double> xhat(n), gxhat(n);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const double* row = a.data().data() + r * n;
          double mean = 0.0;
          for (std::size_t c = 0; c < n; ++c) mean += row[c];
          mean /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
          var /= static_cast<double>(n);
          const double inv = 1.0 / std::sqrt(var + eps);
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            xhat[c] = (row[c] - mean) * inv;
            const double gc = g[r * n + c];
            if (gin[1]) (*gin[1])[c] += gc * xhat[c];
            if (gin[2]) (*gin[2])[c] += gc;
            gxhat[c] = gc * (*in[1])[c];
            mean_g += gxhat[c];
            mean_gx += gxhat[c] * xhat[c];
          }
          if (!gin[0]) continue;
          mean_g /= static_cast<double>(n);
          mean_gx /= static_cast<double>(n);
          for (std::size_t c = 0; c < n; ++c)
            (*gin[0])[r * n + c] += inv * (gxhat[c] - mean_g - xhat[c] * mean_gx);
        }
      });
}

// Column means: [m×n] → [1×n].
inline Var mean_rows(Var x) {
  if (x.value().rank() != 2) fail<DimensionError>("mean_rows: expected a matrix");
  return x.tape()->record(
      "mean_rows", {x},
      [](const auto& in) {
        const Tensor& a = *in[0];
        const std::size_t n = a.cols();
        Tensor out({1, n});
        for (std::size_t i = 0; i < a.size(); ++i) out[i % n] += a[i];
        for (std::size_t c = 0; c < n; ++c) out[c] /= static_cast<double>(a.rows());
        return out;
      },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        if (!gin[0]) return;
        const std::size_t n = g.size();
        const double inv = 1.0 / static_cast<double>(in[0]->rows());
        for (std::size_t i = 0; i < gin[0]->size(); ++i) (*gin[0])[i] += g[i % n] * inv;
      });
}

inline Var sum(Var x) {
  return x.tape()->record(
      "sum", {x},
      [](const auto& in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](const auto&, const Tensor&, const Tensor& g, const auto& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < gin[0]->size(); ++i) (*gin[0])[i] += g[0];
      });
}

// Row-wise outer product: [E×d] ⊗ [E×k] → [E×(d·k)], entry (c, m) at c·k + m.
inline Var outer_rows(Var a, Var b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.rows() != b.rows())
    fail<DimensionError>("outer_rows: row counts differ");
  return a.tape()->record(
      "outer_rows", {a, b},
      [](const auto& in) {
        const Tensor &A = *in[0], &B = *in[1];
        const std::size_t d = A.cols(), k = B.cols();
        Tensor out({A.rows(), d * k});
        for (std::size_t e = 0; e < A.rows(); ++e)
          for (std::size_t c = 0; c < d; ++c)
            for (std::size_t m = 0; m < k; ++m) out[(e * d + c) * k + m] = A[e * d + c] * B[e * k + m];
        return out;
      },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        const Tensor &A = *in[0], &B = *in[1];
        const std::size_t d = A.cols(), k = B.cols();
        for (std::size_t e = 0; e < A.rows(); ++e)
          for (std::size_t c = 0; c < d; ++c)
            for (std::size_t m = 0; m < k; ++m) {
              const double gv = g[(e * d + c) * k + m];
              if (gin[0]) (*gin[0])[e * d + c] += gv * B[e * k + m];
              if (gin[1]) (*gin[1])[e * k + m] += gv * A[e * d + c];
            }
      });
}

// Channel-wise weighted contraction:
//   out[e][c] = Σ_m w[c][m] · F[e][c·k + m] · Y[e][m]
// with F [E×(d·k)], Y [E×k], w [d×k].
inline Var contract_rows(Var f, Var y, Var w) {
  const std::size_t k = y.cols();
  if (f.rows() != y.rows() || f.cols() % k != 0 || w.value().size() != f.cols())
    fail<DimensionError>("contract_rows: incompatible shapes " + shape_str(f.shape()) + ", " +
                         shape_str(y.shape()) + ", " + shape_str(w.shape()));
  return f.tape()->record(
      "contract_rows", {f, y, w},
      [](const auto& in) {
        const Tensor &F = *in[0], &Y = *in[1], &W = *in[2];
        const std::size_t k = Y.cols(), d = F.cols() / k;
        Tensor out({F.rows(), d});
        for (std::size_t e = 0; e < F.rows(); ++e)
          for (std::size_t c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t m = 0; m < k; ++m) s += W[c * k + m] * F[(e * d + c) * k + m] * Y[e * k + m];
            out[e * d + c] = s;
          }
        return out;
      },
      [](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        const Tensor &F = *in[0], &Y = *in[1], &W = *in[2];
        const std::size_t k = Y.cols(), d = F.cols() / k;
        for (std::size_t e = 0; e < F.rows(); ++e)
          for (std::size_t c = 0; c < d; ++c) {
            const double gv = g[e * d + c];
            if (gv == 0.0) continue;
            for (std::size_t m = 0; m < k; ++m) {
              const double w = W[c * k + m], fv = F[(e * d + c) * k + m], yv = Y[e * k + m];
              if (gin[0]) (*gin[0])[(e * d + c) * k + m] += gv * w * yv;
              if (gin[1]) (*gin[1])[e * k + m] += gv * w * fv;
              if (gin[2]) (*gin[2])[c * k + m] += gv * fv * yv;
            }
          }
      });
}

// Applies `kernel` independently to every row of x [m×In], producing [m×Out].
// The kernel is a generic callable over std::array<S, In>; its Jacobian comes
// from forward-mode dual numbers, so the same source serves value and gradient.
template <int In, int Out, class Kernel>
Var row_map(Var x, Kernel kernel, const char* name = "row_map") {
  if (x.value().rank() != 2 || x.cols() != static_cast<std::size_t>(In))
    fail<DimensionError>(std::string(name) + ": expected " + std::to_string(In) + " columns, got " +
                         shape_str(x.shape()));
  return x.tape()->record(
      name, {x},
      [kernel](const auto& in) {
        const Tensor& a = *in[0];
        Tensor out({a.rows(), static_cast<std::size_t>(Out)});
        std::array<double, In> row{};
        for (std::size_t r = 0; r < a.rows(); ++r) {
          std::copy_n(a.data().begin() + r * In, In, row.begin());
          const std::array<double, Out> y = kernel(row);
          std::copy(y.begin(), y.end(), out.data().begin() + r * Out);
        }
        return out;
      },
      [kernel](const auto& in, const Tensor&, const Tensor& g, const auto& gin) {
        if (!gin[0]) return;
        const Tensor& a = *in[0];
        std::array<Dual<In>, In> row{};
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (int i = 0; i < In; ++i) row[i] = Dual<In>::variable(a[r * In + i], i);
          const auto y = kernel(row);
          for (int o = 0; o < Out; ++o) {
            const double go = g[r * Out + o];
            if (go == 0.0) continue;
            for (int i = 0; i < In; ++i) (*gin[0])[r * In + i] += go * y[o].d[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckOptions {
  double step = 1e-6;
  double tol = 1e-5;
  // Entries sampled per parameter; 0 checks every entry.
  std::size_t max_entries_per_parameter = 0;
  // Denominator floor of the relative error |a − n| / max(|a|, |n|, floor), so
  // entries whose true gradient is below the finite-difference noise level are
  // judged on absolute error instead.
  double scale_floor = 1e-3;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::vector<GradCheckEntry> failures;
  bool passed = true;
};

// Compares backward() against central differences obtained by perturbing each
// sampled parameter entry and replaying the tape. The tape is restored before
// returning.
inline GradCheckReport grad_check(Tape& tape, Var loss, const GradCheckOptions& opt = {}) {
  if (!(opt.step > 0) || !(opt.tol > 0)) fail<ContractError>("grad_check: step and tol must be positive");
  const GradientMap grads = tape.backward(loss);
  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (const auto& [name, id] : tape.parameters()) {
    const Tensor original = tape.value(id);
    std::vector<std::size_t> entries(original.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (opt.max_entries_per_parameter && entries.size() > opt.max_entries_per_parameter) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opt.max_entries_per_parameter);
      std::sort(entries.begin(), entries.end());
    }
    const Tensor& analytic = grads.at(name);
    for (std::size_t idx : entries) {
      Tensor probe = original;
      probe[idx] = original[idx] + opt.step;
      tape.set_leaf_value(id, probe);
      tape.replay(id + 1);
      const double plus = tape.value(loss.id()).item();
      probe[idx] = original[idx] - opt.step;
      tape.set_leaf_value(id, probe);
      tape.replay(id + 1);
      const double minus = tape.value(loss.id()).item();
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double a = analytic[idx];
      if (a == 0.0 && numeric == 0.0) {
        ++report.skipped;
        continue;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.scale_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (!(rel < opt.tol)) report.failures.push_back({name, idx, a, numeric, rel});
    }
    tape.set_leaf_value(id, original);
    tape.replay(id + 1);
  }
  report.passed = report.failures.empty();
  return report;
}

}  // namespace spframe
