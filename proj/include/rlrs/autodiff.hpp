// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_AUTODIFF_HPP
#define RLRS_AUTODIFF_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlrs/errors.hpp"
#include "rlrs/tensor.hpp"

namespace rlrs {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// vector is already a topological order and backward is a reverse scan.
///
/// A Tape owns its nodes; Vars hold a pointer back to it, so a Tape is
/// neither copyable nor movable.
class Tape {
 public:
  /// Accumulates the node's output gradient into its inputs' gradients.
  /// Receives the node's own forward value alongside its gradient.
  using Backward = std::function<void(Tape&, const Tensor& out, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), nullptr, false, {}); }
  Var variable(Tensor value) { return push(std::move(value), nullptr, true, {}); }

  /// Leaf that reads `value` in place; `value` must outlive the tape.
  Var parameter(const Tensor& value) { return push({}, &value, true, {}); }

  /// Appends an interior node. The backward closure is kept only when some
  /// input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw DomainError("operands recorded on different tapes");
      needs = needs || nodes_[in.id_].requires_grad;
    }
    return push(std::move(value), nullptr, needs, needs ? std::move(backward) : Backward{});
  }

  const Tensor& value(Var v) const {
    const auto& n = nodes_.at(v.id_);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id_).requires_grad; }

  /// Gradient accumulator of `v`, allocated as zeros on first use.
  Tensor& grad_buffer(Var v) {
    auto& n = nodes_.at(v.id_);
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.external ? *n.external : n.value);
    return n.grad;
  }

  /// Gradient of the last backward pass; zeros when the node was not reached.
  Tensor grad(Var v) const {
    const auto& n = nodes_.at(v.id_);
    if (n.grad.empty()) return Tensor::zeros_like(value(v));
    return n.grad;
  }

  /// Propagates d(output)/d(node) to every node that requires a gradient.
  void backward(Var output) {
    if (output.tape_ != this) throw DomainError("backward called with a Var from another tape");
    if (value(output).size() != 1)
      throw DomainError("backward needs a scalar output, got shape " + shape_string(value(output).shape()));
    for (auto& n : nodes_) n.grad = Tensor{};
    grad_buffer(output)[0] = 1.0;
    for (std::size_t i = output.id_ + 1; i-- > 0;) {
      const auto& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      // Closures only write to inputs, whose ids are strictly smaller, and
      // never append nodes, so these references stay valid.
      n.backward(*this, value_at(i), n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  const Tensor& value_at(std::size_t i) const {
    const auto& n = nodes_[i];
    return n.external ? *n.external : n.value;
  }

  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, const Tensor* external, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), external, Tensor{}, requires_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DomainError(std::string(op) + " expects a matrix, got shape " + shape_string(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DomainError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
}

inline void accumulate(Tape& tape, Var v, const Tensor& delta) {
  if (!tape.requires_grad(v)) return;
  auto& g = tape.grad_buffer(v);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// [m,k] x [k,n] -> [m,n]
inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank2(av, "matmul");
  detail::require_rank2(bv, "matmul");
  if (av.dim(1) != bv.dim(0))
    throw DomainError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                      shape_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::gemm_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tape, const Tensor&, const Tensor& g) {
    if (tape.requires_grad(a))
      kernels::gemm_nt(g.ptr(), b.value().ptr(), tape.grad_buffer(a).ptr(), m, n, k);
    if (tape.requires_grad(b)) kernels::gemm_tn(a.value().ptr(), g.ptr(), tape.grad_buffer(b).ptr(), m, k, n);
  });
}

/// Elementwise sum of equally shaped tensors.
inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor&, const Tensor& g) {
    detail::accumulate(tape, a, g);
    detail::accumulate(tape, b, g);
  });
}

/// Elementwise product. `b` may also be an [m,1] column scaling each row of
/// an [m,n] `a`.
inline Var multiply(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool column = av.shape() != bv.shape();
  if (column && !(av.rank() == 2 && bv.rank() == 2 && bv.dim(1) == 1 && bv.dim(0) == av.dim(0)))
    throw DomainError("multiply: shape mismatch " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  const std::size_t n = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= column ? bv[i / n] : bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b, column, n](Tape& tape, const Tensor&, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (tape.requires_grad(a)) {
      auto& ga = tape.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (column ? bv[i / n] : bv[i]);
    }
    if (tape.requires_grad(b)) {
      auto& gb = tape.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[column ? i / n : i] += g[i] * av[i];
    }
  });
}

/// Multiplies every element by a constant.
inline Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& tape, const Tensor&, const Tensor& g) {
    auto& ga = tape.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

/// Rows of `table` [V,d] selected by `ids` -> [ids.size(), d].
inline Var embedding_lookup(Var table, std::vector<std::uint32_t> ids) {
  const Tensor& t = table.value();
  detail::require_rank2(t, "embedding_lookup");
  if (ids.empty()) throw DomainError("embedding_lookup: no ids");
  const std::size_t vocab = t.dim(0), d = t.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab)
      throw DomainError("embedding_lookup: id " + std::to_string(ids[r]) + " out of range for table " +
                        shape_string(t.shape()));
    std::copy_n(t.ptr() + ids[r] * d, d, out.ptr() + r * d);
  }
  return table.tape().record(std::move(out), {table}, [table, ids = std::move(ids), d](Tape& tape, const Tensor&, const Tensor& g) {
    auto& gt = tape.grad_buffer(table);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gt[ids[r] * d + j] += g[r * d + j];
  });
}

/// Row-wise softmax of a matrix. With `causal`, the matrix must be square and
/// entries above the diagonal are masked out (probability exactly zero).
inline Var softmax(Var x, bool causal = false) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "softmax");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (causal && m != n) throw DomainError("causal softmax needs a square matrix, got " + shape_string(xv.shape()));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t width = causal ? i + 1 : n;
    const double* row = xv.ptr() + i * n;
    double* o = out.ptr() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  return x.tape().record(std::move(out), {x}, [x, m, n](Tape& tape, const Tensor& y, const Tensor& g) {
    auto& gx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < m; ++i) {
      const double* yr = y.ptr() + i * n;
      const double* gr = g.ptr() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
      double* o = gx.ptr() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += yr[j] * (gr[j] - dot);
    }
  });
}

/// x * gain / sqrt(mean(x^2) + eps) over each row; no bias.
inline Var rms_norm(Var x, Var gain, double eps = 1e-6) {
  const Tensor& xv = x.value();
  const Tensor& wv = gain.value();
  detail::require_rank2(xv, "rms_norm");
  if (wv.rank() != 1 || wv.dim(0) != xv.dim(1))
    throw DomainError("rms_norm: gain " + shape_string(wv.shape()) + " does not match input " +
                      shape_string(xv.shape()));
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  std::vector<double> inv(m);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.ptr() + i * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += row[j] * row[j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = row[j] * inv[i] * wv[j];
  }
  return x.tape().record(std::move(out), {x, gain},
                         [x, gain, m, n, inv = std::move(inv)](Tape& tape, const Tensor&, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& wv = gain.value();
    if (tape.requires_grad(gain)) {
      auto& gw = tape.grad_buffer(gain);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gw[j] += g.at(i, j) * xv.at(i, j) * inv[i];
    }
    if (tape.requires_grad(x)) {
      auto& gx = tape.grad_buffer(x);
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * wv[j] * xv.at(i, j);
        const double r = inv[i];
        const double coeff = r * r * r * dot / static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += r * g.at(i, j) * wv[j] - xv.at(i, j) * coeff;
      }
    }
  });
}

/// Gated feed-forward: (silu(x W) * (x V)) W2.
inline Var swiglu(Var x, Var w, Var v, Var w2) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& vv = v.value();
  const Tensor& w2v = w2.value();
  for (const Tensor* t : {&xv, &wv, &vv, &w2v}) detail::require_rank2(*t, "swiglu");
  const std::size_t m = xv.dim(0), d = xv.dim(1), h = wv.dim(1), o = w2v.dim(1);
  if (wv.dim(0) != d || vv.shape() != wv.shape() || w2v.dim(0) != h)
    throw DomainError("swiglu: incompatible shapes x" + shape_string(xv.shape()) + " W" +
                      shape_string(wv.shape()) + " V" + shape_string(vv.shape()) + " W2" +
                      shape_string(w2v.shape()));
  Tensor a({m, h}), b({m, h}), u({m, h}), out({m, o});
  kernels::gemm_nn(xv.ptr(), wv.ptr(), a.ptr(), m, d, h);
  kernels::gemm_nn(xv.ptr(), vv.ptr(), b.ptr(), m, d, h);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = a[i] * detail::sigmoid(a[i]) * b[i];
  kernels::gemm_nn(u.ptr(), w2v.ptr(), out.ptr(), m, h, o);
  return x.tape().record(
      std::move(out), {x, w, v, w2},
      [x, w, v, w2, m, d, h, o, a = std::move(a), b = std::move(b), u = std::move(u)](Tape& tape, const Tensor&,
                                                                                        const Tensor& g) {
        if (tape.requires_grad(w2)) kernels::gemm_tn(u.ptr(), g.ptr(), tape.grad_buffer(w2).ptr(), m, h, o);
        Tensor du({m, h});
        kernels::gemm_nt(g.ptr(), w2.value().ptr(), du.ptr(), m, o, h);
        Tensor da({m, h}), db({m, h});
        for (std::size_t i = 0; i < du.size(); ++i) {
          const double sg = detail::sigmoid(a[i]);
          db[i] = du[i] * a[i] * sg;
          da[i] = du[i] * b[i] * sg * (1.0 + a[i] * (1.0 - sg));
        }
        if (tape.requires_grad(w)) kernels::gemm_tn(x.value().ptr(), da.ptr(), tape.grad_buffer(w).ptr(), m, d, h);
        if (tape.requires_grad(v)) kernels::gemm_tn(x.value().ptr(), db.ptr(), tape.grad_buffer(v).ptr(), m, d, h);
        if (tape.requires_grad(x)) {
          auto& gx = tape.grad_buffer(x);
          kernels::gemm_nt(da.ptr(), w.value().ptr(), gx.ptr(), m, h, d);
          kernels::gemm_nt(db.ptr(), v.value().ptr(), gx.ptr(), m, h, d);
        }
      });
}

/// Sub-block [row0, row0+rows) x [col0, col0+cols) of a matrix.
inline Var slice(Var x, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "slice");
  if (rows == 0 || cols == 0 || row0 + rows > xv.dim(0) || col0 + cols > xv.dim(1))
    throw DomainError("slice [" + std::to_string(row0) + "+" + std::to_string(rows) + ", " + std::to_string(col0) +
                      "+" + std::to_string(cols) + "] out of bounds for " + shape_string(xv.shape()));
  const std::size_t n = xv.dim(1);
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(xv.ptr() + (row0 + i) * n + col0, cols, out.ptr() + i * cols);
  return x.tape().record(std::move(out), {x}, [x, row0, rows, col0, cols, n](Tape& tape, const Tensor&, const Tensor& g) {
    auto& gx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) gx[(row0 + i) * n + col0 + j] += g[i * cols + j];
  });
}

/// Joins matrices along rows (axis 0) or columns (axis 1).
inline Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw DomainError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw DomainError("concat axis must be 0 or 1");
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    detail::require_rank2(t, "concat");
    const Tensor& first = parts.front().value();
    if (axis == 0 && t.dim(1) != first.dim(1))
      throw DomainError("concat rows: shape mismatch " + shape_string(first.shape()) + " vs " + shape_string(t.shape()));
    if (axis == 1 && t.dim(0) != first.dim(0))
      throw DomainError("concat cols: shape mismatch " + shape_string(first.shape()) + " vs " + shape_string(t.shape()));
    rows = axis == 0 ? rows + t.dim(0) : t.dim(0);
    cols = axis == 1 ? cols + t.dim(1) : t.dim(1);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t j = 0; j < t.dim(1); ++j)
        (axis == 0 ? out.at(offset + i, j) : out.at(i, offset + j)) = t.at(i, j);
    offset += axis == 0 ? t.dim(0) : t.dim(1);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape().record(std::move(out), inputs, [inputs, axis](Tape& tape, const Tensor&, const Tensor& g) {
    std::size_t offset = 0;
    for (const auto& p : inputs) {
      const std::size_t r = p.value().dim(0), c = p.value().dim(1);
      if (tape.requires_grad(p)) {
        auto& gp = tape.grad_buffer(p);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gp.at(i, j) += axis == 0 ? g.at(offset + i, j) : g.at(i, offset + j);
      }
      offset += axis == 0 ? r : c;
    }
  });
}

inline Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

inline Var transpose(Var x) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "transpose");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = xv.at(i, j);
  return x.tape().record(std::move(out), {x}, [x, m, n](Tape& tape, const Tensor&, const Tensor& g) {
    auto& gx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += g.at(j, i);
  });
}

/// Sum of all elements, as a one-element tensor.
inline Var reduce_sum(Var x) {
  double total = 0.0;
  for (double e : x.value().data()) total += e;
  return x.tape().record(Tensor::scalar(total), {x}, [x](Tape& tape, const Tensor&, const Tensor& g) {
    auto& gx = tape.grad_buffer(x);
    for (auto& e : gx.data()) e += g[0];
  });
}

inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Tensor&, const Tensor& g) {
    auto& gx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Rows of `x` [m,n] at `index` -> [index.size(), n].
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "gather_rows");
  if (index.empty()) throw DomainError("gather_rows: empty index");
  const std::size_t n = xv.dim(1);
  Tensor out({index.size(), n});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= xv.dim(0))
      throw DomainError("gather_rows: row " + std::to_string(index[r]) + " out of range for " + shape_string(xv.shape()));
    std::copy_n(xv.ptr() + index[r] * n, n, out.ptr() + r * n);
  }
  return x.tape().record(std::move(out), {x}, [x, index = std::move(index), n](Tape& tape, const Tensor&, const Tensor& g) {
    auto& gx = tape.grad_buffer(x);
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) gx[index[r] * n + j] += g[r * n + j];
  });
}

/// Adds row r of parts[p] into row index[p][r] of a zero [rows, n] matrix.
inline Var scatter_rows(std::span<const Var> parts, std::vector<std::vector<std::size_t>> index, std::size_t rows) {
  if (parts.empty() || parts.size() != index.size()) throw DomainError("scatter_rows: parts and index lists differ");
  const std::size_t n = parts.front().value().cols();
  Tensor out({rows, n});
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    detail::require_rank2(t, "scatter_rows");
    if (t.dim(1) != n || t.dim(0) != index[p].size())
      throw DomainError("scatter_rows: part " + shape_string(t.shape()) + " does not match " +
                        std::to_string(index[p].size()) + " indices of width " + std::to_string(n));
    for (std::size_t r = 0; r < index[p].size(); ++r) {
      if (index[p][r] >= rows) throw DomainError("scatter_rows: row index out of range");
      for (std::size_t j = 0; j < n; ++j) out[index[p][r] * n + j] += t[r * n + j];
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape().record(
      std::move(out), inputs, [inputs, index = std::move(index), n](Tape& tape, const Tensor&, const Tensor& g) {
        for (std::size_t p = 0; p < inputs.size(); ++p) {
          if (!tape.requires_grad(inputs[p])) continue;
          auto& gp = tape.grad_buffer(inputs[p]);
          for (std::size_t r = 0; r < index[p].size(); ++r)
            for (std::size_t j = 0; j < n; ++j) gp[r * n + j] += g[index[p][r] * n + j];
        }
      });
}

/// Elements x[rows[i], cols[i]] as an [k,1] column.
inline Var gather_elements(Var x, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "gather_elements");
  if (rows.size() != cols.size() || rows.empty()) throw DomainError("gather_elements: index lists differ or are empty");
  Tensor out({rows.size(), 1});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.dim(0) || cols[i] >= xv.dim(1))
      throw DomainError("gather_elements: index out of range for " + shape_string(xv.shape()));
    out[i] = xv.at(rows[i], cols[i]);
  }
  return x.tape().record(std::move(out), {x}, [x, rows = std::move(rows), cols = std::move(cols)](Tape& tape, const Tensor&, const Tensor& g) {
    auto& gx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.at(rows[i], cols[i]) += g[i];
  });
}

}  // namespace rlrs

#endif  // RLRS_AUTODIFF_HPP
