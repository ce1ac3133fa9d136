#pragma once

// Reverse-mode differentiation over a recorded tape of matrix operations.
//
// A Tape owns every intermediate value produced while it is alive. Operations
// append a node holding the forward value and a closure that propagates the
// node's adjoint to its inputs. Tape::backward() walks the nodes in reverse and
// finally adds the adjoints of parameter leaves into Parameter::grad.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "probias/tensor.hpp"

namespace probias::nn {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  explicit Tape(bool training = false, std::uint64_t seed = 0) : training_(training), rng_(seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool training() const noexcept { return training_; }
  std::mt19937_64& rng() noexcept { return rng_; }

  // Set by any op that consumed randomness; gradient checks refuse such tapes.
  bool used_stochastic_op() const noexcept { return stochastic_; }
  void mark_stochastic() noexcept { stochastic_ = true; }

  Var constant(Tensor t) { return push(std::move(t), false, nullptr, {}); }

  // One leaf per parameter per tape.
  Var param(Parameter& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var{this, it->second};
    Var v = push(p.value, true, &p, {});
    param_ids_[&p] = v.id;
    return v;
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    if (!value.all_finite()) throw NumericError("non-finite value produced on the tape");
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    if (!value.all_finite()) throw NumericError("non-finite value produced on the tape");
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  // Adjoint of a node; empty tensor if it never received a gradient.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  const Tensor& grad(std::uint32_t id) const { return nodes_[id].grad; }

  // Adjoint buffer for an input, allocated on first use. Null if the input does
  // not need a gradient.
  Tensor* grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Tensor(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  void backward(Var loss) {
    Node& root = nodes_[loss.id];
    if (root.value.size() != 1) throw NumericError("backward() requires a scalar loss, got " + shape_string(root.value));
    if (!root.requires_grad) return;
    root.grad = Tensor(1, 1, 1.0);
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& dst = n.param->grad.storage();
        const auto& src = n.grad.storage();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, Parameter* param, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(fn), param, requires_grad});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool training_;
  bool stochastic_ = false;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::uint32_t> param_ids_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw NumericError(what);
}

// c (r x n) += a (r x k) * b (k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t r, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c (r x n) += a (r x k) * b^T, b is (n x k)
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t r, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// c (k x n) += a^T * b, a is (r x k), b is (r x n)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t r, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.cols() == B.rows(), "matmul shape mismatch: " + shape_string(A) + " * " + shape_string(B));
  Tensor out(A.rows(), B.cols());
  detail::gemm_nn(A.data().data(), B.data().data(), out.data().data(), A.rows(), A.cols(), B.cols());
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (Tensor* ga = t.grad_buffer(ia)) detail::gemm_nt(g.data().data(), B.data().data(), ga->data().data(), g.rows(), g.cols(), B.rows());
    if (Tensor* gb = t.grad_buffer(ib)) detail::gemm_tn(A.data().data(), g.data().data(), gb->data().data(), A.rows(), A.cols(), g.cols());
  });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.cols() == B.cols(), "matmul_nt shape mismatch: " + shape_string(A) + " * " + shape_string(B) + "^T");
  Tensor out(A.rows(), B.rows());
  detail::gemm_nt(A.data().data(), B.data().data(), out.data().data(), A.rows(), A.cols(), B.rows());
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (Tensor* ga = t.grad_buffer(ia)) detail::gemm_nn(g.data().data(), B.data().data(), ga->data().data(), g.rows(), g.cols(), B.cols());
    if (Tensor* gb = t.grad_buffer(ib)) detail::gemm_tn(g.data().data(), A.data().data(), gb->data().data(), g.rows(), g.cols(), A.cols());
  });
}

inline Var transpose(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.cols(), A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(j, i) = A(i, j);
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < ga->rows(); ++i)
        for (std::size_t j = 0; j < ga->cols(); ++j) (*ga)(i, j) += g(j, i);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.same_shape(B), "add shape mismatch: " + shape_string(A) + " + " + shape_string(B));
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (std::uint32_t id : {ia, ib})
      if (Tensor* gx = t.grad_buffer(id))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

// a (r x c) + broadcast row b (1 x c)
inline Var add_row(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(B.rows() == 1 && B.cols() == A.cols(), "add_row shape mismatch: " + shape_string(A) + " + " + shape_string(B));
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += B[j];
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*gb)[j] += g(i, j);
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, s](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
  });
}

inline Var hadamard(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.same_shape(B), "hadamard shape mismatch: " + shape_string(A) + " . " + shape_string(B));
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
    if (Tensor* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
  });
}

namespace detail {

template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = fwd(v);
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, deriv](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, [](double x) { return detail::sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

// tanh approximation of GELU; smooth everywhere, which keeps gradient checks clean.
inline Var gelu(Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); },
      [](double x, double) {
        const double u = k * (x + c * x * x * x);
        const double th = std::tanh(u);
        const double du = k * (1.0 + 3.0 * c * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

// Inverted dropout. Identity when the tape is not training or rate is 0.
inline Var dropout(Var a, double rate) {
  Tape& tape = *a.tape;
  if (!tape.training() || rate <= 0.0) return a;
  detail::require(rate < 1.0, "dropout rate must be < 1");
  tape.mark_stochastic();
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - rate);
  for (auto& m : mask.storage()) m = keep(tape.rng()) ? s : 0.0;
  return hadamard(a, tape.constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Reshaping

inline Var concat_cols(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::require(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out(i, off + j) = P(i, j);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += P.cols();
  }
  return parts.front().tape->record(std::move(out), parts, [ids, offsets](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gp = t.grad_buffer(ids[k]);
      if (!gp) continue;
      for (std::size_t i = 0; i < gp->rows(); ++i)
        for (std::size_t j = 0; j < gp->cols(); ++j) (*gp)(i, j) += g(i, offsets[k] + j);
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_rows of nothing");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::require(p.cols() == cols, "concat_rows column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    std::copy(P.data().begin(), P.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off * cols));
    ids.push_back(p.id);
    offsets.push_back(off);
    off += P.rows();
  }
  return parts.front().tape->record(std::move(out), parts, [ids, offsets, cols](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gp = t.grad_buffer(ids[k]);
      if (!gp) continue;
      const double* src = g.data().data() + offsets[k] * cols;
      for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += src[i];
    }
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& A = a.value();
  detail::require(start + count <= A.cols(), "slice_cols out of range");
  Tensor out(A.rows(), count);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = A(i, start + j);
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, start](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*ga)(i, start + j) += g(i, j);
  });
}

// Selects rows by index (an embedding lookup when `a` is a table).
inline Var gather_rows(Var a, std::vector<std::size_t> index) {
  const Tensor& A = a.value();
  Tensor out(index.size(), A.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] < A.rows(), "gather_rows index out of range");
    std::copy(A.row(index[i]).begin(), A.row(index[i]).end(), out.row(i).begin());
  }
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, index = std::move(index)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < index.size(); ++i) {
        auto dst = ga->row(index[i]);
        auto src = g.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
  });
}

// Places row i of `a` at row index[i] of an otherwise zero (rows x cols) matrix.
inline Var scatter_rows(Var a, std::vector<std::size_t> index, std::size_t rows) {
  const Tensor& A = a.value();
  detail::require(index.size() == A.rows(), "scatter_rows index count mismatch");
  Tensor out(rows, A.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] < rows, "scatter_rows index out of range");
    auto dst = out.row(index[i]);
    auto src = A.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, index = std::move(index)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < index.size(); ++i) {
        auto dst = ga->row(i);
        auto src = g.row(index[i]);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
  });
}

// out(i, j) = table(0, index[i * cols + j]); table is 1 x m.
inline Var gather_table(Var table, std::vector<std::uint32_t> index, std::size_t rows, std::size_t cols) {
  const Tensor& T = table.value();
  detail::require(T.rows() == 1, "gather_table expects a 1 x m table");
  detail::require(index.size() == rows * cols, "gather_table index size mismatch");
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] < T.cols(), "gather_table index out of range");
    out[i] = T[index[i]];
  }
  const std::uint32_t it = table.id;
  return table.tape->record(std::move(out), {table}, [it, index = std::move(index)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* gt = t.grad_buffer(it))
      for (std::size_t i = 0; i < index.size(); ++i) (*gt)[index[i]] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Normalization and reductions

// Row-wise softmax restricted to slots where mask != 0; masked slots are exactly
// zero. A row with no open slot has no defined softmax and is rejected.
inline Var masked_softmax_rows(Var logits, std::span<const std::uint8_t> mask) {
  const Tensor& X = logits.value();
  detail::require(mask.size() == X.size(), "masked_softmax mask size mismatch");
  Tensor out(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < X.cols(); ++j)
      if (mask[i * X.cols() + j]) mx = std::max(mx, X(i, j));
    if (mx == -std::numeric_limits<double>::infinity())
      throw NumericError("masked softmax over a fully masked row " + std::to_string(i));
    double z = 0.0;
    for (std::size_t j = 0; j < X.cols(); ++j)
      if (mask[i * X.cols() + j]) z += (out(i, j) = std::exp(X(i, j) - mx));
    for (std::size_t j = 0; j < X.cols(); ++j) out(i, j) /= z;
  }
  const std::uint32_t ix = logits.id;
  return logits.tape->record(std::move(out), {logits}, [ix](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor* gx = t.grad_buffer(ix);
    if (!gx) return;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += y(i, j) * g(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) (*gx)(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

inline Var masked_softmax_rows(Var logits, const std::vector<std::uint8_t>& mask) {
  return masked_softmax_rows(logits, std::span<const std::uint8_t>(mask));
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-row normalization with learnable gain and shift (both 1 x c).
inline Var layer_norm_rows(Var a, Var gain, Var shift) {
  const Tensor& X = a.value();
  const Tensor& G = gain.value();
  const Tensor& S = shift.value();
  const std::size_t c = X.cols();
  detail::require(G.rows() == 1 && G.cols() == c && S.same_shape(G), "layer_norm parameter shape mismatch");
  Tensor xhat(X.rows(), c);
  std::vector<double> inv_std(X.rows());
  Tensor out(X.rows(), c);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += X(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (X(i, j) - mean) * (X(i, j) - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (X(i, j) - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * G[j] + S[j];
    }
  }
  const std::uint32_t ia = a.id, ig = gain.id, is = shift.id;
  return a.tape->record(std::move(out), {a, gain, shift},
                        [ia, ig, is, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
                          const Tensor& g = t.grad(self);
                          const Tensor& G = t.value(ig);
                          const std::size_t c = g.cols();
                          if (Tensor* gg = t.grad_buffer(ig))
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < c; ++j) (*gg)[j] += g(i, j) * xhat(i, j);
                          if (Tensor* gs = t.grad_buffer(is))
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < c; ++j) (*gs)[j] += g(i, j);
                          if (Tensor* gx = t.grad_buffer(ia)) {
                            for (std::size_t i = 0; i < g.rows(); ++i) {
                              double m1 = 0.0, m2 = 0.0;
                              for (std::size_t j = 0; j < c; ++j) {
                                const double d = g(i, j) * G[j];
                                m1 += d;
                                m2 += d * xhat(i, j);
                              }
                              m1 /= static_cast<double>(c);
                              m2 /= static_cast<double>(c);
                              for (std::size_t j = 0; j < c; ++j)
                                (*gx)(i, j) += inv_std[i] * (g(i, j) * G[j] - m1 - xhat(i, j) * m2);
                            }
                          }
                        });
}

// Column-wise maximum over rows: (r x c) -> (1 x c). The adjoint goes to the
// first maximal row on ties.
inline Var max_over_rows(Var a) {
  const Tensor& A = a.value();
  detail::require(A.rows() > 0, "max_over_rows of empty tensor");
  Tensor out(1, A.cols());
  std::vector<std::size_t> arg(A.cols(), 0);
  for (std::size_t j = 0; j < A.cols(); ++j) {
    out[j] = A(0, j);
    for (std::size_t i = 1; i < A.rows(); ++i)
      if (A(i, j) > out[j]) {
        out[j] = A(i, j);
        arg[j] = i;
      }
  }
  const std::uint32_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, arg = std::move(arg)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t j = 0; j < arg.size(); ++j) (*ga)(arg[j], j) += g[j];
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::uint32_t ia = a.id;
  return a.tape->record(Tensor(1, 1, s), {a}, [ia](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    if (Tensor* ga = t.grad_buffer(ia))
      for (auto& v : ga->storage()) v += g;
  });
}

inline Var mean(Var a) {
  detail::require(a.value().size() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

// Per-row dot product: (r x c), (r x c) -> (r x 1).
inline Var rowwise_dot(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.same_shape(B), "rowwise_dot shape mismatch");
  Tensor out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) s += A(i, j) * B(i, j);
    out[i] = s;
  }
  const std::uint32_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) (*ga)(i, j) += g[i] * B(i, j);
    if (Tensor* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) (*gb)(i, j) += g[i] * A(i, j);
  });
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kBceEpsilon = 1e-7;

// Mean binary cross-entropy of probabilities `yhat` (any shape, clamped to
// [eps, 1 - eps]) against binary targets.
inline Var bce_loss(Var yhat, std::span<const double> target) {
  const Tensor& P = yhat.value();
  detail::require(P.size() == target.size(), "bce_loss length mismatch: " + std::to_string(P.size()) + " vs " +
                                                  std::to_string(target.size()));
  detail::require(P.size() > 0, "bce_loss of empty vector");
  const double n = static_cast<double>(P.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double p = std::clamp(P[i], kBceEpsilon, 1.0 - kBceEpsilon);
    loss -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  loss /= n;
  const std::uint32_t ip = yhat.id;
  std::vector<double> y(target.begin(), target.end());
  return yhat.tape->record(Tensor(1, 1, loss), {yhat}, [ip, y = std::move(y), n](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    const Tensor& P = t.value(ip);
    if (Tensor* gp = t.grad_buffer(ip))
      for (std::size_t i = 0; i < P.size(); ++i) {
        const double p = P[i];
        if (p < kBceEpsilon || p > 1.0 - kBceEpsilon) continue;  // clamp is flat there
        (*gp)[i] += g * (-(y[i] / p) + (1.0 - y[i]) / (1.0 - p)) / n;
      }
  });
}

}  // namespace probias::nn
