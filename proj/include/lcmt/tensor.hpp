#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lcmt/error.hpp"
#include "lcmt/rng.hpp"

namespace lcmt {

// ---------------------------------------------------------------------------
// Tensor: a rank-2 row-major dense matrix of Real (float for training,
// double for gradient verification). Copies are shallow handles: data and
// grad buffers are shared, which is what lets backward closures capture
// operands cheaply. Use clone() for a deep copy.
//
// Invariants: rows*cols == data.size(); grad, when present, has the same
// size; every forward op checks its output for NaN/Inf and throws
// NonFiniteError instead of letting poison propagate.
// ---------------------------------------------------------------------------
template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  Tensor(long rows, long cols, bool requires_grad = false)
      : rows_(rows),
        cols_(cols),
        data_(std::make_shared<std::vector<Real>>(static_cast<size_t>(rows * cols), Real(0))),
        requires_grad_(requires_grad) {
    if (rows < 0 || cols < 0) throw DimError("tensor dims must be nonnegative");
    if (requires_grad_) grad_ = std::make_shared<std::vector<Real>>(data_->size(), Real(0));
  }

  static Tensor zeros(long r, long c) { return Tensor(r, c); }

  static Tensor full(long r, long c, Real v) {
    Tensor t(r, c);
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor from(long r, long c, std::initializer_list<Real> vals) {
    Tensor t(r, c);
    if (static_cast<long>(vals.size()) != r * c) throw DimError("from(): value count != r*c");
    std::copy(vals.begin(), vals.end(), t.data_->begin());
    return t;
  }

  static Tensor from_vec(long r, long c, const std::vector<Real>& vals, bool requires_grad = false) {
    Tensor t(r, c, requires_grad);
    if (static_cast<long>(vals.size()) != r * c) throw DimError("from_vec(): value count != r*c");
    std::copy(vals.begin(), vals.end(), t.data_->begin());
    return t;
  }

  static Tensor randn(long r, long c, Rng& rng, double stddev, bool requires_grad = false) {
    Tensor t(r, c, requires_grad);
    for (auto& x : *t.data_) x = static_cast<Real>(rng.next_normal() * stddev);
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  long rows() const { return rows_; }
  long cols() const { return cols_; }
  size_t size() const { return data_ ? data_->size() : 0; }
  bool requires_grad() const { return requires_grad_; }

  Real& at(long i, long j) { return (*data_)[static_cast<size_t>(i * cols_ + j)]; }
  Real at(long i, long j) const { return (*data_)[static_cast<size_t>(i * cols_ + j)]; }

  // Pointer semantics: a const Tensor is a const handle to shared storage,
  // so these stay callable from backward closures that captured by value.
  Real* data() const { return data_->data(); }
  Real* grad() const { return grad_ ? grad_->data() : nullptr; }

  // Scalar accessor for 1x1 loss tensors.
  Real item() const {
    if (rows_ != 1 || cols_ != 1) throw DimError("item(): tensor is not 1x1");
    return (*data_)[0];
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), Real(0));
  }

  Tensor clone() const {
    Tensor t(rows_, cols_, requires_grad_);
    if (data_) *t.data_ = *data_;
    if (grad_ && t.grad_) *t.grad_ = *grad_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  // Shared buffers, for the tape's intermediate-grad bookkeeping.
  const std::shared_ptr<std::vector<Real>>& grad_buffer() const { return grad_; }

 private:
  long rows_ = 0, cols_ = 0;
  std::shared_ptr<std::vector<Real>> data_;
  std::shared_ptr<std::vector<Real>> grad_;
  bool requires_grad_ = false;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// Tape: reverse-mode recorder. Ops append one backward closure per node;
// backward() replays them in reverse recording order (which is a reverse
// topological order, since an op records only after its inputs exist).
//
// Gradient rule: leaf tensors (created outside tape ops, requires_grad set
// by the caller) accumulate additively across backward() calls until
// zero_grad() is invoked on them; intermediate tensors created by tape ops
// are scratch and are reset at the start of every backward(). Consequently
// calling backward() twice without resetting leaves exactly doubles their
// gradients. This is the documented multi-loss accumulation rule.
// ---------------------------------------------------------------------------
template <typename Real>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

  void note_intermediate(const Tensor<Real>& t) {
    if (t.grad_buffer()) intermediates_.push_back(t.grad_buffer());
  }

  size_t size() const { return nodes_.size(); }

  void backward(Tensor<Real>& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) throw DimError("backward(): loss must be 1x1");
    if (!loss.requires_grad())
      throw TrainError("backward(): loss does not require grad (was it built on this tape?)");
    for (auto& g : intermediates_) std::fill(g->begin(), g->end(), Real(0));
    loss.grad()[0] = Real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<std::shared_ptr<std::vector<Real>>> intermediates_;
};

namespace detail {

template <typename Real>
inline void check_finite(const Tensor<Real>& t, const char* op) {
  const Real* p = t.data();
  for (size_t i = 0, n = t.size(); i < n; ++i) {
    if (!std::isfinite(static_cast<double>(p[i])))
      throw NonFiniteError(std::string(op) + ": non-finite value in forward output");
  }
}

template <typename Real>
inline bool wants_grad(const Tape<Real>* tape, std::initializer_list<const Tensor<Real>*> ins) {
  if (!tape) return false;
  for (const auto* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

// C = A(m x k) * B(k x n)
template <typename Real>
inline void mm_nn(const Real* a, const Real* b, Real* c, long m, long k, long n) {
  std::fill(c, c + m * n, Real(0));
  for (long i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (long l = 0; l < k; ++l) {
      const Real ail = arow[l];
      const Real* brow = b + l * n;
      for (long j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
}

// C += A(m x k) * B(n x k)^T
template <typename Real>
inline void mm_nt_acc(const Real* a, const Real* b, Real* c, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (long j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      Real acc = 0;
      for (long l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// C += A(m x k)^T * B(m x n)   -> C is (k x n)
template <typename Real>
inline void mm_tn_acc(const Real* a, const Real* b, Real* c, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    const Real* brow = b + i * n;
    for (long l = 0; l < k; ++l) {
      const Real ail = arow[l];
      Real* crow = c + l * n;
      for (long j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
}

// C += A(m x k) * B(k x n)
template <typename Real>
inline void mm_nn_acc(const Real* a, const Real* b, Real* c, long m, long k, long n) {
  for (long i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (long l = 0; l < k; ++l) {
      const Real ail = arow[l];
      const Real* brow = b + l * n;
      for (long j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
}

}  // namespace detail

// --------------------------------------------------------------------------
// Differentiable ops. Every op takes the tape first; pass nullptr for a pure
// forward pass (inference) -- no graph is built and outputs carry no grad.
// --------------------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.cols() != b.rows()) throw DimError("matmul: inner dims differ");
  Tensor<Real> out(a.rows(), b.cols(), detail::wants_grad(tape, {&a, &b}));
  detail::mm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  detail::check_finite(out, "matmul");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, b, out]() {
      // dA += dC * B^T ; dB += A^T * dC
      if (a.requires_grad())
        detail::mm_nt_acc(out.grad(), b.data(), a.grad(), a.rows(), b.cols(), a.cols());
      if (b.requires_grad())
        detail::mm_tn_acc(a.data(), out.grad(), b.grad(), a.rows(), a.cols(), b.cols());
    });
  }
  return out;
}

// a * b^T, with b given row-major (n x k). Saves materializing transposes in
// attention score computations.
template <typename Real>
Tensor<Real> matmul_nt(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.cols() != b.cols()) throw DimError("matmul_nt: inner dims differ");
  Tensor<Real> out(a.rows(), b.rows(), detail::wants_grad(tape, {&a, &b}));
  // reuse nt kernel on zeroed output
  detail::mm_nt_acc(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.rows());
  detail::check_finite(out, "matmul_nt");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, b, out]() {
      // C = A B^T : dA += dC * B ; dB += dC^T * A
      if (a.requires_grad())
        detail::mm_nn_acc(out.grad(), b.data(), a.grad(), a.rows(), b.rows(), a.cols());
      if (b.requires_grad())
        detail::mm_tn_acc(out.grad(), a.data(), b.grad(), a.rows(), b.rows(), a.cols());
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> add(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!a.same_shape(b)) throw DimError("add: shape mismatch");
  Tensor<Real> out(a.rows(), a.cols(), detail::wants_grad(tape, {&a, &b}));
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (size_t i = 0, n = out.size(); i < n; ++i) po[i] = pa[i] + pb[i];
  detail::check_finite(out, "add");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, b, out]() {
      const Real* g = out.grad();
      if (a.requires_grad()) {
        Real* ga = a.grad();
        for (size_t i = 0, n = out.size(); i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        Real* gb = b.grad();
        for (size_t i = 0, n = out.size(); i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mul(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!a.same_shape(b)) throw DimError("mul: shape mismatch");
  Tensor<Real> out(a.rows(), a.cols(), detail::wants_grad(tape, {&a, &b}));
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (size_t i = 0, n = out.size(); i < n; ++i) po[i] = pa[i] * pb[i];
  detail::check_finite(out, "mul");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, b, out]() {
      const Real* g = out.grad();
      if (a.requires_grad()) {
        Real* ga = a.grad();
        const Real* pb2 = b.data();
        for (size_t i = 0, n = out.size(); i < n; ++i) ga[i] += g[i] * pb2[i];
      }
      if (b.requires_grad()) {
        Real* gb = b.grad();
        const Real* pa2 = a.data();
        for (size_t i = 0, n = out.size(); i < n; ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> scale(Tape<Real>* tape, const Tensor<Real>& a, Real c) {
  Tensor<Real> out(a.rows(), a.cols(), detail::wants_grad(tape, {&a}));
  const Real* pa = a.data();
  Real* po = out.data();
  for (size_t i = 0, n = out.size(); i < n; ++i) po[i] = pa[i] * c;
  detail::check_finite(out, "scale");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, out, c]() {
      Real* ga = a.grad();
      const Real* g = out.grad();
      for (size_t i = 0, n = out.size(); i < n; ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

// a (r x c) + v (1 x c) broadcast down rows. The bias add.
template <typename Real>
Tensor<Real> add_rowvec(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& v) {
  if (v.rows() != 1 || v.cols() != a.cols()) throw DimError("add_rowvec: v must be 1 x cols(a)");
  Tensor<Real> out(a.rows(), a.cols(), detail::wants_grad(tape, {&a, &v}));
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) + v.at(0, j);
  detail::check_finite(out, "add_rowvec");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, v, out]() {
      if (a.requires_grad()) {
        Real* ga = a.grad();
        const Real* g = out.grad();
        for (size_t i = 0, n = out.size(); i < n; ++i) ga[i] += g[i];
      }
      if (v.requires_grad()) {
        Real* gv = v.grad();
        for (long i = 0; i < out.rows(); ++i)
          for (long j = 0; j < out.cols(); ++j) gv[j] += out.grad()[i * out.cols() + j];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> relu(Tape<Real>* tape, const Tensor<Real>& a) {
  Tensor<Real> out(a.rows(), a.cols(), detail::wants_grad(tape, {&a}));
  const Real* pa = a.data();
  Real* po = out.data();
  for (size_t i = 0, n = out.size(); i < n; ++i) po[i] = pa[i] > Real(0) ? pa[i] : Real(0);
  detail::check_finite(out, "relu");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, out]() {
      Real* ga = a.grad();
      const Real* g = out.grad();
      const Real* pa2 = a.data();
      for (size_t i = 0, n = out.size(); i < n; ++i)
        if (pa2[i] > Real(0)) ga[i] += g[i];
    });
  }
  return out;
}

// Mean over axis 0: (r x c) -> (1 x c). Eq-6-style phrase averaging.
template <typename Real>
Tensor<Real> mean_rows(Tape<Real>* tape, const Tensor<Real>& a) {
  if (a.rows() < 1) throw DimError("mean_rows: need at least one row");
  Tensor<Real> out(1, a.cols(), detail::wants_grad(tape, {&a}));
  const Real inv = Real(1) / static_cast<Real>(a.rows());
  for (long j = 0; j < a.cols(); ++j) {
    Real acc = 0;
    for (long i = 0; i < a.rows(); ++i) acc += a.at(i, j);
    out.at(0, j) = acc * inv;
  }
  detail::check_finite(out, "mean_rows");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, out, inv]() {
      Real* ga = a.grad();
      const Real* g = out.grad();
      for (long i = 0; i < a.rows(); ++i)
        for (long j = 0; j < a.cols(); ++j) ga[i * a.cols() + j] += g[j] * inv;
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> concat_rows(Tape<Real>* tape, const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw DimError("concat_rows: empty part list");
  long cols = parts.front().cols();
  long rows = 0;
  bool need = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimError("concat_rows: column mismatch");
    rows += p.rows();
    need = need || (tape && p.requires_grad());
  }
  Tensor<Real> out(rows, cols, need);
  long r0 = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + r0 * cols, p.data(), sizeof(Real) * p.size());
    r0 += p.rows();
  }
  detail::check_finite(out, "concat_rows");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([parts, out, cols]() {
      long r = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          Real* gp = p.grad();
          const Real* g = out.grad() + r * cols;
          for (size_t i = 0, n = p.size(); i < n; ++i) gp[i] += g[i];
        }
        r += p.rows();
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> concat_cols(Tape<Real>* tape, const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw DimError("concat_cols: empty part list");
  long rows = parts.front().rows();
  long cols = 0;
  bool need = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimError("concat_cols: row mismatch");
    cols += p.cols();
    need = need || (tape && p.requires_grad());
  }
  Tensor<Real> out(rows, cols, need);
  long c0 = 0;
  for (const auto& p : parts) {
    for (long i = 0; i < rows; ++i)
      std::memcpy(out.data() + i * cols + c0, p.data() + i * p.cols(), sizeof(Real) * p.cols());
    c0 += p.cols();
  }
  detail::check_finite(out, "concat_cols");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([parts, out, rows, cols]() {
      long c = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          for (long i = 0; i < rows; ++i) {
            Real* gp = p.grad() + i * p.cols();
            const Real* g = out.grad() + i * cols + c;
            for (long j = 0; j < p.cols(); ++j) gp[j] += g[j];
          }
        }
        c += p.cols();
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> slice_cols(Tape<Real>* tape, const Tensor<Real>& a, long c0, long c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw DimError("slice_cols: bad range");
  Tensor<Real> out(a.rows(), c1 - c0, detail::wants_grad(tape, {&a}));
  for (long i = 0; i < a.rows(); ++i)
    std::memcpy(out.data() + i * out.cols(), a.data() + i * a.cols() + c0,
                sizeof(Real) * out.cols());
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, out, c0]() {
      for (long i = 0; i < a.rows(); ++i) {
        Real* ga = a.grad() + i * a.cols() + c0;
        const Real* g = out.grad() + i * out.cols();
        for (long j = 0; j < out.cols(); ++j) ga[j] += g[j];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> slice_rows(Tape<Real>* tape, const Tensor<Real>& a, long r0, long r1) {
  if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw DimError("slice_rows: bad range");
  Tensor<Real> out(r1 - r0, a.cols(), detail::wants_grad(tape, {&a}));
  std::memcpy(out.data(), a.data() + r0 * a.cols(), sizeof(Real) * out.size());
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, out, r0]() {
      Real* ga = a.grad() + r0 * a.cols();
      const Real* g = out.grad();
      for (size_t i = 0, n = out.size(); i < n; ++i) ga[i] += g[i];
    });
  }
  return out;
}

// out = mask != 0 ? value : a. mask carries no gradient.
template <typename Real>
Tensor<Real> masked_fill(Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& mask,
                         Real value) {
  if (!a.same_shape(mask)) throw DimError("masked_fill: mask shape mismatch");
  Tensor<Real> out(a.rows(), a.cols(), detail::wants_grad(tape, {&a}));
  const Real* pa = a.data();
  const Real* pm = mask.data();
  Real* po = out.data();
  for (size_t i = 0, n = out.size(); i < n; ++i) po[i] = pm[i] != Real(0) ? value : pa[i];
  detail::check_finite(out, "masked_fill");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, mask, out]() {
      Real* ga = a.grad();
      const Real* g = out.grad();
      const Real* pm2 = mask.data();
      for (size_t i = 0, n = out.size(); i < n; ++i)
        if (pm2[i] == Real(0)) ga[i] += g[i];
    });
  }
  return out;
}

// Row-wise softmax, stabilized by max subtraction. Rows sum to 1 within 1e-6.
template <typename Real>
Tensor<Real> softmax_rows(Tape<Real>* tape, const Tensor<Real>& a) {
  Tensor<Real> out(a.rows(), a.cols(), detail::wants_grad(tape, {&a}));
  for (long i = 0; i < a.rows(); ++i) {
    Real mx = a.at(i, 0);
    for (long j = 1; j < a.cols(); ++j) mx = std::max(mx, a.at(i, j));
    Real sum = 0;
    for (long j = 0; j < a.cols(); ++j) {
      Real e = std::exp(a.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    Real inv = Real(1) / sum;
    for (long j = 0; j < a.cols(); ++j) out.at(i, j) *= inv;
  }
  detail::check_finite(out, "softmax_rows");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([a, out]() {
      // dx = p * (dy - sum_j dy_j p_j) per row
      Real* ga = a.grad();
      for (long i = 0; i < a.rows(); ++i) {
        const Real* p = out.data() + i * out.cols();
        const Real* dy = out.grad() + i * out.cols();
        Real dot = 0;
        for (long j = 0; j < out.cols(); ++j) dot += dy[j] * p[j];
        for (long j = 0; j < out.cols(); ++j) ga[i * a.cols() + j] += p[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

// Row layer normalization with learned gain/bias (each 1 x c).
template <typename Real>
Tensor<Real> layer_norm(Tape<Real>* tape, const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias, Real eps = Real(1e-5)) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
    throw DimError("layer_norm: gain/bias must be 1 x cols(x)");
  const long r = x.rows(), c = x.cols();
  Tensor<Real> out(r, c, detail::wants_grad(tape, {&x, &gain, &bias}));
  // cache normalized rows and inverse stddevs for backward
  auto xhat = std::make_shared<std::vector<Real>>(static_cast<size_t>(r * c));
  auto istd = std::make_shared<std::vector<Real>>(static_cast<size_t>(r));
  for (long i = 0; i < r; ++i) {
    Real mean = 0;
    for (long j = 0; j < c; ++j) mean += x.at(i, j);
    mean /= static_cast<Real>(c);
    Real var = 0;
    for (long j = 0; j < c; ++j) {
      Real d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<Real>(c);
    Real is = Real(1) / std::sqrt(var + eps);
    (*istd)[static_cast<size_t>(i)] = is;
    for (long j = 0; j < c; ++j) {
      Real xh = (x.at(i, j) - mean) * is;
      (*xhat)[static_cast<size_t>(i * c + j)] = xh;
      out.at(i, j) = xh * gain.at(0, j) + bias.at(0, j);
    }
  }
  detail::check_finite(out, "layer_norm");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([x, gain, bias, out, xhat, istd, r, c]() {
      for (long i = 0; i < r; ++i) {
        const Real* dy = out.grad() + i * c;
        const Real* xh = xhat->data() + i * c;
        if (gain.requires_grad()) {
          Real* gg = gain.grad();
          for (long j = 0; j < c; ++j) gg[j] += dy[j] * xh[j];
        }
        if (bias.requires_grad()) {
          Real* gb = bias.grad();
          for (long j = 0; j < c; ++j) gb[j] += dy[j];
        }
        if (x.requires_grad()) {
          // dxhat = dy * gain ; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          Real m1 = 0, m2 = 0;
          for (long j = 0; j < c; ++j) {
            Real dxh = dy[j] * gain.at(0, j);
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= static_cast<Real>(c);
          m2 /= static_cast<Real>(c);
          Real* gx = x.grad() + i * c;
          const Real is = (*istd)[static_cast<size_t>(i)];
          for (long j = 0; j < c; ++j) {
            Real dxh = dy[j] * gain.at(0, j);
            gx[j] += is * (dxh - m1 - xh[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// Gather rows of an embedding table. Backward scatter-adds into the table.
template <typename Real>
Tensor<Real> embedding(Tape<Real>* tape, const Tensor<Real>& table, const std::vector<int>& ids) {
  for (int id : ids)
    if (id < 0 || id >= table.rows()) throw IndexError("embedding: index out of range");
  Tensor<Real> out(static_cast<long>(ids.size()), table.cols(), detail::wants_grad(tape, {&table}));
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + static_cast<long>(i) * table.cols(),
                table.data() + ids[i] * table.cols(), sizeof(Real) * table.cols());
  detail::check_finite(out, "embedding");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([table, out, ids]() {
      for (size_t i = 0; i < ids.size(); ++i) {
        Real* gt = table.grad() + ids[i] * table.cols();
        const Real* g = out.grad() + static_cast<long>(i) * table.cols();
        for (long j = 0; j < table.cols(); ++j) gt[j] += g[j];
      }
    });
  }
  return out;
}

// Mean of -log softmax(logits)[i, targets[i]] over rows. Fused log-softmax
// keeps it stable for extreme logits.
template <typename Real>
Tensor<Real> cross_entropy(Tape<Real>* tape, const Tensor<Real>& logits,
                           const std::vector<int>& targets) {
  if (static_cast<long>(targets.size()) != logits.rows())
    throw DimError("cross_entropy: one target per logit row required");
  for (int t : targets)
    if (t < 0 || t >= logits.cols()) throw IndexError("cross_entropy: target index out of range");
  const long n = logits.rows(), v = logits.cols();
  auto probs = std::make_shared<std::vector<Real>>(static_cast<size_t>(n * v));
  Real loss = 0;
  for (long i = 0; i < n; ++i) {
    const Real* row = logits.data() + i * v;
    Real mx = row[0];
    for (long j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    Real sum = 0;
    for (long j = 0; j < v; ++j) {
      Real e = std::exp(row[j] - mx);
      (*probs)[static_cast<size_t>(i * v + j)] = e;
      sum += e;
    }
    Real inv = Real(1) / sum;
    for (long j = 0; j < v; ++j) (*probs)[static_cast<size_t>(i * v + j)] *= inv;
    loss -= (row[targets[static_cast<size_t>(i)]] - mx) - std::log(sum);
  }
  loss /= static_cast<Real>(n);
  Tensor<Real> out(1, 1, detail::wants_grad(tape, {&logits}));
  out.data()[0] = loss;
  detail::check_finite(out, "cross_entropy");
  if (out.requires_grad()) {
    tape->note_intermediate(out);
    tape->record([logits, out, probs, targets, n, v]() {
      const Real d = out.grad()[0] / static_cast<Real>(n);
      Real* gl = logits.grad();
      for (long i = 0; i < n; ++i) {
        const Real* p = probs->data() + i * v;
        for (long j = 0; j < v; ++j) gl[i * v + j] += d * p[j];
        gl[i * v + targets[static_cast<size_t>(i)]] -= d;
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Parameter utilities
// --------------------------------------------------------------------------

template <typename Real>
using NamedParams = std::vector<std::pair<std::string, Tensor<Real>*>>;

template <typename Real>
void zero_grad(const NamedParams<Real>& params) {
  for (auto& [name, t] : params) t->zero_grad();
}

template <typename Real>
double grad_global_norm(const NamedParams<Real>& params) {
  double sq = 0;
  for (auto& [name, t] : params) {
    if (!t->requires_grad()) continue;
    const Real* g = t->grad();
    for (size_t i = 0, n = t->size(); i < n; ++i) sq += static_cast<double>(g[i]) * g[i];
  }
  return std::sqrt(sq);
}

template <typename Real>
void clip_grad_norm(const NamedParams<Real>& params, double max_norm) {
  double norm = grad_global_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const Real s = static_cast<Real>(max_norm / norm);
  for (auto& [name, t] : params) {
    if (!t->requires_grad()) continue;
    Real* g = t->grad();
    for (size_t i = 0, n = t->size(); i < n; ++i) g[i] *= s;
  }
}

// --------------------------------------------------------------------------
// grad_check: analytic vs central finite differences over every element of
// every requires_grad parameter (frozen tensors are skipped). loss_fn must
// be a deterministic closure that rebuilds the loss on the tape it is given.
// Error metric per element: |a - n| / max(1, |a| + |n|), so it reads as a
// relative error for O(1)-and-larger gradients and an absolute one below
// that, where FD noise dominates. Run with Real = double.
// --------------------------------------------------------------------------
template <typename Real>
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  size_t checked = 0;
};

template <typename Real>
GradCheckReport<Real> grad_check_report(const std::function<Tensor<Real>(Tape<Real>&)>& loss_fn,
                                        const NamedParams<Real>& params, Real eps) {
  auto eval = [&]() -> Real {
    Tape<Real> t;
    Tensor<Real> loss = loss_fn(t);
    Real v = loss.item();
    if (!std::isfinite(static_cast<double>(v))) throw TrainError("grad_check: non-finite loss");
    return v;
  };

  zero_grad(params);
  std::vector<std::vector<Real>> analytic;
  {
    Tape<Real> t;
    Tensor<Real> loss = loss_fn(t);
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw TrainError("grad_check: non-finite loss");
    t.backward(loss);
    for (auto& [name, p] : params) {
      if (!p->requires_grad()) {
        analytic.emplace_back();
        continue;
      }
      analytic.emplace_back(p->grad(), p->grad() + p->size());
    }
  }

  GradCheckReport<Real> rep;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<Real>* p = params[pi].second;
    if (!p->requires_grad()) continue;
    Real* w = p->data();
    for (size_t i = 0; i < p->size(); ++i) {
      const Real keep = w[i];
      w[i] = keep + eps;
      const Real fp = eval();
      w[i] = keep - eps;
      const Real fm = eval();
      w[i] = keep;
      const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) /
                             (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[pi][i]);
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = params[pi].first;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

template <typename Real>
double grad_check(const std::function<Tensor<Real>(Tape<Real>&)>& loss_fn,
                  const NamedParams<Real>& params, Real eps) {
  return grad_check_report<Real>(loss_fn, params, eps).max_rel_err;
}

}  // namespace lcmt
