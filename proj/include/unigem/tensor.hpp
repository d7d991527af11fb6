#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/rng.hpp"

namespace unigem {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major tensor. Copies share storage; element data is treated as
/// immutable once the tensor participates in an op, the gradient slot is the
/// only mutable part. A tensor with an allocated gradient slot is "tracked":
/// tape ops record adjoints only along paths that reach tracked tensors.
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<Real>>(shape_size(shape_), Real(0))) {}

  Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)) {
    if (values.size() != shape_size(shape_))
      throw ShapeError("tensor init: " + std::to_string(values.size()) +
                       " values for shape " + shape_to_string(shape_));
    data_ = std::make_shared<std::vector<Real>>(std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  Real* data() { return data_->data(); }
  const Real* data() const { return data_->data(); }

  Real item() const {
    if (size() != 1)
      throw ShapeError("item(): tensor has shape " + shape_to_string(shape_));
    return (*data_)[0];
  }

  Real at(std::size_t i) const { return (*data_)[i]; }

  /// Allocate (zeroed) gradient slot; marks this tensor as tracked.
  void ensure_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<Real>>(size(), Real(0));
  }
  bool tracked() const { return static_cast<bool>(grad_); }
  Real* grad() { return grad_->data(); }
  const Real* grad() const { return grad_->data(); }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), Real(0));
  }

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<Real>> data_;
  std::shared_ptr<std::vector<Real>> grad_;
};

template <class Real>
Tensor<Real> zeros(Shape shape) {
  return Tensor<Real>(std::move(shape));
}

template <class Real>
Tensor<Real> full(Shape shape, Real value) {
  Tensor<Real> t(std::move(shape));
  std::fill(t.data(), t.data() + t.size(), value);
  return t;
}

template <class Real>
Tensor<Real> ones(Shape shape) {
  return full<Real>(std::move(shape), Real(1));
}

template <class Real>
Tensor<Real> scalar(Real value) {
  return Tensor<Real>(Shape{}, {value});
}

template <class Real>
Tensor<Real> randn(Shape shape, Rng& rng) {
  Tensor<Real> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<Real>(rng.normal());
  return t;
}

// ---------------------------------------------------------------------------
// Broadcasting: numpy-style trailing-dimension alignment with extent-1
// stretching. Documented contract for primitive_ops.
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b,
                             const char* opname) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError(std::string(opname) + ": shapes " + shape_to_string(a) +
                       " and " + shape_to_string(b) + " are not broadcastable");
    out[rank - 1 - i] = std::max(ea, eb);
  }
  return out;
}

/// Strides of `in` aligned to the broadcast output shape; 0 where stretched.
inline std::vector<std::size_t> broadcast_strides(const Shape& in,
                                                  const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t d_in = in.size() - 1 - i;
    const std::size_t d_out = out.size() - 1 - i;
    strides[d_out] = (in[d_in] == 1) ? 0 : s;
    s *= in[d_in];
  }
  return strides;
}

/// Maps a linear index in the output to a linear index in a broadcast input.
struct BroadcastIndexer {
  std::vector<std::size_t> out_extents;
  std::vector<std::size_t> in_strides;

  BroadcastIndexer(const Shape& in, const Shape& out)
      : out_extents(out), in_strides(broadcast_strides(in, out)) {}

  std::size_t operator()(std::size_t linear) const {
    std::size_t offset = 0;
    for (std::size_t d = out_extents.size(); d-- > 0;) {
      const std::size_t coord = linear % out_extents[d];
      linear /= out_extents[d];
      offset += coord * in_strides[d];
    }
    return offset;
  }
};

// ---------------------------------------------------------------------------
// Tape: single-owner record of primitive ops; replaying in reverse populates
// gradient slots of every tracked tensor that the output depends on.
// ---------------------------------------------------------------------------

template <class Real>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t num_ops() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  /// Seeds d(out)/d(out)=1 and replays adjoints in reverse order.
  void backward(Tensor<Real>& out) {
    if (out.size() != 1)
      throw ShapeError("backward: output must be scalar, got shape " +
                       shape_to_string(out.shape()));
    if (!out.tracked()) return;  // nothing tracked upstream
    out.grad()[0] += Real(1);
    for (std::size_t i = ops_.size(); i-- > 0;) ops_[i]();
  }

  // -- elementwise binary with broadcasting ---------------------------------

  Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary(
        a, b, "add", [](Real x, Real y) { return x + y; },
        [](Real, Real, Real g) { return g; },
        [](Real, Real, Real g) { return g; });
  }

  Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary(
        a, b, "sub", [](Real x, Real y) { return x - y; },
        [](Real, Real, Real g) { return g; },
        [](Real, Real, Real g) { return -g; });
  }

  Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary(
        a, b, "mul", [](Real x, Real y) { return x * y; },
        [](Real, Real y, Real g) { return g * y; },
        [](Real x, Real, Real g) { return g * x; });
  }

  Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary(
        a, b, "div", [](Real x, Real y) { return x / y; },
        [](Real, Real y, Real g) { return g / y; },
        [](Real x, Real y, Real g) { return -g * x / (y * y); });
  }

  // -- scalar ops -------------------------------------------------------------

  Tensor<Real> add_scalar(const Tensor<Real>& a, Real c) {
    return unary(
        a, [c](Real x) { return x + c; }, [](Real, Real g) { return g; });
  }

  Tensor<Real> mul_scalar(const Tensor<Real>& a, Real c) {
    return unary(
        a, [c](Real x) { return x * c; }, [c](Real, Real g) { return g * c; });
  }

  Tensor<Real> neg(const Tensor<Real>& a) { return mul_scalar(a, Real(-1)); }

  // -- elementwise unary ------------------------------------------------------

  Tensor<Real> sqrt(const Tensor<Real>& a) {
    return unary(
        a, [](Real x) { return std::sqrt(x); },
        [](Real x, Real g) { return g / (Real(2) * std::sqrt(x)); });
  }

  Tensor<Real> exp(const Tensor<Real>& a) {
    return unary(
        a, [](Real x) { return std::exp(x); },
        [](Real x, Real g) { return g * std::exp(x); });
  }

  Tensor<Real> log(const Tensor<Real>& a) {
    return unary(
        a, [](Real x) { return std::log(x); },
        [](Real x, Real g) { return g / x; });
  }

  Tensor<Real> tanh(const Tensor<Real>& a) {
    return unary(
        a, [](Real x) { return std::tanh(x); },
        [](Real x, Real g) {
          const Real t = std::tanh(x);
          return g * (Real(1) - t * t);
        });
  }

  /// SiLU gated activation x * sigmoid(x).
  Tensor<Real> silu(const Tensor<Real>& a) {
    return unary(
        a,
        [](Real x) { return x / (Real(1) + std::exp(-x)); },
        [](Real x, Real g) {
          const Real s = Real(1) / (Real(1) + std::exp(-x));
          return g * s * (Real(1) + x * (Real(1) - s));
        });
  }

  Tensor<Real> square(const Tensor<Real>& a) { return mul(a, a); }

  /// |x| with sign subgradient (0 at the kink).
  Tensor<Real> abs(const Tensor<Real>& a) {
    return unary(
        a, [](Real x) { return std::abs(x); },
        [](Real x, Real g) {
          return x > Real(0) ? g : (x < Real(0) ? -g : Real(0));
        });
  }

  /// Clamp to [lo, hi]; subgradient is 1 strictly inside, 0 outside.
  Tensor<Real> clamp(const Tensor<Real>& a, Real lo, Real hi) {
    return unary(
        a,
        [lo, hi](Real x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](Real x, Real g) { return (x > lo && x < hi) ? g : Real(0); });
  }

  Tensor<Real> clamp_min(const Tensor<Real>& a, Real lo) {
    return unary(
        a, [lo](Real x) { return std::max(lo, x); },
        [lo](Real x, Real g) { return x > lo ? g : Real(0); });
  }

  // -- matrix multiply --------------------------------------------------------

  Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
      throw ShapeError("matmul: shapes " + shape_to_string(a.shape()) +
                       " and " + shape_to_string(b.shape()) + " do not conform");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor<Real> out(Shape{m, n});
    using Mat =
        Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<Mat>;
    using CMap = Eigen::Map<const Mat>;
    Map(out.data(), m, n).noalias() =
        CMap(a.data(), m, k) * CMap(b.data(), k, n);
    if (should_record(a, b)) {
      prepare(out);
      Tensor<Real> ca = a, cb = b, co = out;
      record([ca, cb, co, m, k, n]() mutable {
        if (ca.tracked())
          Map(ca.grad(), m, k).noalias() +=
              CMap(co.grad(), m, n) * CMap(cb.data(), k, n).transpose();
        if (cb.tracked())
          Map(cb.grad(), k, n).noalias() +=
              CMap(ca.data(), m, k).transpose() * CMap(co.grad(), m, n);
      });
    }
    return out;
  }

  // -- shape ops --------------------------------------------------------------

  Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
    if (shape_size(shape) != a.size())
      throw ShapeError("reshape: size mismatch " + shape_to_string(a.shape()) +
                       " -> " + shape_to_string(shape));
    Tensor<Real> out(shape);
    std::copy(a.data(), a.data() + a.size(), out.data());
    if (should_record(a)) {
      prepare(out);
      Tensor<Real> ca = a, co = out;
      record([ca, co]() mutable {
        for (std::size_t i = 0; i < ca.size(); ++i)
          ca.grad()[i] += co.grad()[i];
      });
    }
    return out;
  }

  Tensor<Real> concat(const std::vector<Tensor<Real>>& parts,
                      std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape out_shape = parts[0].shape();
    if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
      if (p.rank() != out_shape.size())
        throw ShapeError("concat: rank mismatch");
      for (std::size_t d = 0; d < out_shape.size(); ++d)
        if (d != axis && p.shape()[d] != out_shape[d])
          throw ShapeError("concat: shapes " + shape_to_string(out_shape) +
                           " and " + shape_to_string(p.shape()) +
                           " differ off-axis");
      total += p.shape()[axis];
    }
    out_shape[axis] = total;
    Tensor<Real> out(out_shape);

    // outer = product of dims before axis, inner = product after
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d)
      inner *= out_shape[d];

    std::size_t col_offset = 0;
    for (const auto& p : parts) {
      const std::size_t width = p.shape()[axis] * inner;
      for (std::size_t o = 0; o < outer; ++o)
        std::copy(p.data() + o * width, p.data() + (o + 1) * width,
                  out.data() + o * total * inner + col_offset);
      col_offset += width;
    }

    bool any_tracked = false;
    for (const auto& p : parts) any_tracked |= p.tracked();
    if (recording_ && any_tracked) {
      prepare(out);
      std::vector<Tensor<Real>> cp = parts;
      Tensor<Real> co = out;
      const std::size_t row = total * inner;
      record([cp, co, outer, row]() mutable {
        std::size_t col_offset = 0;
        for (auto& p : cp) {
          const std::size_t w = p.size() / outer;
          if (p.tracked()) {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < w; ++i)
                p.grad()[o * w + i] += co.grad()[o * row + col_offset + i];
          }
          col_offset += w;
        }
      });
    }
    return out;
  }

  Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis,
                     std::size_t start, std::size_t stop) {
    if (axis >= a.rank() || start > stop || stop > a.shape()[axis])
      throw ShapeError("slice: bad range on shape " +
                       shape_to_string(a.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] = stop - start;
    Tensor<Real> out(out_shape);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
    const std::size_t in_row = a.shape()[axis] * inner;
    const std::size_t out_row = (stop - start) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(a.data() + o * in_row + start * inner,
                a.data() + o * in_row + stop * inner, out.data() + o * out_row);
    if (should_record(a)) {
      prepare(out);
      Tensor<Real> ca = a, co = out;
      record([ca, co, outer, inner, in_row, out_row, start]() mutable {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < out_row; ++i)
            ca.grad()[o * in_row + start * inner + i] +=
                co.grad()[o * out_row + i];
      });
    }
    return out;
  }

  /// Rows of `a` (leading axis) selected by index list; trailing dims kept.
  Tensor<Real> gather_rows(const Tensor<Real>& a,
                           const std::vector<std::size_t>& idx) {
    if (a.rank() < 1) throw ShapeError("gather_rows: need rank >= 1");
    const std::size_t rows = a.shape()[0];
    const std::size_t width = a.size() / std::max<std::size_t>(rows, 1);
    for (std::size_t i : idx)
      if (i >= rows)
        throw ShapeError("gather_rows: index " + std::to_string(i) +
                         " out of " + std::to_string(rows));
    Shape out_shape = a.shape();
    out_shape[0] = idx.size();
    Tensor<Real> out(out_shape);
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy(a.data() + idx[k] * width, a.data() + (idx[k] + 1) * width,
                out.data() + k * width);
    if (should_record(a)) {
      prepare(out);
      Tensor<Real> ca = a, co = out;
      record([ca, co, idx, width]() mutable {
        for (std::size_t k = 0; k < idx.size(); ++k)
          for (std::size_t i = 0; i < width; ++i)
            ca.grad()[idx[k] * width + i] += co.grad()[k * width + i];
      });
    }
    return out;
  }

  /// out[idx[k]] += a[k] over the leading axis; adjoint of gather_rows.
  Tensor<Real> scatter_add_rows(const Tensor<Real>& a,
                                const std::vector<std::size_t>& idx,
                                std::size_t out_rows) {
    if (a.rank() < 1 || a.shape()[0] != idx.size())
      throw ShapeError("scatter_add_rows: leading extent " +
                       shape_to_string(a.shape()) + " != index count " +
                       std::to_string(idx.size()));
    const std::size_t width =
        a.size() / std::max<std::size_t>(a.shape()[0], 1);
    for (std::size_t i : idx)
      if (i >= out_rows) throw ShapeError("scatter_add_rows: index out of range");
    Shape out_shape = a.shape();
    out_shape[0] = out_rows;
    Tensor<Real> out(out_shape);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t i = 0; i < width; ++i)
        out.data()[idx[k] * width + i] += a.data()[k * width + i];
    if (should_record(a)) {
      prepare(out);
      Tensor<Real> ca = a, co = out;
      record([ca, co, idx, width]() mutable {
        for (std::size_t k = 0; k < idx.size(); ++k)
          for (std::size_t i = 0; i < width; ++i)
            ca.grad()[k * width + i] += co.grad()[idx[k] * width + i];
      });
    }
    return out;
  }

  // -- reductions -------------------------------------------------------------

  Tensor<Real> sum(const Tensor<Real>& a, const std::vector<std::size_t>& axes,
                   bool keepdim) {
    return reduce(a, axes, keepdim, Real(1));
  }

  Tensor<Real> mean(const Tensor<Real>& a, const std::vector<std::size_t>& axes,
                    bool keepdim) {
    std::size_t count = 1;
    for (std::size_t ax : axes) {
      if (ax >= a.rank()) throw ShapeError("mean: axis out of range");
      count *= a.shape()[ax];
    }
    return reduce(a, axes, keepdim, Real(1) / static_cast<Real>(count));
  }

  Tensor<Real> sum_all(const Tensor<Real>& a) {
    std::vector<std::size_t> axes(a.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(a, axes, false, Real(1));
  }

  Tensor<Real> mean_all(const Tensor<Real>& a) {
    std::vector<std::size_t> axes(a.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(a, axes, false, Real(1) / static_cast<Real>(a.size()));
  }

  /// Numerically stable softmax over the last axis.
  Tensor<Real> softmax_last(const Tensor<Real>& a) {
    if (a.rank() < 1) throw ShapeError("softmax_last: need rank >= 1");
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.size() / cols;
    Tensor<Real> out(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* x = a.data() + r * cols;
      Real* y = out.data() + r * cols;
      Real mx = x[0];
      for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
      Real s = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        y[c] = std::exp(x[c] - mx);
        s += y[c];
      }
      for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
    }
    if (should_record(a)) {
      prepare(out);
      Tensor<Real> ca = a, co = out;
      record([ca, co, rows, cols]() mutable {
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* y = co.data() + r * cols;
          const Real* gy = co.grad() + r * cols;
          Real dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
          for (std::size_t c = 0; c < cols; ++c)
            ca.grad()[r * cols + c] += y[c] * (gy[c] - dot);
        }
      });
    }
    return out;
  }

 private:
  bool should_record(const Tensor<Real>& a) const {
    return recording_ && a.tracked();
  }
  bool should_record(const Tensor<Real>& a, const Tensor<Real>& b) const {
    return recording_ && (a.tracked() || b.tracked());
  }
  void prepare(Tensor<Real>& out) { out.ensure_grad(); }
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  template <class F, class DF>
  Tensor<Real> unary(const Tensor<Real>& a, F f, DF df) {
    Tensor<Real> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
    if (should_record(a)) {
      prepare(out);
      Tensor<Real> ca = a, co = out;
      record([ca, co, df]() mutable {
        for (std::size_t i = 0; i < ca.size(); ++i)
          ca.grad()[i] += df(ca.data()[i], co.grad()[i]);
      });
    }
    return out;
  }

  template <class F, class DA, class DB>
  Tensor<Real> binary(const Tensor<Real>& a, const Tensor<Real>& b,
                      const char* name, F f, DA dfa, DB dfb) {
    if (a.shape() == b.shape()) {
      Tensor<Real> out(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i)
        out.data()[i] = f(a.data()[i], b.data()[i]);
      if (should_record(a, b)) {
        prepare(out);
        Tensor<Real> ca = a, cb = b, co = out;
        record([ca, cb, co, dfa, dfb]() mutable {
          for (std::size_t i = 0; i < co.size(); ++i) {
            const Real g = co.grad()[i];
            if (ca.tracked()) ca.grad()[i] += dfa(ca.data()[i], cb.data()[i], g);
            if (cb.tracked()) cb.grad()[i] += dfb(ca.data()[i], cb.data()[i], g);
          }
        });
      }
      return out;
    }
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    const BroadcastIndexer ia(a.shape(), out_shape);
    const BroadcastIndexer ib(b.shape(), out_shape);
    Tensor<Real> out(out_shape);
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data()[i] = f(a.data()[ia(i)], b.data()[ib(i)]);
    if (should_record(a, b)) {
      prepare(out);
      Tensor<Real> ca = a, cb = b, co = out;
      record([ca, cb, co, ia, ib, dfa, dfb]() mutable {
        for (std::size_t i = 0; i < co.size(); ++i) {
          const Real g = co.grad()[i];
          const std::size_t oa = ia(i), ob = ib(i);
          if (ca.tracked()) ca.grad()[oa] += dfa(ca.data()[oa], cb.data()[ob], g);
          if (cb.tracked()) cb.grad()[ob] += dfb(ca.data()[oa], cb.data()[ob], g);
        }
      });
    }
    return out;
  }

  Tensor<Real> reduce(const Tensor<Real>& a,
                      const std::vector<std::size_t>& axes, bool keepdim,
                      Real scale) {
    std::vector<bool> reduced(a.rank(), false);
    for (std::size_t ax : axes) {
      if (ax >= a.rank()) throw ShapeError("reduce: axis out of range");
      reduced[ax] = true;
    }
    Shape out_shape;
    Shape kept_shape(a.rank());  // output shape with reduced dims as 1
    for (std::size_t d = 0; d < a.rank(); ++d) {
      kept_shape[d] = reduced[d] ? 1 : a.shape()[d];
      if (!reduced[d])
        out_shape.push_back(a.shape()[d]);
      else if (keepdim)
        out_shape.push_back(1);
    }
    Tensor<Real> out(out_shape);
    // map each input element to its output slot via kept_shape strides
    const BroadcastIndexer im(kept_shape, a.shape());
    for (std::size_t i = 0; i < a.size(); ++i)
      out.data()[im(i)] += a.data()[i] * scale;
    if (should_record(a)) {
      prepare(out);
      Tensor<Real> ca = a, co = out;
      record([ca, co, im, scale]() mutable {
        for (std::size_t i = 0; i < ca.size(); ++i)
          ca.grad()[i] += co.grad()[im(i)] * scale;
      });
    }
    return out;
  }

  bool recording_;
  std::vector<std::function<void()>> ops_;
};

/// Named parameter collection with deterministic ordering.
template <class Real>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Real>>>;

template <class Real>
Tensor<Real>* find_tensor(NamedTensors<Real>& store, const std::string& name) {
  for (auto& [n, t] : store)
    if (n == name) return &t;
  return nullptr;
}

}  // namespace unigem
