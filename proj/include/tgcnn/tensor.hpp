#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tgcnn/error.hpp"

namespace tgcnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Correctly rounded sum of a sequence (Shewchuk partials, as in Python's
// math.fsum). The result does not depend on the order of the inputs.
inline double exact_sum(std::span<const double> xs) {
  std::vector<double> partials;
  for (double x : xs) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  std::size_t n = partials.size();
  if (n == 0) return 0.0;
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  // Round-half-even fix-up when the remaining partials push past a tie.
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) ||
                (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

/// Dense row-major array of float64 values.
///
/// Invariants: rank >= 1, every dimension >= 1, size() == product(shape).
/// Values are finite when built through tensor_create(); operation results
/// are checked when they are recorded on an autodiff Graph.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double value) {
    validate_shape(shape);
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }
  double& at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
  }

  // Scalar value of a single-element tensor.
  double item() const {
    if (data_.size() != 1) {
      throw ShapeError("item: tensor has " + std::to_string(data_.size()) +
                       " elements");
    }
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: rank must be >= 1");
    for (std::size_t d : shape) {
      if (d == 0) {
        throw ShapeError("tensor: zero dimension in " + shape_str(shape));
      }
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("at: index rank mismatch");
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) throw ShapeError("at: index out of range");
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

// Checked constructor: copies values, rejects length mismatch and NaN/Inf.
inline Tensor tensor_create(Shape shape, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("tensor_create: non-finite value");
    }
  }
  return Tensor(std::move(shape),
                std::vector<double>(values.begin(), values.end()));
}

inline Tensor tensor_create(Shape shape, std::initializer_list<double> values) {
  return tensor_create(std::move(shape),
                       std::span<const double>(values.begin(), values.size()));
}

enum class ElementwiseOp { add, sub, mul, div };

// Guard below which a divisor is rejected instead of producing Inf.
inline constexpr double kMinDivisor = 1e-300;

// Broadcast rule: b's axes align with a's trailing axes; each aligned b
// dimension must equal a's or be 1 (stretched). rank(b) <= rank(a).
inline bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  const std::size_t lead = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i] != a[lead + i] && b[i] != 1) return false;
  }
  return true;
}

// For every flat index of a, the flat index of the broadcast element of b.
inline std::vector<std::size_t> broadcast_index(const Shape& a,
                                                const Shape& b) {
  const std::size_t lead = a.size() - b.size();
  // Strides of b expressed on a's axes, zero where b is stretched/absent.
  std::vector<std::size_t> bstride(a.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = b.size(); i-- > 0;) {
    bstride[lead + i] = b[i] == 1 ? 0 : s;
    s *= b[i];
  }
  const std::size_t n = shape_size(a);
  std::vector<std::size_t> out(n);
  std::vector<std::size_t> idx(a.size(), 0);
  std::size_t boff = 0;
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = boff;
    for (std::size_t ax = a.size(); ax-- > 0;) {
      ++idx[ax];
      boff += bstride[ax];
      if (idx[ax] < a[ax]) break;
      boff -= bstride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

inline Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  if (!broadcastable(a.shape(), b.shape())) {
    throw ShapeError("elementwise: cannot broadcast " + shape_str(b.shape()) +
                     " onto " + shape_str(a.shape()));
  }
  std::vector<double> out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  auto apply = [op](double x, double y) {
    switch (op) {
      case ElementwiseOp::add: return x + y;
      case ElementwiseOp::sub: return x - y;
      case ElementwiseOp::mul: return x * y;
      case ElementwiseOp::div:
        if (std::fabs(y) < kMinDivisor) {
          throw NumericError("elementwise: division by |x| < 1e-300");
        }
        return x / y;
    }
    return 0.0;
  };
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(ad[i], bd[i]);
  } else {
    const auto bidx = broadcast_index(a.shape(), b.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = apply(ad[i], bd[bidx[i]]);
    }
  }
  return Tensor(a.shape(), std::move(out));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(ElementwiseOp::add, a, b);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(ElementwiseOp::sub, a, b);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(ElementwiseOp::mul, a, b);
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise(ElementwiseOp::div, a, b);
}

// Sum of `grad` (shaped like a) down to b's shape; the adjoint of broadcast.
inline Tensor unbroadcast(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  Tensor out = Tensor::zeros(target);
  const auto bidx = broadcast_index(grad.shape(), target);
  auto od = out.mutable_data();
  const auto gd = grad.data();
  for (std::size_t i = 0; i < gd.size(); ++i) od[bidx[i]] += gd[i];
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) +
                     " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ad[i * k + p] * bd[p * n + j];
      out[i * n + j] = acc;
    }
  }
  return Tensor({m, n}, std::move(out));
}

inline Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: rank must be 2");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  }
  return Tensor({n, m}, std::move(out));
}

namespace detail {

inline std::size_t check_axis(std::size_t axis, std::size_t rank,
                              const char* what) {
  if (axis >= rank) {
    throw ShapeError(std::string(what) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return axis;
}

// outer = product of dims before axis, inner = product after.
inline std::pair<std::size_t, std::size_t> outer_inner(const Shape& s,
                                                       std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

}  // namespace detail

inline Tensor concat(std::size_t axis, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: empty part list");
  const Shape& ref = parts.front().shape();
  detail::check_axis(axis, ref.size(), "concat");
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) {
        throw ShapeError("concat: shape mismatch off the concat axis (" +
                         shape_str(p.shape()) + " vs " + shape_str(ref) + ")");
      }
    }
    total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const auto [outer, inner] = detail::outer_inner(ref, axis);
  std::vector<double> out;
  out.reserve(shape_size(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    for (const Tensor& p : parts) {
      const std::size_t block = p.dim(axis) * inner;
      const auto d = p.data().subspan(o * block, block);
      out.insert(out.end(), d.begin(), d.end());
    }
  }
  return Tensor(std::move(out_shape), std::move(out));
}

inline Tensor concat(std::size_t axis, std::initializer_list<Tensor> parts) {
  return concat(axis, std::span<const Tensor>(parts.begin(), parts.size()));
}

// Contiguous slice [begin, begin+len) along axis.
inline Tensor slice(const Tensor& t, std::size_t axis, std::size_t begin,
                    std::size_t len) {
  detail::check_axis(axis, t.rank(), "slice");
  if (len == 0 || begin + len > t.dim(axis)) {
    throw ShapeError("slice: range out of bounds");
  }
  const auto [outer, inner] = detail::outer_inner(t.shape(), axis);
  Shape out_shape = t.shape();
  out_shape[axis] = len;
  std::vector<double> out;
  out.reserve(shape_size(out_shape));
  const std::size_t src_block = t.dim(axis) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    const auto d = t.data().subspan(o * src_block + begin * inner, len * inner);
    out.insert(out.end(), d.begin(), d.end());
  }
  return Tensor(std::move(out_shape), std::move(out));
}

inline std::pair<Tensor, Tensor> split_half(std::size_t axis, const Tensor& t) {
  detail::check_axis(axis, t.rank(), "split_half");
  const std::size_t n = t.dim(axis);
  if (n % 2 != 0) {
    throw ShapeError("split_half: odd size " + std::to_string(n) +
                     " along axis " + std::to_string(axis));
  }
  return {slice(t, axis, 0, n / 2), slice(t, axis, n / 2, n / 2)};
}

enum class ReduceOp { sum, mean };

// Reduction along one axis (the axis is removed; a rank-1 input reduces to
// shape [1]) or over all elements (nullopt, result shape [1]). Sums run as a
// linear scan in increasing row-major index.
inline Tensor reduce(ReduceOp op, std::optional<std::size_t> axis,
                     const Tensor& t) {
  if (!axis) {
    double acc = 0.0;
    for (double v : t.data()) acc += v;
    if (op == ReduceOp::mean) acc /= static_cast<double>(t.size());
    return Tensor::scalar(acc);
  }
  detail::check_axis(*axis, t.rank(), "reduce");
  const auto [outer, inner] = detail::outer_inner(t.shape(), *axis);
  const std::size_t n = t.dim(*axis);
  Shape out_shape;
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i != *axis) out_shape.push_back(t.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  const auto d = t.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < inner; ++i) {
        out[o * inner + i] += d[(o * n + k) * inner + i];
      }
    }
  }
  if (op == ReduceOp::mean) {
    for (double& v : out) v /= static_cast<double>(n);
  }
  return Tensor(std::move(out_shape), std::move(out));
}

inline Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_size(shape) != t.size()) {
    throw ShapeError("reshape: " + shape_str(t.shape()) + " -> " +
                     shape_str(shape) + " changes element count");
  }
  return Tensor(std::move(shape), t.values());
}

// out.shape[i] = t.shape[axes[i]].
inline Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes) {
  const std::size_t r = t.rank();
  if (axes.size() != r) throw ShapeError("permute: axes rank mismatch");
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: invalid axes");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = t.dim(axes[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) {
    in_stride[i] = in_stride[i + 1] * t.dim(i + 1);
  }
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_stride[axes[i]];
  std::vector<double> out(t.size());
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  const auto d = t.data();
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = d[src];
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += step[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= step[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return Tensor(std::move(out_shape), std::move(out));
}

inline std::vector<std::size_t> inverse_permutation(
    const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
  return inv;
}

template <class F>
Tensor map(const Tensor& t, F&& f) {
  std::vector<double> out(t.size());
  const auto d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(d[i]);
  return Tensor(t.shape(), std::move(out));
}

}  // namespace tgcnn
