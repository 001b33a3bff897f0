// sepkit/tensor.hpp
//
// Minimal reverse-mode automatic differentiation over dense 64-bit tensors.
// A DiffTensor is a shared handle to a node in a dynamically built tape; ops
// are free functions that record a backward closure on the result node.
// backward(loss) walks the tape in reverse topological order and accumulates
// gradients (+=) into every reachable node that requires them.
//
// The op set is exactly what 1-D convolutional separation networks need:
// conv1d / conv_transpose1d, elementwise arithmetic and activations, matmul,
// reductions, signal framing, and channelwise normalization. Binary ops
// accept either identical shapes or a scalar on one side (broadcast).

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sepkit {

namespace detail {

inline size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Fixed-order 4-way unrolled dot product. The independent accumulators give
// the vectorizer something to chew on without reassociating a single chain,
// and the summation order is deterministic.
inline double dot_unrolled(const double* a, const double* b, long n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  double acc4 = 0.0, acc5 = 0.0, acc6 = 0.0, acc7 = 0.0;
  long i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 += a[i] * b[i];
    acc1 += a[i + 1] * b[i + 1];
    acc2 += a[i + 2] * b[i + 2];
    acc3 += a[i + 3] * b[i + 3];
    acc4 += a[i + 4] * b[i + 4];
    acc5 += a[i + 5] * b[i + 5];
    acc6 += a[i + 6] * b[i + 6];
    acc7 += a[i + 7] * b[i + 7];
  }
  for (; i < n; ++i) acc0 += a[i] * b[i];
  return ((acc0 + acc1) + (acc2 + acc3)) + ((acc4 + acc5) + (acc6 + acc7));
}

// Strided-rhs variant: sum_i a[i] * b[i * stride].
inline double dot_strided(const double* a, const double* b, long n, long stride) {
  double acc0 = 0.0, acc1 = 0.0;
  long i = 0;
  for (; i + 2 <= n; i += 2) {
    acc0 += a[i] * b[i * stride];
    acc1 += a[i + 1] * b[(i + 1) * stride];
  }
  if (i < n) acc0 += a[i] * b[i * stride];
  return acc0 + acc1;
}

inline void axpy(double alpha, const double* x, double* y, long n) {
  for (long i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

struct TensorNode {
  std::vector<size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // same length as data, zero after creation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // pushes this node's grad into parents
};

class DiffTensor {
 public:
  DiffTensor() = default;

  static DiffTensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
    auto node = std::make_shared<TensorNode>();
    size_t n = detail::shape_numel(shape);
    node->shape = std::move(shape);
    node->data.assign(n, 0.0);
    node->grad.assign(n, 0.0);
    node->requires_grad = requires_grad;
    return DiffTensor(std::move(node));
  }

  static DiffTensor from_values(std::vector<size_t> shape, std::vector<double> values,
                                bool requires_grad = false) {
    if (detail::shape_numel(shape) != values.size())
      throw std::invalid_argument("DiffTensor: shape " + detail::shape_str(shape) +
                                  " does not match " + std::to_string(values.size()) +
                                  " values");
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->grad.assign(values.size(), 0.0);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return DiffTensor(std::move(node));
  }

  static DiffTensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t ndim() const { return node_->shape.size(); }
  size_t numel() const { return node_->data.size(); }
  size_t dim(size_t i) const { return node_->shape.at(i); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }

  double value() const {
    if (numel() != 1)
      throw std::invalid_argument("DiffTensor::value: tensor is not scalar");
    return node_->data[0];
  }

  double at(size_t r, size_t c) const {
    if (ndim() != 2) throw std::invalid_argument("DiffTensor::at: not 2-D");
    return node_->data[r * node_->shape[1] + c];
  }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Value copy with no tape history; used to freeze activations as constants.
  DiffTensor detached() const {
    return from_values(node_->shape, node_->data, false);
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit DiffTensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;

  friend DiffTensor make_op_result(std::vector<size_t> shape,
                                   std::vector<DiffTensor> inputs);
};

inline DiffTensor make_op_result(std::vector<size_t> shape,
                                 std::vector<DiffTensor> inputs) {
  auto node = std::make_shared<TensorNode>();
  size_t n = detail::shape_numel(shape);
  node->shape = std::move(shape);
  node->data.assign(n, 0.0);
  node->grad.assign(n, 0.0);
  for (auto& in : inputs) {
    node->requires_grad = node->requires_grad || in.requires_grad();
    node->parents.push_back(in.node());
  }
  return DiffTensor(std::move(node));
}

namespace detail {

inline void check_same_shape(const DiffTensor& a, const DiffTensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Binary elementwise with scalar broadcast on either side.
// fwd(a, b) -> value; bwd fills (da_coeff, db_coeff) as functions of a, b, y.
template <typename Fwd, typename BwdA, typename BwdB>
DiffTensor binary_op(const char* name, const DiffTensor& a, const DiffTensor& b,
                     Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape())
    throw std::invalid_argument(std::string(name) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::vector<size_t>& out_shape = a_scalar ? b.shape() : a.shape();
  DiffTensor out = make_op_result(out_shape, {a, b});
  auto* an = a.node().get();
  auto* bn = b.node().get();
  auto* on = out.node().get();
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) {
    double av = an->data[a_scalar ? 0 : i];
    double bv = bn->data[b_scalar ? 0 : i];
    on->data[i] = fwd(av, bv);
  }
  out.node()->backprop = [an, bn, on, a_scalar, b_scalar, n, bwd_a, bwd_b]() {
    for (size_t i = 0; i < n; ++i) {
      double av = an->data[a_scalar ? 0 : i];
      double bv = bn->data[b_scalar ? 0 : i];
      double g = on->grad[i];
      if (an->requires_grad) an->grad[a_scalar ? 0 : i] += bwd_a(av, bv, on->data[i]) * g;
      if (bn->requires_grad) bn->grad[b_scalar ? 0 : i] += bwd_b(av, bv, on->data[i]) * g;
    }
  };
  return out;
}

// Unary elementwise. bwd(x, y) returns dy/dx.
template <typename Fwd, typename Bwd>
DiffTensor unary_op(const DiffTensor& x, Fwd fwd, Bwd bwd) {
  DiffTensor out = make_op_result(x.shape(), {x});
  auto* xn = x.node().get();
  auto* on = out.node().get();
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) on->data[i] = fwd(xn->data[i]);
  out.node()->backprop = [xn, on, n, bwd]() {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < n; ++i) xn->grad[i] += bwd(xn->data[i], on->data[i]) * on->grad[i];
  };
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline DiffTensor sub(const DiffTensor& a, const DiffTensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline DiffTensor div(const DiffTensor& a, const DiffTensor& b) {
  return detail::binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline DiffTensor scale(const DiffTensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline DiffTensor add_const(const DiffTensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline DiffTensor operator+(const DiffTensor& a, const DiffTensor& b) { return add(a, b); }
inline DiffTensor operator-(const DiffTensor& a, const DiffTensor& b) { return sub(a, b); }
inline DiffTensor operator*(const DiffTensor& a, const DiffTensor& b) { return mul(a, b); }
inline DiffTensor operator/(const DiffTensor& a, const DiffTensor& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Activations and pointwise transcendentals

inline DiffTensor relu(const DiffTensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline DiffTensor sigmoid(const DiffTensor& x) {
  return detail::unary_op(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline DiffTensor tanh(const DiffTensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline DiffTensor exp(const DiffTensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

inline DiffTensor log(const DiffTensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

inline DiffTensor log1p(const DiffTensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::log1p(v); },
      [](double v, double) { return 1.0 / (1.0 + v); });
}

inline DiffTensor sqrt(const DiffTensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

// PReLU with a learnable scalar slope.
inline DiffTensor prelu(const DiffTensor& x, const DiffTensor& slope) {
  if (slope.numel() != 1)
    throw std::invalid_argument("prelu: slope must be a scalar tensor");
  DiffTensor out = make_op_result(x.shape(), {x, slope});
  auto* xn = x.node().get();
  auto* sn = slope.node().get();
  auto* on = out.node().get();
  const size_t n = x.numel();
  const double s = sn->data[0];
  for (size_t i = 0; i < n; ++i) {
    double v = xn->data[i];
    on->data[i] = v > 0.0 ? v : s * v;
  }
  out.node()->backprop = [xn, sn, on, n]() {
    const double s = sn->data[0];
    double sg = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double v = xn->data[i];
      double g = on->grad[i];
      if (xn->requires_grad) xn->grad[i] += (v > 0.0 ? 1.0 : s) * g;
      if (v <= 0.0) sg += v * g;
    }
    if (sn->requires_grad) sn->grad[0] += sg;
  };
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

inline DiffTensor sum(const DiffTensor& x) {
  DiffTensor out = make_op_result({1}, {x});
  auto* xn = x.node().get();
  auto* on = out.node().get();
  double acc = 0.0;
  for (double v : xn->data) acc += v;
  on->data[0] = acc;
  out.node()->backprop = [xn, on]() {
    if (!xn->requires_grad) return;
    double g = on->grad[0];
    for (double& gv : xn->grad) gv += g;
  };
  return out;
}

inline DiffTensor mean(const DiffTensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Sum of squares over all elements.
inline DiffTensor sq_l2(const DiffTensor& x) {
  DiffTensor out = make_op_result({1}, {x});
  auto* xn = x.node().get();
  auto* on = out.node().get();
  double acc = 0.0;
  for (double v : xn->data) acc += v * v;
  on->data[0] = acc;
  out.node()->backprop = [xn, on]() {
    if (!xn->requires_grad) return;
    double g = on->grad[0];
    for (size_t i = 0; i < xn->data.size(); ++i) xn->grad[i] += 2.0 * xn->data[i] * g;
  };
  return out;
}

// Axis reduction over a 2-D tensor. axis 0 collapses rows, axis 1 columns.
inline DiffTensor sum(const DiffTensor& x, size_t axis) {
  if (x.ndim() != 2) throw std::invalid_argument("sum(axis): tensor must be 2-D");
  if (axis > 1) throw std::invalid_argument("sum: invalid axis " + std::to_string(axis));
  const size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<size_t> out_shape = axis == 0 ? std::vector<size_t>{cols}
                                            : std::vector<size_t>{rows};
  DiffTensor out = make_op_result(out_shape, {x});
  auto* xn = x.node().get();
  auto* on = out.node().get();
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c)
      on->data[axis == 0 ? c : r] += xn->data[r * cols + c];
  out.node()->backprop = [xn, on, rows, cols, axis]() {
    if (!xn->requires_grad) return;
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < cols; ++c)
        xn->grad[r * cols + c] += on->grad[axis == 0 ? c : r];
  };
  return out;
}

inline DiffTensor mean(const DiffTensor& x, size_t axis) {
  if (x.ndim() != 2) throw std::invalid_argument("mean(axis): tensor must be 2-D");
  const double denom = static_cast<double>(axis == 0 ? x.dim(0) : x.dim(1));
  return scale(sum(x, axis), 1.0 / denom);
}

inline DiffTensor sq_l2(const DiffTensor& x, size_t axis) { return sum(mul(x, x), axis); }

// ---------------------------------------------------------------------------
// Linear algebra

// matmul: [m x k] . [k x n] -> [m x n]; a 1-D rhs of length k is treated as
// [k x 1] and yields a 1-D result of length m.
inline DiffTensor matmul(const DiffTensor& a, const DiffTensor& b) {
  if (a.ndim() != 2) throw std::invalid_argument("matmul: lhs must be 2-D");
  const bool vec_rhs = b.ndim() == 1;
  if (!vec_rhs && b.ndim() != 2)
    throw std::invalid_argument("matmul: rhs must be 1-D or 2-D");
  const size_t m = a.dim(0), k = a.dim(1);
  const size_t bk = vec_rhs ? b.dim(0) : b.dim(0);
  const size_t n = vec_rhs ? 1 : b.dim(1);
  if (bk != k)
    throw std::invalid_argument("matmul: inner dimension mismatch " +
                                detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  std::vector<size_t> out_shape = vec_rhs ? std::vector<size_t>{m}
                                          : std::vector<size_t>{m, n};
  DiffTensor out = make_op_result(out_shape, {a, b});
  auto* an = a.node().get();
  auto* bn = b.node().get();
  auto* on = out.node().get();
  for (size_t i = 0; i < m; ++i) {
    for (size_t p = 0; p < k; ++p) {
      const double av = an->data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &bn->data[p * n];
      double* orow = &on->data[i * n];
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  out.node()->backprop = [an, bn, on, m, k, n]() {
    if (an->requires_grad) {
      // dA = dY . B^T
      for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p)
          an->grad[i * k + p] += detail::dot_unrolled(
              &on->grad[i * n], &bn->data[p * n], static_cast<long>(n));
    }
    if (bn->requires_grad) {
      // dB = A^T . dY
      for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
          const double av = an->data[i * k + p];
          if (av == 0.0) continue;
          const double* grow = &on->grad[i * n];
          double* brow = &bn->grad[p * n];
          for (size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
    }
  };
  return out;
}

inline DiffTensor transpose(const DiffTensor& x) {
  if (x.ndim() != 2) throw std::invalid_argument("transpose: tensor must be 2-D");
  const size_t rows = x.dim(0), cols = x.dim(1);
  DiffTensor out = make_op_result({cols, rows}, {x});
  auto* xn = x.node().get();
  auto* on = out.node().get();
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) on->data[c * rows + r] = xn->data[r * cols + c];
  out.node()->backprop = [xn, on, rows, cols]() {
    if (!xn->requires_grad) return;
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < cols; ++c) xn->grad[r * cols + c] += on->grad[c * rows + r];
  };
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

// conv1d: input [c_in x t], kernel [c_out x c_in x w] -> [c_out x t_out].
// out[c,t] = sum_{i,k} kernel[c,i,k] * input[i, t*stride + k*dilation - pad],
// pad = (w-1)*dilation when causal (so t_out == t at stride 1), else 0.
inline DiffTensor conv1d(const DiffTensor& input, const DiffTensor& kernel,
                         int stride = 1, int dilation = 1, bool causal = false) {
  if (input.ndim() != 2) throw std::invalid_argument("conv1d: input must be 2-D");
  if (kernel.ndim() != 3) throw std::invalid_argument("conv1d: kernel must be 3-D");
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (dilation < 1) throw std::invalid_argument("conv1d: dilation must be >= 1");
  const size_t c_in = input.dim(0);
  const long t_in = static_cast<long>(input.dim(1));
  const size_t c_out = kernel.dim(0);
  if (kernel.dim(1) != c_in)
    throw std::invalid_argument("conv1d: kernel channels_in " +
                                std::to_string(kernel.dim(1)) +
                                " does not match input channels " +
                                std::to_string(c_in));
  const long w = static_cast<long>(kernel.dim(2));
  const long pad = causal ? (w - 1) * dilation : 0;
  const long span = (w - 1) * dilation + 1;
  const long t_eff = t_in + pad;
  if (t_eff < span) throw std::invalid_argument("conv1d: input too short for kernel");
  const long t_out = (t_eff - span) / stride + 1;

  DiffTensor out = make_op_result({c_out, static_cast<size_t>(t_out)}, {input, kernel});
  auto* xn = input.node().get();
  auto* kn = kernel.node().get();
  auto* on = out.node().get();

  const bool contiguous_taps = dilation == 1 && pad == 0;  // encoder/decoder case
  if (stride == 1) {
    // axpy formulation: for each tap, add a shifted scaled input row
    for (size_t co = 0; co < c_out; ++co) {
      double* orow = &on->data[co * static_cast<size_t>(t_out)];
      for (size_t ci = 0; ci < c_in; ++ci) {
        const double* xrow = &xn->data[ci * static_cast<size_t>(t_in)];
        for (long k = 0; k < w; ++k) {
          const double kv = kn->data[(co * c_in + ci) * static_cast<size_t>(w) +
                                     static_cast<size_t>(k)];
          if (kv == 0.0) continue;
          const long off = k * dilation - pad;
          const long lo = std::max(0L, -off);
          const long hi = std::min(t_out, t_in - off);
          detail::axpy(kv, xrow + lo + off, orow + lo, hi - lo);
        }
      }
    }
  } else if (contiguous_taps) {
    // inner loop over the kernel taps, which are contiguous in the input
    for (size_t co = 0; co < c_out; ++co)
      for (long t = 0; t < t_out; ++t) {
        double acc = 0.0;
        for (size_t ci = 0; ci < c_in; ++ci)
          acc += detail::dot_unrolled(
              &kn->data[(co * c_in + ci) * static_cast<size_t>(w)],
              &xn->data[ci * static_cast<size_t>(t_in) + static_cast<size_t>(t * stride)],
              w);
        on->data[co * static_cast<size_t>(t_out) + static_cast<size_t>(t)] = acc;
      }
  } else {
    for (size_t co = 0; co < c_out; ++co)
      for (long t = 0; t < t_out; ++t) {
        double acc = 0.0;
        for (size_t ci = 0; ci < c_in; ++ci)
          for (long k = 0; k < w; ++k) {
            const long idx = t * stride + k * dilation - pad;
            if (idx < 0 || idx >= t_in) continue;
            acc += kn->data[(co * c_in + ci) * static_cast<size_t>(w) +
                            static_cast<size_t>(k)] *
                   xn->data[ci * static_cast<size_t>(t_in) + static_cast<size_t>(idx)];
          }
        on->data[co * static_cast<size_t>(t_out) + static_cast<size_t>(t)] = acc;
      }
  }

  out.node()->backprop = [xn, kn, on, c_in, c_out, t_in, w, pad, stride, dilation,
                          t_out, contiguous_taps]() {
    if (stride == 1) {
      for (size_t co = 0; co < c_out; ++co) {
        const double* grow = &on->grad[co * static_cast<size_t>(t_out)];
        for (size_t ci = 0; ci < c_in; ++ci) {
          const double* xrow = &xn->data[ci * static_cast<size_t>(t_in)];
          double* xgrow = &xn->grad[ci * static_cast<size_t>(t_in)];
          for (long k = 0; k < w; ++k) {
            const size_t kidx =
                (co * c_in + ci) * static_cast<size_t>(w) + static_cast<size_t>(k);
            const long off = k * dilation - pad;
            const long lo = std::max(0L, -off);
            const long hi = std::min(t_out, t_in - off);
            if (xn->requires_grad) {
              const double kv = kn->data[kidx];
              if (kv != 0.0) detail::axpy(kv, grow + lo, xgrow + lo + off, hi - lo);
            }
            if (kn->requires_grad)
              kn->grad[kidx] += detail::dot_unrolled(grow + lo, xrow + lo + off, hi - lo);
          }
        }
      }
    } else if (contiguous_taps) {
      for (size_t co = 0; co < c_out; ++co)
        for (long t = 0; t < t_out; ++t) {
          const double g =
              on->grad[co * static_cast<size_t>(t_out) + static_cast<size_t>(t)];
          if (g == 0.0) continue;
          for (size_t ci = 0; ci < c_in; ++ci) {
            const size_t krow = (co * c_in + ci) * static_cast<size_t>(w);
            const size_t xbase =
                ci * static_cast<size_t>(t_in) + static_cast<size_t>(t * stride);
            if (xn->requires_grad) detail::axpy(g, &kn->data[krow], &xn->grad[xbase], w);
            if (kn->requires_grad) detail::axpy(g, &xn->data[xbase], &kn->grad[krow], w);
          }
        }
    } else {
      for (size_t co = 0; co < c_out; ++co)
        for (long t = 0; t < t_out; ++t) {
          const double g =
              on->grad[co * static_cast<size_t>(t_out) + static_cast<size_t>(t)];
          if (g == 0.0) continue;
          for (size_t ci = 0; ci < c_in; ++ci)
            for (long k = 0; k < w; ++k) {
              const long idx = t * stride + k * dilation - pad;
              if (idx < 0 || idx >= t_in) continue;
              const size_t kidx =
                  (co * c_in + ci) * static_cast<size_t>(w) + static_cast<size_t>(k);
              const size_t xidx =
                  ci * static_cast<size_t>(t_in) + static_cast<size_t>(idx);
              if (xn->requires_grad) xn->grad[xidx] += kn->data[kidx] * g;
              if (kn->requires_grad) kn->grad[kidx] += xn->data[xidx] * g;
            }
        }
    }
  };
  return out;
}

// conv_transpose1d: adjoint of non-causal unit-dilation conv1d with the same
// kernel and stride. input [c_out x l], kernel [c_out x c_in x w]
// -> [c_in x (l-1)*stride + w].
inline DiffTensor conv_transpose1d(const DiffTensor& input, const DiffTensor& kernel,
                                   int stride = 1) {
  if (input.ndim() != 2)
    throw std::invalid_argument("conv_transpose1d: input must be 2-D");
  if (kernel.ndim() != 3)
    throw std::invalid_argument("conv_transpose1d: kernel must be 3-D");
  if (stride < 1) throw std::invalid_argument("conv_transpose1d: stride must be >= 1");
  const size_t c_out = input.dim(0);
  const long l = static_cast<long>(input.dim(1));
  if (kernel.dim(0) != c_out)
    throw std::invalid_argument("conv_transpose1d: kernel channels_out " +
                                std::to_string(kernel.dim(0)) +
                                " does not match input channels " +
                                std::to_string(c_out));
  const size_t c_in = kernel.dim(1);
  const long w = static_cast<long>(kernel.dim(2));
  const long t_out = (l - 1) * stride + w;

  DiffTensor out = make_op_result({c_in, static_cast<size_t>(t_out)}, {input, kernel});
  auto* yn = input.node().get();
  auto* kn = kernel.node().get();
  auto* on = out.node().get();

  for (size_t co = 0; co < c_out; ++co) {
    const double* yrow = &yn->data[co * static_cast<size_t>(l)];
    for (size_t ci = 0; ci < c_in; ++ci) {
      double* orow = &on->data[ci * static_cast<size_t>(t_out)];
      const double* krow = &kn->data[(co * c_in + ci) * static_cast<size_t>(w)];
      for (long t = 0; t < l; ++t)
        detail::axpy(yrow[t], krow, orow + t * stride, w);  // taps are contiguous
    }
  }

  out.node()->backprop = [yn, kn, on, c_in, c_out, l, w, stride, t_out]() {
    for (size_t co = 0; co < c_out; ++co) {
      const double* yrow = &yn->data[co * static_cast<size_t>(l)];
      double* ygrow = &yn->grad[co * static_cast<size_t>(l)];
      for (size_t ci = 0; ci < c_in; ++ci) {
        const double* ogrow = &on->grad[ci * static_cast<size_t>(t_out)];
        const size_t krow = (co * c_in + ci) * static_cast<size_t>(w);
        if (yn->requires_grad)
          for (long t = 0; t < l; ++t)
            ygrow[t] += detail::dot_unrolled(&kn->data[krow], ogrow + t * stride, w);
        if (kn->requires_grad)
          for (long t = 0; t < l; ++t)
            detail::axpy(yrow[t], ogrow + t * stride, &kn->grad[krow], w);
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// Signal framing and channel ops

// frame_signal: x [t] (or [1 x t]) -> [m x win] with m = floor((t-win)/hop)+1.
inline DiffTensor frame_signal(const DiffTensor& x, size_t win, size_t hop) {
  size_t t = 0;
  if (x.ndim() == 1) {
    t = x.dim(0);
  } else if (x.ndim() == 2 && x.dim(0) == 1) {
    t = x.dim(1);
  } else {
    throw std::invalid_argument("frame_signal: input must be 1-D or [1 x t]");
  }
  if (hop == 0) throw std::invalid_argument("frame_signal: hop must be >= 1");
  if (t < win) throw std::invalid_argument("frame_signal: input shorter than window");
  const size_t m = (t - win) / hop + 1;
  DiffTensor out = make_op_result({m, win}, {x});
  auto* xn = x.node().get();
  auto* on = out.node().get();
  for (size_t f = 0; f < m; ++f)
    for (size_t i = 0; i < win; ++i) on->data[f * win + i] = xn->data[f * hop + i];
  out.node()->backprop = [xn, on, m, win, hop]() {
    if (!xn->requires_grad) return;
    for (size_t f = 0; f < m; ++f)
      for (size_t i = 0; i < win; ++i) xn->grad[f * hop + i] += on->grad[f * win + i];
  };
  return out;
}

// fit_cols: trims or zero-pads the time axis of [c x t] to exactly t_out
// columns. Used to match decoder output length to the mixture length.
inline DiffTensor fit_cols(const DiffTensor& x, size_t t_out) {
  if (x.ndim() != 2) throw std::invalid_argument("fit_cols: input must be 2-D");
  const size_t c = x.dim(0), t = x.dim(1);
  if (t == t_out) {
    DiffTensor out = make_op_result({c, t}, {x});
    auto* xn = x.node().get();
    auto* on = out.node().get();
    on->data = xn->data;
    out.node()->backprop = [xn, on]() {
      if (!xn->requires_grad) return;
      for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
    };
    return out;
  }
  DiffTensor out = make_op_result({c, t_out}, {x});
  auto* xn = x.node().get();
  auto* on = out.node().get();
  const size_t copy = std::min(t, t_out);
  for (size_t i = 0; i < c; ++i)
    for (size_t j = 0; j < copy; ++j) on->data[i * t_out + j] = xn->data[i * t + j];
  out.node()->backprop = [xn, on, c, t, t_out, copy]() {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < c; ++i)
      for (size_t j = 0; j < copy; ++j) xn->grad[i * t + j] += on->grad[i * t_out + j];
  };
  return out;
}

// channel_norm: x [c x t], per time step normalize over channels to zero mean
// and unit variance.
inline DiffTensor channel_norm(const DiffTensor& x, double eps = 1e-8) {
  if (x.ndim() != 2) throw std::invalid_argument("channel_norm: input must be 2-D");
  const size_t c = x.dim(0), t = x.dim(1);
  DiffTensor out = make_op_result({c, t}, {x});
  auto* xn = x.node().get();
  auto* on = out.node().get();
  std::vector<double> inv_sigma(t);
  for (size_t j = 0; j < t; ++j) {
    double mu = 0.0;
    for (size_t i = 0; i < c; ++i) mu += xn->data[i * t + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (size_t i = 0; i < c; ++i) {
      double d = xn->data[i * t + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[j] = is;
    for (size_t i = 0; i < c; ++i) on->data[i * t + j] = (xn->data[i * t + j] - mu) * is;
  }
  out.node()->backprop = [xn, on, c, t, inv_sigma = std::move(inv_sigma)]() {
    if (!xn->requires_grad) return;
    for (size_t j = 0; j < t; ++j) {
      double g_mean = 0.0, gy_mean = 0.0;
      for (size_t i = 0; i < c; ++i) {
        const double g = on->grad[i * t + j];
        g_mean += g;
        gy_mean += g * on->data[i * t + j];
      }
      g_mean /= static_cast<double>(c);
      gy_mean /= static_cast<double>(c);
      for (size_t i = 0; i < c; ++i) {
        const double g = on->grad[i * t + j];
        const double y = on->data[i * t + j];
        xn->grad[i * t + j] += inv_sigma[j] * (g - g_mean - y * gy_mean);
      }
    }
  };
  return out;
}

// channel_mul / channel_add: per-channel scale / bias of [c x t] by a [c]
// vector. These are the FiLM primitives (gamma (.) h + beta) and the affine
// part of layer normalization.
inline DiffTensor channel_mul(const DiffTensor& x, const DiffTensor& g) {
  if (x.ndim() != 2 || g.ndim() != 1 || g.dim(0) != x.dim(0))
    throw std::invalid_argument("channel_mul: expected [c x t] and [c]");
  const size_t c = x.dim(0), t = x.dim(1);
  DiffTensor out = make_op_result({c, t}, {x, g});
  auto* xn = x.node().get();
  auto* gn = g.node().get();
  auto* on = out.node().get();
  for (size_t i = 0; i < c; ++i) {
    const double gv = gn->data[i];
    for (size_t j = 0; j < t; ++j) on->data[i * t + j] = gv * xn->data[i * t + j];
  }
  out.node()->backprop = [xn, gn, on, c, t]() {
    for (size_t i = 0; i < c; ++i) {
      const double gv = gn->data[i];
      double acc = 0.0;
      for (size_t j = 0; j < t; ++j) {
        const double grad = on->grad[i * t + j];
        if (xn->requires_grad) xn->grad[i * t + j] += gv * grad;
        acc += grad * xn->data[i * t + j];
      }
      if (gn->requires_grad) gn->grad[i] += acc;
    }
  };
  return out;
}

inline DiffTensor channel_add(const DiffTensor& x, const DiffTensor& b) {
  if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(0))
    throw std::invalid_argument("channel_add: expected [c x t] and [c]");
  const size_t c = x.dim(0), t = x.dim(1);
  DiffTensor out = make_op_result({c, t}, {x, b});
  auto* xn = x.node().get();
  auto* bn = b.node().get();
  auto* on = out.node().get();
  for (size_t i = 0; i < c; ++i)
    for (size_t j = 0; j < t; ++j) on->data[i * t + j] = xn->data[i * t + j] + bn->data[i];
  out.node()->backprop = [xn, bn, on, c, t]() {
    for (size_t i = 0; i < c; ++i) {
      double acc = 0.0;
      for (size_t j = 0; j < t; ++j) {
        const double grad = on->grad[i * t + j];
        if (xn->requires_grad) xn->grad[i * t + j] += grad;
        acc += grad;
      }
      if (bn->requires_grad) bn->grad[i] += acc;
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// Backward pass

// Accumulates d(loss)/d(node) into .grad of every reachable node that
// requires gradients. Leaf gradients accumulate across calls (+=); op-result
// gradients are per-pass temporaries and are reset at the start of each
// backward, so repeated calls on the same graph add exactly one more
// gradient contribution to the leaves.
inline void backward(const DiffTensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                detail::shape_str(loss.shape()));
  // iterative postorder DFS
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  TensorNode* root = loss.node().get();
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order)
    if (n->backprop) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && n->requires_grad) n->backprop();
  }
}

}  // namespace sepkit
