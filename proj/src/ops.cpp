#include "transsleep/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "transsleep/kernels.hpp"

namespace transsleep::ops {
namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Backward = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                   const char* op, Backward backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (!NoGradGuard::active()) {
    for (const Tensor* t : inputs) needs = needs || (t->defined() && t->requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) {
      if (t->defined()) node->inputs.push_back(t->node());
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Gradient buffer of an input, or nullptr when that input is constant.
double* grad_of(const NodePtr& in) { return in->requires_grad ? in->ensure_grad().data() : nullptr; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  return make_result(x.shape(), std::move(out), {&x}, op, [deriv](Node& self) {
    const NodePtr& in = self.inputs[0];
    double* g = grad_of(in);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * deriv(in->value[i], self.value[i]);
  });
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  kernels::add_inplace(out.data(), b.data().data(), out.size());
  return make_result(a.shape(), std::move(out), {&a, &b}, "add", [](Node& self) {
    for (const NodePtr& in : self.inputs) {
      if (double* g = grad_of(in)) kernels::add_inplace(g, self.grad.data(), self.grad.size());
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  kernels::axpy(out.data(), -1.0, b.data().data(), out.size());
  return make_result(a.shape(), std::move(out), {&a, &b}, "sub", [](Node& self) {
    if (double* g = grad_of(self.inputs[0])) kernels::add_inplace(g, self.grad.data(), self.grad.size());
    if (double* g = grad_of(self.inputs[1])) kernels::axpy(g, -1.0, self.grad.data(), self.grad.size());
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  kernels::mul(out.data(), a.data().data(), b.data().data(), out.size());
  return make_result(a.shape(), std::move(out), {&a, &b}, "mul", [](Node& self) {
    const NodePtr& x = self.inputs[0];
    const NodePtr& y = self.inputs[1];
    const std::size_t n = self.grad.size();
    if (double* gx = grad_of(x)) {
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * y->value[i];
    }
    if (double* gy = grad_of(y)) {
      for (std::size_t i = 0; i < n; ++i) gy[i] += self.grad[i] * x->value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] / bs[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, "div", [](Node& self) {
    const NodePtr& x = self.inputs[0];
    const NodePtr& y = self.inputs[1];
    const std::size_t n = self.grad.size();
    if (double* gx = grad_of(x)) {
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i] / y->value[i];
    }
    if (double* gy = grad_of(y)) {
      for (std::size_t i = 0; i < n; ++i) gy[i] -= self.grad[i] * self.value[i] / y->value[i];
    }
  });
}

Tensor add_broadcast(const Tensor& x, const Tensor& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<std::ptrdiff_t>(ys.size()))) {
    throw ShapeError("add_broadcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  }
  const std::size_t inner = y.numel();
  const std::size_t outer = x.numel() / inner;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t o = 0; o < outer; ++o) kernels::add_inplace(out.data() + o * inner, y.data().data(), inner);
  return make_result(xs, std::move(out), {&x, &y}, "add_broadcast", [outer, inner](Node& self) {
    if (double* gx = grad_of(self.inputs[0])) kernels::add_inplace(gx, self.grad.data(), self.grad.size());
    if (double* gy = grad_of(self.inputs[1])) {
      for (std::size_t o = 0; o < outer; ++o) kernels::add_inplace(gy, self.grad.data() + o * inner, inner);
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor log(const Tensor& x, double floor) {
  return unary(
      x, "log", [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double y) {
        // y = v * Phi(v), so Phi(v) = y / v away from zero.
        const double cdf = std::abs(v) > 1e-8 ? y / v : 0.5 + v * kInvSqrt2Pi;
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor softmax(const Tensor& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
  return make_result(x.shape(), std::move(out), {&x}, "softmax", [rows, cols](Node& self) {
    double* g = grad_of(self.inputs[0]);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      const double inner = kernels::dot(y, dy, cols);
      double* gx = g + r * cols;
      for (std::size_t c = 0; c < cols; ++c) gx[c] += y[c] * (dy[c] - inner);
    }
  });
}

Tensor sum(const Tensor& x) {
  const double total = kernels::sum(x.data().data(), x.numel());
  return make_result({1}, {total}, {&x}, "sum", [](Node& self) {
    double* g = grad_of(self.inputs[0]);
    if (!g) return;
    const double d = self.grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += d;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("sum_axis: axis out of range for " + shape_str(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(s.outer * s.inner, 0.0);
  const double* xs = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      kernels::add_inplace(out.data() + o * s.inner, xs + (o * s.extent + e) * s.inner, s.inner);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {&x}, "sum_axis", [s](Node& self) {
    double* g = grad_of(self.inputs[0]);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        kernels::add_inplace(g + (o * s.extent + e) * s.inner, self.grad.data() + o * s.inner, s.inner);
      }
    }
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("mean_axis: axis out of range for " + shape_str(x.shape()));
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {&x}, "reshape", [](Node& self) {
    if (double* g = grad_of(self.inputs[0])) kernels::add_inplace(g, self.grad.data(), self.grad.size());
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (perm.size() != rank) throw ShapeError("permute: permutation rank mismatch for " + shape_str(in_shape));
  std::vector<bool> used(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  // Source offset of every output element, in output order.
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_strides[perm[i]];
    src[flat] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  const auto xs = x.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xs[src[i]];
  return make_result(std::move(out_shape), std::move(out), {&x}, "permute", [src = std::move(src)](Node& self) {
    double* g = grad_of(self.inputs[0]);
    if (!g) return;
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose", "input");
  return permute(x, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: dimension " + std::to_string(i) + " mismatch " + shape_str(s) + " vs " +
                         shape_str(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t width = p.dim(axis) * os.inner;
    const double* src = p.data().data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(src + o * width, width, out.data() + o * os.extent * os.inner + offset * os.inner);
    }
    offset += p.dim(axis);
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(out_shape);
  node->value = std::move(out);
  node->op = "concat";
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    std::vector<std::size_t> extents;
    for (const Tensor& p : parts) {
      node->inputs.push_back(p.node());
      extents.push_back(p.dim(axis));
    }
    node->backward = [os, offsets, extents](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        double* g = grad_of(self.inputs[k]);
        if (!g) continue;
        const std::size_t width = extents[k] * os.inner;
        for (std::size_t o = 0; o < os.outer; ++o) {
          kernels::add_inplace(g + o * width, self.grad.data() + o * os.extent * os.inner + offsets[k] * os.inner,
                               width);
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank()) throw ShapeError("slice: axis out of range for " + shape_str(x.shape()));
  if (begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t width = (end - begin) * s.inner;
  std::vector<double> out(s.outer * width);
  const double* xs = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xs + (o * s.extent + begin) * s.inner, width, out.data() + o * width);
  }
  return make_result(std::move(out_shape), std::move(out), {&x}, "slice", [s, begin, width](Node& self) {
    double* g = grad_of(self.inputs[0]);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      kernels::add_inplace(g + (o * s.extent + begin) * s.inner, self.grad.data() + o * width, width);
    }
  });
}

Tensor gather_last(const Tensor& x, const std::vector<std::size_t>& index) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  if (index.size() != rows) {
    throw ShapeError("gather_last: " + std::to_string(index.size()) + " indices for " + std::to_string(rows) + " rows");
  }
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) throw ShapeError("gather_last: index " + std::to_string(index[r]) + " out of range");
    out[r] = x.data()[r * cols + index[r]];
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  return make_result(std::move(out_shape), std::move(out), {&x}, "gather_last", [index, cols](Node& self) {
    double* g = grad_of(self.inputs[0]);
    if (!g) return;
    for (std::size_t r = 0; r < index.size(); ++r) g[r * cols + index[r]] += self.grad[r];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  require_rank(weight, 2, "linear", "weight");
  const std::size_t in = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  if (x.shape().back() != in) {
    throw ShapeError("linear: input feature dimension " + std::to_string(x.shape().back()) + " != weight in_features " +
                     std::to_string(in));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_dim)) {
    throw ShapeError("linear: bias shape " + shape_str(bias->shape()) + " != [" + std::to_string(out_dim) + "]");
  }
  const std::size_t rows = x.numel() / in;
  const double* xs = x.data().data();
  const double* ws = weight.data().data();
  std::vector<double> out(rows * out_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) out[r * out_dim + o] = kernels::dot(xs + r * in, ws + o * in, in);
  }
  if (bias) {
    const double* bs = bias->data().data();
    for (std::size_t r = 0; r < rows; ++r) kernels::add_inplace(out.data() + r * out_dim, bs, out_dim);
  }
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  const Tensor none;
  return make_result(std::move(out_shape), std::move(out), {&x, &weight, bias ? &*bias : &none}, "linear",
                     [rows, in, out_dim](Node& self) {
                       const NodePtr& xn = self.inputs[0];
                       const NodePtr& wn = self.inputs[1];
                       const double* dy = self.grad.data();
                       if (double* gx = grad_of(xn)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t o = 0; o < out_dim; ++o) {
                             const double d = dy[r * out_dim + o];
                             if (d != 0.0) kernels::axpy(gx + r * in, d, wn->value.data() + o * in, in);
                           }
                         }
                       }
                       if (double* gw = grad_of(wn)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t o = 0; o < out_dim; ++o) {
                             const double d = dy[r * out_dim + o];
                             if (d != 0.0) kernels::axpy(gw + o * in, d, xn->value.data() + r * in, in);
                           }
                         }
                       }
                       if (self.inputs.size() > 2) {
                         if (double* gb = grad_of(self.inputs[2])) {
                           for (std::size_t r = 0; r < rows; ++r) kernels::add_inplace(gb, dy + r * out_dim, out_dim);
                         }
                       }
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm", "left operand");
  require_rank(b, 3, "bmm", "right operand");
  const std::size_t groups = a.dim(0);
  const std::size_t m = a.dim(1);
  const std::size_t k = a.dim(2);
  if (b.dim(0) != groups) throw ShapeError("bmm: batch dimension mismatch");
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (bk != k) {
    throw ShapeError("bmm: inner dimension mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const double* as = a.data().data();
  const double* bs = b.data().data();
  std::vector<double> out(groups * m * n, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* ag = as + g * m * k;
    const double* bg = bs + g * k * n;
    double* og = out.data() + g * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (transpose_b) {
        for (std::size_t j = 0; j < n; ++j) og[i * n + j] = kernels::dot(ag + i * k, bg + j * k, k);
      } else {
        for (std::size_t p = 0; p < k; ++p) kernels::axpy(og + i * n, ag[i * k + p], bg + p * n, n);
      }
    }
  }
  return make_result({groups, m, n}, std::move(out), {&a, &b}, "bmm", [groups, m, k, n, transpose_b](Node& self) {
    const NodePtr& an = self.inputs[0];
    const NodePtr& bn = self.inputs[1];
    double* ga = grad_of(an);
    double* gb = grad_of(bn);
    for (std::size_t g = 0; g < groups; ++g) {
      const double* ag = an->value.data() + g * m * k;
      const double* bg = bn->value.data() + g * k * n;
      const double* dy = self.grad.data() + g * m * n;
      for (std::size_t i = 0; i < m; ++i) {
        if (transpose_b) {
          for (std::size_t j = 0; j < n; ++j) {
            const double d = dy[i * n + j];
            if (ga) kernels::axpy(ga + g * m * k + i * k, d, bg + j * k, k);
            if (gb) kernels::axpy(gb + g * k * n + j * k, d, ag + i * k, k);
          }
        } else {
          for (std::size_t p = 0; p < k; ++p) {
            if (ga) ga[g * m * k + i * k + p] += kernels::dot(dy + i * n, bg + p * n, n);
            if (gb) kernels::axpy(gb + g * k * n + p * n, ag[i * k + p], dy + i * n, n);
          }
        }
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "left operand");
  require_rank(b, 2, "matmul", "right operand");
  const Tensor out = bmm(reshape(a, {1, a.dim(0), a.dim(1)}), reshape(b, {1, b.dim(0), b.dim(1)}), false);
  return reshape(out, {a.dim(0), b.dim(1)});
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  if (kernel == 0 || kernel > length + 2 * padding) {
    throw ShapeError("conv1d: kernel size " + std::to_string(kernel) + " exceeds padded length " +
                     std::to_string(length + 2 * padding));
  }
  return (length + 2 * padding - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t padding, std::size_t groups) {
  if (input.rank() == 2) {
    const Tensor batched = reshape(input, {1, input.dim(0), input.dim(1)});
    const Tensor out = conv1d(batched, weight, bias, stride, padding, groups);
    return reshape(out, {out.dim(1), out.dim(2)});
  }
  require_rank(input, 3, "conv1d", "input");
  require_rank(weight, 3, "conv1d", "weight");
  const std::size_t batch = input.dim(0);
  const std::size_t c_in = input.dim(1);
  const std::size_t length = input.dim(2);
  const std::size_t c_out = weight.dim(0);
  const std::size_t k = weight.dim(2);
  if (groups == 0 || c_in % groups != 0 || c_out % groups != 0) {
    throw ShapeError("conv1d: groups " + std::to_string(groups) + " must divide C_in " + std::to_string(c_in) +
                     " and C_out " + std::to_string(c_out));
  }
  const std::size_t cin_g = c_in / groups;
  const std::size_t cout_g = c_out / groups;
  if (weight.dim(1) != cin_g) {
    throw ShapeError("conv1d: weight dimension 1 is " + std::to_string(weight.dim(1)) + ", expected C_in/groups = " +
                     std::to_string(cin_g));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != c_out)) {
    throw ShapeError("conv1d: bias dimension 0 must equal C_out " + std::to_string(c_out));
  }
  const std::size_t l_out = conv1d_output_length(length, k, stride, padding);
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);

  // Valid kernel tap range for each output position.
  std::vector<std::size_t> k_lo(l_out), k_hi(l_out);
  for (std::size_t t = 0; t < l_out; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(padding);
    k_lo[t] = start < 0 ? static_cast<std::size_t>(-start) : 0;
    const std::ptrdiff_t room = static_cast<std::ptrdiff_t>(length) - start;
    k_hi[t] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(room, 0, static_cast<std::ptrdiff_t>(k)));
  }

  const double* xs = input.data().data();
  const double* ws = weight.data().data();
  std::vector<double> out(batch * c_out * l_out, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      const std::size_t g = co / cout_g;
      double* o = out.data() + (b * c_out + co) * l_out;
      for (std::size_t cj = 0; cj < cin_g; ++cj) {
        const std::size_t ci = g * cin_g + cj;
        const double* x = xs + (b * c_in + ci) * length;
        const double* w = ws + (co * cin_g + cj) * k;
        if (pointwise) {
          kernels::axpy(o, w[0], x, l_out);
          continue;
        }
        for (std::size_t t = 0; t < l_out; ++t) {
          if (k_hi[t] <= k_lo[t]) continue;
          const std::size_t x0 = t * stride + k_lo[t] - padding;
          o[t] += kernels::dot(x + x0, w + k_lo[t], k_hi[t] - k_lo[t]);
        }
      }
      if (bias) {
        const double bv = bias->data()[co];
        for (std::size_t t = 0; t < l_out; ++t) o[t] += bv;
      }
    }
  }
  const Tensor none;
  return make_result(
      {batch, c_out, l_out}, std::move(out), {&input, &weight, bias ? &*bias : &none}, "conv1d",
      [=, k_lo = std::move(k_lo), k_hi = std::move(k_hi)](Node& self) {
        const NodePtr& xn = self.inputs[0];
        const NodePtr& wn = self.inputs[1];
        double* gx = grad_of(xn);
        double* gw = grad_of(wn);
        double* gb = self.inputs.size() > 2 ? grad_of(self.inputs[2]) : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < c_out; ++co) {
            const std::size_t g = co / cout_g;
            const double* dy = self.grad.data() + (b * c_out + co) * l_out;
            if (gb) gb[co] += kernels::sum(dy, l_out);
            for (std::size_t cj = 0; cj < cin_g; ++cj) {
              const std::size_t ci = g * cin_g + cj;
              const std::size_t x_off = (b * c_in + ci) * length;
              const std::size_t w_off = (co * cin_g + cj) * k;
              if (pointwise) {
                if (gx) kernels::axpy(gx + x_off, wn->value[w_off], dy, l_out);
                if (gw) gw[w_off] += kernels::dot(dy, xn->value.data() + x_off, l_out);
                continue;
              }
              for (std::size_t t = 0; t < l_out; ++t) {
                const double d = dy[t];
                if (d == 0.0 || k_hi[t] <= k_lo[t]) continue;
                const std::size_t x0 = t * stride + k_lo[t] - padding;
                const std::size_t taps = k_hi[t] - k_lo[t];
                if (gx) kernels::axpy(gx + x_off + x0, d, wn->value.data() + w_off + k_lo[t], taps);
                if (gw) kernels::axpy(gw + w_off + k_lo[t], d, xn->value.data() + x_off + x0, taps);
              }
            }
          }
        }
      });
}

Tensor separable_conv1d(const Tensor& input, const Tensor& depthwise, const Tensor& pointwise, std::size_t stride,
                        std::size_t padding) {
  const std::size_t c_in = input.rank() == 3 ? input.dim(1) : input.dim(0);
  require_rank(depthwise, 3, "separable_conv1d", "depthwise weight");
  require_rank(pointwise, 3, "separable_conv1d", "pointwise weight");
  if (depthwise.dim(0) != c_in || depthwise.dim(1) != 1) {
    throw ShapeError("separable_conv1d: depthwise weight must be [" + std::to_string(c_in) + "x1xK], got " +
                     shape_str(depthwise.shape()));
  }
  if (pointwise.dim(1) != c_in || pointwise.dim(2) != 1) {
    throw ShapeError("separable_conv1d: pointwise weight must be [C_outx" + std::to_string(c_in) + "x1], got " +
                     shape_str(pointwise.shape()));
  }
  const Tensor spread = conv1d(input, depthwise, std::nullopt, stride, padding, c_in);
  return conv1d(spread, pointwise, std::nullopt, 1, 0, 1);
}

Tensor batch_norm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode, BatchNormStats& running,
                    double momentum, double epsilon) {
  if (input.rank() == 2) {
    const Tensor batched = reshape(input, {1, input.dim(0), input.dim(1)});
    const Tensor out = batch_norm1d(batched, gamma, beta, mode, running, momentum, epsilon);
    return reshape(out, input.shape());
  }
  require_rank(input, 3, "batch_norm1d", "input");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t length = input.dim(2);
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("batch_norm1d: affine parameters must have " + std::to_string(channels) + " entries");
  }
  const double* xs = input.data().data();
  const double count = static_cast<double>(batch * length);
  std::vector<double> mean(channels, 0.0), invstd(channels, 0.0);
  if (mode == Mode::kTrain) {
    std::vector<double> var(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) s += kernels::sum(xs + (b * channels + c) * length, length);
      mean[c] = s / count;
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* row = xs + (b * channels + c) * length;
        for (std::size_t t = 0; t < length; ++t) {
          const double d = row[t] - mean[c];
          sq += d * d;
        }
      }
      var[c] = sq / count;
      invstd[c] = 1.0 / std::sqrt(var[c] + epsilon);
    }
    if (!running.initialized()) {
      running.mean.assign(channels, 0.0);
      running.var.assign(channels, 1.0);
    }
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    for (std::size_t c = 0; c < channels; ++c) {
      running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mean[c];
      running.var[c] = (1.0 - momentum) * running.var[c] + momentum * var[c] * unbias;
    }
  } else {
    if (!running.initialized() || running.mean.size() != channels) {
      throw ConfigError("batch_norm1d: eval mode requires running statistics for " + std::to_string(channels) +
                        " channels");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = running.mean[c];
      invstd[c] = 1.0 / std::sqrt(running.var[c] + epsilon);
    }
  }
  const double* gs = gamma.data().data();
  const double* bs = beta.data().data();
  std::vector<double> xhat(input.numel());
  std::vector<double> out(input.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * length;
      for (std::size_t t = 0; t < length; ++t) {
        xhat[off + t] = (xs[off + t] - mean[c]) * invstd[c];
        out[off + t] = gs[c] * xhat[off + t] + bs[c];
      }
    }
  }
  const bool training = mode == Mode::kTrain;
  return make_result(input.shape(), std::move(out), {&input, &gamma, &beta}, "batch_norm1d",
                     [=, xhat = std::move(xhat), invstd = std::move(invstd)](Node& self) {
                       double* gx = grad_of(self.inputs[0]);
                       double* gg = grad_of(self.inputs[1]);
                       double* gbeta = grad_of(self.inputs[2]);
                       const double* gam = self.inputs[1]->value.data();
                       const double* dy = self.grad.data();
                       for (std::size_t c = 0; c < channels; ++c) {
                         double sum_dy = 0.0, sum_dy_xhat = 0.0;
                         for (std::size_t b = 0; b < batch; ++b) {
                           const std::size_t off = (b * channels + c) * length;
                           sum_dy += kernels::sum(dy + off, length);
                           sum_dy_xhat += kernels::dot(dy + off, xhat.data() + off, length);
                         }
                         if (gg) gg[c] += sum_dy_xhat;
                         if (gbeta) gbeta[c] += sum_dy;
                         if (!gx) continue;
                         const double scale_c = gam[c] * invstd[c];
                         for (std::size_t b = 0; b < batch; ++b) {
                           const std::size_t off = (b * channels + c) * length;
                           if (training) {
                             for (std::size_t t = 0; t < length; ++t) {
                               gx[off + t] += scale_c * (dy[off + t] - sum_dy / count -
                                                         xhat[off + t] * sum_dy_xhat / count);
                             }
                           } else {
                             kernels::axpy(gx + off, scale_c, dy + off, length);
                           }
                         }
                       }
                     });
}

Tensor global_avg_pool(const Tensor& input) { return mean_axis(input, input.rank() - 1); }

Tensor adaptive_avg_pool(const Tensor& input, std::size_t target) {
  const std::size_t length = input.shape().back();
  if (target == 0 || target > length) {
    throw ShapeError("adaptive_avg_pool: target length " + std::to_string(target) + " must be in [1, " +
                     std::to_string(length) + "]");
  }
  const std::size_t rows = input.numel() / length;
  std::vector<std::size_t> lo(target), hi(target);
  for (std::size_t i = 0; i < target; ++i) {
    lo[i] = i * length / target;
    hi[i] = (i + 1) * length / target;
  }
  const double* xs = input.data().data();
  std::vector<double> out(rows * target);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < target; ++i) {
      out[r * target + i] = kernels::sum(xs + r * length + lo[i], hi[i] - lo[i]) / static_cast<double>(hi[i] - lo[i]);
    }
  }
  Shape out_shape = input.shape();
  out_shape.back() = target;
  return make_result(std::move(out_shape), std::move(out), {&input}, "adaptive_avg_pool",
                     [=, lo = std::move(lo), hi = std::move(hi)](Node& self) {
                       double* g = grad_of(self.inputs[0]);
                       if (!g) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t i = 0; i < target; ++i) {
                           const double d = self.grad[r * target + i] / static_cast<double>(hi[i] - lo[i]);
                           for (std::size_t t = lo[i]; t < hi[i]; ++t) g[r * length + t] += d;
                         }
                       }
                     });
}

Tensor dropout(const Tensor& input, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::kEval || rate == 0.0) return input;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> mask(input.numel());
  for (double& m : mask) m = uniform(rng) < rate ? 0.0 : keep_scale;
  std::vector<double> out(input.numel());
  kernels::mul(out.data(), input.data().data(), mask.data(), out.size());
  return make_result(input.shape(), std::move(out), {&input}, "dropout", [mask = std::move(mask)](Node& self) {
    double* g = grad_of(self.inputs[0]);
    if (!g) return;
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

}  // namespace transsleep::ops
