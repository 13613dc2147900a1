#pragma once

#include <Eigen/Core>

// Differentiable primitives over Tensor.
//
// Binary ops broadcast NumPy-style: shapes are aligned on trailing axes and an
// extent of 1 stretches to match the other operand. Gradients flowing into a
// broadcast operand are summed over the stretched axes.

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fscil/tensor.hpp"

namespace fscil {

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// For each output element, the flat offset into each (possibly stretched) input.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  const auto stra = row_major_strides(a);
  const auto strb = row_major_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ia = i + a.size() >= r ? i + a.size() - r : r;
    const std::size_t ib = i + b.size() >= r ? i + b.size() - r : r;
    const std::size_t da = ia < a.size() ? a[ia] : 1;
    const std::size_t db = ib < b.size() ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
    if (da == 0 || db == 0) out[i] = 0;
    sa[i] = (ia < a.size() && da != 1) ? stra[ia] : 0;
    sb[i] = (ib < b.size() && db != 1) ? strb[ib] : 0;
  }
  const std::size_t n = shape_numel(out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t k = 0; k < n; ++k) {
    plan.a_index[k] = oa;
    plan.b_index[k] = ob;
    for (std::size_t i = r; i-- > 0;) {
      ++counter[i];
      oa += sa[i];
      ob += sb[i];
      if (counter[i] < out[i]) break;
      oa -= sa[i] * counter[i];
      ob -= sb[i] * counter[i];
      counter[i] = 0;
    }
  }
  plan.out = std::move(out);
  return plan;
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = shape_numel(plan->out);
  std::vector<T> out(n);
  const auto x = a.data();
  const auto y = b.data();
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[plan->a_index[i]], y[plan->b_index[i]]);
  }
  NodePtr<T> an = a.node(), bn = b.node();
  return make_op_result<T>(name, plan->out, std::move(out), {an, bn}, [an, bn, plan, da, db](const Node<T>& o) {
    const std::size_t m = o.data.size();
    const auto& xs = an->data;
    const auto& ys = bn->data;
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t ia = plan->same ? i : plan->a_index[i];
        const std::size_t ib = plan->same ? i : plan->b_index[i];
        g[ia] += da(xs[ia], ys[ib], o.data[i], o.grad[i]);
      }
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t ia = plan->same ? i : plan->a_index[i];
        const std::size_t ib = plan->same ? i : plan->b_index[i];
        g[ib] += db(xs[ia], ys[ib], o.data[i], o.grad[i]);
      }
    }
  });
}

// df receives (input, output, upstream grad).
template <typename T, typename Fwd, typename DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, Fwd fwd, DF df) {
  const auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  NodePtr<T> xn = x.node();
  return make_op_result<T>(name, x.shape(), std::move(out), {xn}, [xn, df](const Node<T>& o) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += df(xn->data[i], o.data[i], o.grad[i]);
  });
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T, T g) { return g * y; },
      [](T x, T, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T, T g) { return g / y; },
      [](T, T y, T out, T g) { return -g * out / y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary_op<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T, T g) { return g * factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return detail::unary_op<T>(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T{-1});
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return scale(a, s); }
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return scale(a, s); }
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, T s) { return add_scalar(a, -s); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y, T g) { return g * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T, T g) { return g / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y, T g) { return g / (T{2} * y); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T, T g) { return T{2} * v * g; });
}

// Subgradient 0 at the origin.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T, T g) { return v > T{0} ? g : (v < T{0} ? -g : T{0}); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "sigmoid", x, [](T v) { return detail::stable_sigmoid(v); }, [](T, T y, T g) { return g * y * (T{1} - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "silu", x, [](T v) { return v * detail::stable_sigmoid(v); },
      [](T v, T, T g) {
        const T s = detail::stable_sigmoid(v);
        return g * (s + v * s * (T{1} - s));
      });
}

// log(1 + e^x) evaluated as max(x, 0) + log1p(e^{-|x|}).
template <typename T>
T softplus_value(T v) {
  return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v)));
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "softplus", x, [](T v) { return softplus_value(v); },
      [](T v, T, T g) { return g * detail::stable_sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (const T v : x.data()) total += v;
  detail::NodePtr<T> xn = x.node();
  return make_op_result<T>("sum", Shape{}, {total}, {xn}, [xn](const Node<T>& o) {
    auto& g = xn->ensure_grad();
    for (auto& v : g) v += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, long axis, bool keepdim = false) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  Shape out_shape = s;
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  }
  std::vector<T> out(outer * inner, T{0});
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * n + k) * inner + i];
  detail::NodePtr<T> xn = x.node();
  return make_op_result<T>("sum_axis", std::move(out_shape), std::move(out), {xn},
                           [xn, outer, inner, n](const Node<T>& o) {
                             auto& g = xn->ensure_grad();
                             for (std::size_t a = 0; a < outer; ++a)
                               for (std::size_t k = 0; k < n; ++k)
                                 for (std::size_t i = 0; i < inner; ++i)
                                   g[(a * n + k) * inner + i] += o.grad[a * inner + i];
                           });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, long axis, bool keepdim = false) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  if (x.shape()[ax] == 0) throw ShapeError("mean over empty axis");
  return scale(sum(x, axis, keepdim), T{1} / static_cast<T>(x.shape()[ax]));
}

// Euclidean norm over the last axis.
template <typename T>
Tensor<T> norm_last(const Tensor<T>& x, bool keepdim = false) {
  if (x.rank() == 0) throw ShapeError("norm_last on a scalar");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape.back() = 1;
  } else {
    out_shape.pop_back();
  }
  std::vector<T> out(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc{0};
    for (std::size_t j = 0; j < d; ++j) acc += in[r * d + j] * in[r * d + j];
    out[r] = std::sqrt(acc);
  }
  detail::NodePtr<T> xn = x.node();
  return make_op_result<T>("norm_last", std::move(out_shape), std::move(out), {xn}, [xn, rows, d](const Node<T>& o) {
    auto& g = xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T n = o.data[r];
      if (n == T{0}) continue;
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += o.grad[r] * xn->data[r * d + j] / n;
    }
  });
}

// Rows scaled to unit Euclidean norm; a zero row is a NumericError.
template <typename T>
Tensor<T> normalize_last(const Tensor<T>& x) {
  auto n = norm_last(x, true);
  for (const T v : n.data()) {
    if (v == T{0}) throw NumericError("normalize_last: zero-norm row");
  }
  return div(x, n);
}

// Cosine similarity of two vectors of equal length.
template <typename T>
Tensor<T> cosine(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) {
    throw ShapeError("cosine expects equal-length vectors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto x = a.data();
  const auto y = b.data();
  T dot{0}, nx{0}, ny{0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  nx = std::sqrt(nx);
  ny = std::sqrt(ny);
  if (nx == T{0} || ny == T{0}) throw NumericError("cosine of a zero-norm vector");
  const T c = dot / (nx * ny);
  detail::NodePtr<T> an = a.node(), bn = b.node();
  return make_op_result<T>("cosine", Shape{}, {c}, {an, bn}, [an, bn, nx, ny, c](const Node<T>& o) {
    const T g = o.grad[0];
    const std::size_t n = an->data.size();
    if (an->requires_grad) {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        ga[i] += g * (bn->data[i] / (nx * ny) - c * an->data[i] / (nx * nx));
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        gb[i] += g * (an->data[i] / (nx * ny) - c * bn->data[i] / (ny * ny));
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

// [M, K] x [K, N] -> [M, N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(m * n, T{0});
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T xv = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += xv * y[p * n + j];
    }
  detail::NodePtr<T> an = a.node(), bn = b.node();
  return make_op_result<T>("matmul", Shape{m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](const Node<T>& o) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += o.grad[i * n + j] * bn->data[p * n + j];
          g[i * k + p] += acc;
        }
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T xv = an->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) g[p * n + j] += xv * o.grad[i * n + j];
        }
    }
  });
}

// Affine map over the last axis: y = x W^T + b, W is [out, in], b is [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || bias.rank() != 1 || weight.shape()[1] != x.shape().back() ||
      bias.shape()[0] != weight.shape()[0]) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                     shape_str(bias.shape()));
  }
  const std::size_t in = weight.shape()[1], out_dim = weight.shape()[0];
  const std::size_t rows = in == 0 ? 0 : x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  using Map = Eigen::Map<RowMat>;
  using ConstVec = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
  std::vector<T> out(rows * out_dim);
  const auto xi = static_cast<Eigen::Index>(in), ri = static_cast<Eigen::Index>(rows),
             oi = static_cast<Eigen::Index>(out_dim);
  if (rows > 0) {
    Map(out.data(), ri, oi).noalias() = ConstMap(x.data().data(), ri, xi) * ConstMap(weight.data().data(), oi, xi).transpose();
    Map(out.data(), ri, oi).rowwise() += ConstVec(bias.data().data(), oi);
  }
  detail::NodePtr<T> xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_op_result<T>(
      "linear", std::move(out_shape), std::move(out), {xn, wn, bn}, [xn, wn, bn, ri, xi, oi](const Node<T>& o) {
        if (ri == 0) return;
        const ConstMap gy(o.grad.data(), ri, oi);
        if (xn->requires_grad) Map(xn->ensure_grad().data(), ri, xi).noalias() += gy * ConstMap(wn->data.data(), oi, xi);
        if (wn->requires_grad)
          Map(wn->ensure_grad().data(), oi, xi).noalias() += gy.transpose() * ConstMap(xn->data.data(), ri, xi);
        if (bn->requires_grad) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bn->ensure_grad().data(), oi) += gy.colwise().sum();
        }
      });
}

// Depthwise 1D convolution along axis 1 of x: [N, L, C]; weight [C, width];
// bias [C]; zero padding `pad` on both ends (cross-correlation orientation).
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t pad) {
  if (x.rank() != 3 || weight.rank() != 2 || bias.rank() != 1 || weight.shape()[0] != x.shape()[2] ||
      bias.shape()[0] != x.shape()[2]) {
    throw ShapeError("depthwise_conv1d: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()));
  }
  const std::size_t n = x.shape()[0], len = x.shape()[1], ch = x.shape()[2], width = weight.shape()[1];
  if (len < 1) throw ShapeError("depthwise_conv1d: empty sequence");
  if (len + 2 * pad < width) throw ShapeError("depthwise_conv1d: kernel wider than padded input");
  const std::size_t out_len = len + 2 * pad - width + 1;
  std::vector<T> out(n * out_len * ch);
  const auto xs = x.data();
  const auto w = weight.data();
  const auto b = bias.data();
  auto src = [=](std::size_t l, std::size_t j) -> long { return static_cast<long>(l + j) - static_cast<long>(pad); };
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t l = 0; l < out_len; ++l)
      for (std::size_t c = 0; c < ch; ++c) {
        T acc = b[c];
        for (std::size_t j = 0; j < width; ++j) {
          const long p = src(l, j);
          if (p >= 0 && p < static_cast<long>(len)) acc += w[c * width + j] * xs[(s * len + static_cast<std::size_t>(p)) * ch + c];
        }
        out[(s * out_len + l) * ch + c] = acc;
      }
  detail::NodePtr<T> xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_op_result<T>("depthwise_conv1d", Shape{n, out_len, ch}, std::move(out), {xn, wn, bn},
                           [=](const Node<T>& o) {
                             for (std::size_t s = 0; s < n; ++s)
                               for (std::size_t l = 0; l < out_len; ++l)
                                 for (std::size_t c = 0; c < ch; ++c) {
                                   const T g = o.grad[(s * out_len + l) * ch + c];
                                   if (bn->requires_grad) bn->ensure_grad()[c] += g;
                                   for (std::size_t j = 0; j < width; ++j) {
                                     const long p = src(l, j);
                                     if (p < 0 || p >= static_cast<long>(len)) continue;
                                     const std::size_t xi = (s * len + static_cast<std::size_t>(p)) * ch + c;
                                     if (xn->requires_grad) xn->ensure_grad()[xi] += g * wn->data[c * width + j];
                                     if (wn->requires_grad) wn->ensure_grad()[c * width + j] += g * xn->data[xi];
                                   }
                                 }
                           });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  detail::NodePtr<T> xn = x.node();
  return make_op_result<T>("reshape", std::move(shape), x.to_vector(), {xn}, [xn](const Node<T>& o) {
    accumulate_grad<T>(*xn, o.grad);
  });
}

// out.shape[i] = x.shape[axes[i]]
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axis count mismatch");
  std::vector<bool> used(r, false);
  for (const auto a : axes) {
    if (a >= r || used[a]) throw ShapeError("permute: axes are not a permutation");
    used[a] = true;
  }
  const Shape& s = x.shape();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[axes[i]];
  const auto in_strides = detail::row_major_strides(s);
  const std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    (*src)[k] = off;
    for (std::size_t i = r; i-- > 0;) {
      ++counter[i];
      off += in_strides[axes[i]];
      if (counter[i] < out_shape[i]) break;
      off -= in_strides[axes[i]] * counter[i];
      counter[i] = 0;
    }
  }
  std::vector<T> out(n);
  const auto in = x.data();
  for (std::size_t k = 0; k < n; ++k) out[k] = in[(*src)[k]];
  detail::NodePtr<T> xn = x.node();
  return make_op_result<T>("permute", std::move(out_shape), std::move(out), {xn}, [xn, src](const Node<T>& o) {
    auto& g = xn->ensure_grad();
    for (std::size_t k = 0; k < o.grad.size(); ++k) g[(*src)[k]] += o.grad[k];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t a0, std::size_t a1) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  if (a0 >= axes.size() || a1 >= axes.size()) throw ShapeError("transpose: axis out of range");
  std::swap(axes[a0], axes[a1]);
  return permute(x, axes);
}

// Gathers slices along `axis`; indices may repeat. Backward scatter-adds.
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, long axis, std::vector<std::size_t> indices) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  for (const auto i : indices) {
    if (i >= n) throw ShapeError("index_select: index " + std::to_string(i) + " out of range " + std::to_string(n));
  }
  const std::size_t m = indices.size();
  Shape out_shape = s;
  out_shape[ax] = m;
  std::vector<T> out(outer * m * inner);
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < m; ++k)
      std::copy_n(in.data() + (o * n + indices[k]) * inner, inner, out.data() + (o * m + k) * inner);
  detail::NodePtr<T> xn = x.node();
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
  return make_op_result<T>("index_select", std::move(out_shape), std::move(out), {xn},
                           [xn, idx, outer, inner, n, m](const Node<T>& o) {
                             auto& g = xn->ensure_grad();
                             for (std::size_t a = 0; a < outer; ++a)
                               for (std::size_t k = 0; k < m; ++k) {
                                 const T* src = o.grad.data() + (a * m + k) * inner;
                                 T* dst = g.data() + (a * n + (*idx)[k]) * inner;
                                 for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                               }
                           });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, long axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  if (start + length > x.shape()[ax]) throw ShapeError("slice out of range");
  std::vector<std::size_t> idx(length);
  std::iota(idx.begin(), idx.end(), start);
  return index_select(x, axis, std::move(idx));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t ax = detail::normalize_axis(axis, parts.front().rank());
  Shape out_shape = parts.front().shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts.front().shape();
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
    a[ax] = 0;
    b[ax] = 0;
    if (a != b) throw ShapeError("concat: shapes " + shape_str(p.shape()) + " and " + shape_str(parts.front().shape()));
    out_shape[ax] += p.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
  for (std::size_t i = ax + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  const std::size_t total = out_shape[ax];
  std::vector<T> out(shape_numel(out_shape));
  std::vector<detail::NodePtr<T>> nodes;
  std::vector<std::size_t> widths;
  std::size_t base = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax];
    const auto in = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(in.data() + o * w * inner, w * inner, out.data() + (o * total + base) * inner);
    base += w;
    nodes.push_back(p.node());
    widths.push_back(w);
  }
  return make_op_result<T>("concat", std::move(out_shape), std::move(out), nodes,
                           [nodes, widths, outer, inner, total](const Node<T>& o) {
                             std::size_t start = 0;
                             for (std::size_t q = 0; q < nodes.size(); ++q) {
                               const std::size_t w = widths[q];
                               if (nodes[q]->requires_grad) {
                                 auto& g = nodes[q]->ensure_grad();
                                 for (std::size_t a = 0; a < outer; ++a)
                                   for (std::size_t i = 0; i < w * inner; ++i)
                                     g[a * w * inner + i] += o.grad[(a * total + start) * inner + i];
                               }
                               start += w;
                             }
                           });
}

}  // namespace fscil
