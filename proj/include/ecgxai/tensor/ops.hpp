#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "ecgxai/core/random.hpp"
#include "ecgxai/tensor/tensor.hpp"

namespace ecgxai::tensor {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

inline std::string op_shapes(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::size_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) throw ContractError(op_shapes(op, a, b));
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `in` viewed against `out`, with zeros on broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = out.size() - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

/// Calls f(out_index, a_index, b_index) over the broadcast output.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t total = numel_of(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t nd = out.size();
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    f(i, ia, ib);
    for (std::size_t d = nd; d-- > 0;) {
      if (++idx[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      ia -= sa[d] * (out[d] - 1);
      ib -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

template <typename T>
bool tracks(const std::shared_ptr<Node<T>>& n) {
  return n->requires_grad;
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const char* op, BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  std::vector<T> out(numel_of(out_shape));
  const auto& av = a.values();
  const auto& bv = b.values();
  for_each_broadcast(out_shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::add: out[i] = av[ia] + bv[ib]; break;
      case BinaryKind::sub: out[i] = av[ia] - bv[ib]; break;
      case BinaryKind::mul: out[i] = av[ia] * bv[ib]; break;
    }
  });
  auto na = a.node();
  auto nb = b.node();
  return make_result<T>(op, out_shape, std::move(out), {&a, &b}, [na, nb, kind, out_shape](Node<T>& self) {
    const auto& g = self.grad;
    T* ga = tracks(na) ? na->ensure_grad().data() : nullptr;
    T* gb = tracks(nb) ? nb->ensure_grad().data() : nullptr;
    const auto& av = na->data;
    const auto& bv = nb->data;
    for_each_broadcast(out_shape, na->shape, nb->shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case BinaryKind::add:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] += g[i];
          break;
        case BinaryKind::sub:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] -= g[i];
          break;
        case BinaryKind::mul:
          if (ga) ga[ia] += g[i] * bv[ib];
          if (gb) gb[ib] += g[i] * av[ia];
          break;
      }
    });
  });
}

/// Elementwise map with derivative expressed through input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  auto nx = x.node();
  Tensor<T> result = make_result<T>(op, x.shape(), std::move(out), {&x}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward_fn = [nx, deriv](Node<T>& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += self.grad[i] * deriv(nx->data[i], self.data[i]);
    };
  }
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary("add", detail::BinaryKind::add, a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary("sub", detail::BinaryKind::sub, a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary("mul", detail::BinaryKind::mul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// a: (..., M, K); b: (K, N) shared across the batch, or (..., K, N) with
/// batch dims equal to a's. Output (..., M, N).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using detail::ConstMatMap;
  using detail::MatMap;
  if (a.ndim() < 2 || b.ndim() < 2) throw ContractError(detail::op_shapes("matmul", a.shape(), b.shape()));
  const std::size_t K = a.shape().back();
  const std::size_t M = a.shape()[a.ndim() - 2];
  const std::size_t N = b.shape().back();
  if (b.shape()[b.ndim() - 2] != K) throw ContractError(detail::op_shapes("matmul", a.shape(), b.shape()));
  const bool shared_b = b.ndim() == 2;
  if (!shared_b) {
    if (b.ndim() != a.ndim() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
      throw ContractError(detail::op_shapes("matmul", a.shape(), b.shape()));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(N);
  std::vector<T> out(numel_of(out_shape));
  const std::size_t batch = a.numel() / (M * K);
  if (shared_b) {
    // Fold every leading dim into the row count: one GEMM.
    MatMap<T>(out.data(), batch * M, N).noalias() =
        ConstMatMap<T>(a.values().data(), batch * M, K) * ConstMatMap<T>(b.values().data(), K, N);
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      MatMap<T>(out.data() + i * M * N, M, N).noalias() =
          ConstMatMap<T>(a.values().data() + i * M * K, M, K) *
          ConstMatMap<T>(b.values().data() + i * K * N, K, N);
  }
  auto na = a.node();
  auto nb = b.node();
  return detail::make_result<T>("matmul", out_shape, std::move(out), {&a, &b},
                                [na, nb, batch, M, K, N, shared_b](detail::Node<T>& self) {
    const T* g = self.grad.data();
    if (shared_b) {
      ConstMatMap<T> G(g, batch * M, N);
      if (na->requires_grad)
        MatMap<T>(na->ensure_grad().data(), batch * M, K).noalias() +=
            G * ConstMatMap<T>(nb->data.data(), K, N).transpose();
      if (nb->requires_grad)
        MatMap<T>(nb->ensure_grad().data(), K, N).noalias() +=
            ConstMatMap<T>(na->data.data(), batch * M, K).transpose() * G;
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMatMap<T> G(g + i * M * N, M, N);
      if (na->requires_grad)
        MatMap<T>(na->ensure_grad().data() + i * M * K, M, K).noalias() +=
            G * ConstMatMap<T>(nb->data.data() + i * K * N, K, N).transpose();
      if (nb->requires_grad)
        MatMap<T>(nb->ensure_grad().data() + i * K * N, K, N).noalias() +=
            ConstMatMap<T>(na->data.data() + i * M * K, M, K).transpose() * G;
    }
  });
}

/// x (..., in) times weight (in, out) plus bias (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ContractError(detail::op_shapes("reshape", x.shape(), shape));
  auto nx = x.node();
  return detail::make_result<T>("reshape", std::move(shape), x.values(), {&x}, [nx](detail::Node<T>& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

namespace detail {

/// For each output linear index, the source linear index under a permutation.
inline std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& dims,
                                              Shape& out_shape) {
  const std::size_t nd = in.size();
  out_shape.assign(nd, 0);
  std::vector<std::size_t> in_strides(nd, 1);
  for (std::size_t d = nd - 1; d-- > 0;) in_strides[d] = in_strides[d + 1] * in[d + 1];
  std::vector<std::size_t> src_strides(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    out_shape[d] = in[dims[d]];
    src_strides[d] = in_strides[dims[d]];
  }
  const std::size_t total = numel_of(in);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    map[i] = src;
    for (std::size_t d = nd; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        src += src_strides[d];
        break;
      }
      src -= src_strides[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::size_t> dims) {
  const std::size_t nd = x.ndim();
  std::vector<bool> seen(nd, false);
  bool valid = dims.size() == nd;
  for (std::size_t d : dims) {
    if (!valid || d >= nd || seen[d]) {
      valid = false;
      break;
    }
    seen[d] = true;
  }
  if (!valid) throw ContractError("permute: invalid axis order for shape " + shape_str(x.shape()));
  Shape out_shape;
  auto map = detail::permute_index(x.shape(), dims, out_shape);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[map[i]];
  auto nx = x.node();
  return detail::make_result<T>("permute", out_shape, std::move(out), {&x},
                                [nx, map = std::move(map)](detail::Node<T>& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t d0, std::size_t d1) {
  require(d0 < x.ndim() && d1 < x.ndim(), "transpose: axis out of range for " + shape_str(x.shape()));
  std::vector<std::size_t> dims(x.ndim());
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[d0], dims[d1]);
  return permute(x, std::move(dims));
}

/// Elements [start, end) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t end) {
  if (axis >= x.ndim() || start >= end || end > x.dim(axis))
    throw ContractError("slice: range [" + std::to_string(start) + "," + std::to_string(end) +
                        ") on axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const std::size_t outer = numel_of(Shape(x.shape().begin(), x.shape().begin() + axis));
  const std::size_t inner = numel_of(Shape(x.shape().begin() + axis + 1, x.shape().end()));
  const std::size_t len = x.dim(axis);
  const std::size_t w = end - start;
  Shape out_shape = x.shape();
  out_shape[axis] = w;
  std::vector<T> out(outer * w * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.values().begin() + (o * len + start) * inner, w * inner, out.begin() + o * w * inner);
  auto nx = x.node();
  return detail::make_result<T>("slice", out_shape, std::move(out), {&x},
                                [nx, outer, inner, len, start, w](detail::Node<T>& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < w * inner; ++i)
        gx[(o * len + start) * inner + i] += self.grad[o * w * inner + i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts.front().shape();
  require(axis < ref.size(), "concat: axis out of range for " + shape_str(ref));
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    bool ok = p.ndim() == ref.size();
    for (std::size_t d = 0; ok && d < ref.size(); ++d)
      if (d != axis && p.dim(d) != ref[d]) ok = false;
    if (!ok) throw ContractError(detail::op_shapes("concat", ref, p.shape()));
    total_axis += p.dim(axis);
  }
  const std::size_t outer = numel_of(Shape(ref.begin(), ref.begin() + axis));
  const std::size_t inner = numel_of(Shape(ref.begin() + axis + 1, ref.end()));
  Shape out_shape = ref;
  out_shape[axis] = total_axis;
  std::vector<T> out(outer * total_axis * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.values().begin() + o * w * inner, w * inner,
                  out.begin() + (o * total_axis + off) * inner);
    offsets.push_back(off);
    off += w;
  }
  Tensor<T> result(out_shape, std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && grad_enabled()) {
    auto& node = *result.node();
    node.op = "concat";
    node.requires_grad = true;
    for (const auto& p : parts) node.parents.push_back(p.node());
    node.backward_fn = [outer, inner, total_axis, offsets](detail::Node<T>& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& pn = self.parents[k];
        if (!pn->requires_grad) continue;
        auto& gp = pn->ensure_grad();
        const std::size_t w = gp.size() / (outer * inner);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < w * inner; ++i)
            gp[o * w * inner + i] += self.grad[(o * total_axis + offsets[k]) * inner + i];
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  auto nx = x.node();
  return detail::make_result<T>("sum", {1}, {acc}, {&x}, [nx](detail::Node<T>& self) {
    auto& gx = nx->ensure_grad();
    for (auto& g : gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean over one axis; the axis is removed from the shape.
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.ndim(), "mean: axis out of range for " + shape_str(x.shape()));
  const std::size_t outer = numel_of(Shape(x.shape().begin(), x.shape().begin() + axis));
  const std::size_t inner = numel_of(Shape(x.shape().begin() + axis + 1, x.shape().end()));
  const std::size_t len = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(outer * inner, T(0));
  const T inv = T(1) / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i] * inv;
  auto nx = x.node();
  return detail::make_result<T>("mean_axis", out_shape, std::move(out), {&x},
                                [nx, outer, inner, len, inv](detail::Node<T>& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * len + l) * inner + i] += self.grad[o * inner + i] * inv;
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
T sigmoid_scalar(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      "sigmoid", x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// ---------------------------------------------------------------------------
// Softmax family (last axis)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> softmax_impl(const Tensor<T>& x, const std::vector<std::uint8_t>* key_mask) {
  require(x.ndim() >= 1, "softmax: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::size_t rows_per_batch = rows;
  if (key_mask) {
    require(x.ndim() >= 2, "softmax: masked input needs a batch axis");
    const std::size_t b = x.dim(0);
    if (key_mask->size() != b * n)
      throw ContractError("softmax: key mask of " + std::to_string(key_mask->size()) +
                          " entries does not cover " + shape_str(x.shape()));
    rows_per_batch = rows / b;
  }
  std::vector<T> out(x.numel(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.values().data() + r * n;
    T* o = out.data() + r * n;
    const std::uint8_t* keep = key_mask ? key_mask->data() + (r / rows_per_batch) * n : nullptr;
    T mx = -std::numeric_limits<T>::infinity();
    std::size_t kept = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (!keep || keep[j]) {
        mx = std::max(mx, in[j]);
        ++kept;
      }
    if (kept == 0) throw ContractError("softmax: every key position is masked for a query row");
    // Non-finite rows propagate NaN instead of failing here.
    if (!std::isfinite(mx)) mx = 0;
    T denom = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (keep && !keep[j]) continue;
      o[j] = std::exp(in[j] - mx);
      denom += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= denom;
  }
  auto nx = x.node();
  Tensor<T> result = make_result<T>(key_mask ? "masked_softmax" : "softmax", x.shape(), std::move(out),
                                    {&x}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward_fn = [nx, n, rows](Node<T>& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = self.data.data() + r * n;
        const T* g = self.grad.data() + r * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return result;
}

}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  return detail::softmax_impl(x, static_cast<const std::vector<std::uint8_t>*>(nullptr));
}

/// Softmax over the last axis where key_mask (batch, last_dim) marks kept
/// positions with 1. Masked positions get exactly zero weight.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const std::vector<std::uint8_t>& key_mask) {
  return detail::softmax_impl(x, &key_mask);
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.values().data() + r * n;
    T mx = *std::max_element(in, in + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(in[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[j] - lse;
  }
  auto nx = x.node();
  Tensor<T> result = detail::make_result<T>("log_softmax", x.shape(), std::move(out), {&x}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward_fn = [nx, n, rows](detail::Node<T>& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T gs = 0;
        for (std::size_t j = 0; j < n; ++j) gs += self.grad[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += self.grad[r * n + j] - std::exp(self.data[r * n + j]) * gs;
      }
    };
  }
  return result;
}

/// Mean negative log-likelihood of softmax(logits) at the one-hot targets.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const Tensor<T>& one_hot) {
  if (logits.ndim() != 2 || logits.shape() != one_hot.shape())
    throw ContractError(detail::op_shapes("cross_entropy", logits.shape(), one_hot.shape()));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  for (std::size_t b = 0; b < B; ++b) {
    int ones = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const T v = one_hot[b * C + c];
      if (v == T(1)) ++ones;
      else if (v != T(0)) ones = -100;
    }
    if (ones != 1) throw ContractError("cross_entropy: label row " + std::to_string(b) + " is not one-hot");
  }
  const Tensor<T> logp = log_softmax(logits);
  return scale(sum(mul(logp, one_hot)), T(-1) / static_cast<T>(B));
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Normalizes the last axis, then applies gamma/beta of that length.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6)) {
  const std::size_t n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n)
    throw ContractError(detail::op_shapes("layer_norm", x.shape(), gamma.shape()));
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.values().data() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mu) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * gamma[j] + beta[j];
    }
  }
  auto nx = x.node(), ng = gamma.node(), nb = beta.node();
  return detail::make_result<T>("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                                [nx, ng, nb, n, rows, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std)](detail::Node<T>& self) {
    const auto& g = self.grad;
    if (ng->requires_grad || nb->requires_grad) {
      auto* gg = ng->requires_grad ? ng->ensure_grad().data() : nullptr;
      auto* gb = nb->requires_grad ? nb->ensure_grad().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) {
          if (gg) gg[j] += g[r * n + j] * xhat[r * n + j];
          if (gb) gb[j] += g[r * n + j];
        }
    }
    if (!nx->requires_grad) return;
    auto& gx = nx->ensure_grad();
    const auto& gamma = ng->data;
    for (std::size_t r = 0; r < rows; ++r) {
      T sum_dy = 0, sum_dy_x = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T dy = g[r * n + j] * gamma[j];
        sum_dy += dy;
        sum_dy_x += dy * xhat[r * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        const T dy = g[r * n + j] * gamma[j];
        gx[r * n + j] += inv_std[r] / static_cast<T>(n) *
                         (static_cast<T>(n) * dy - sum_dy - xhat[r * n + j] * sum_dy_x);
      }
    }
  });
}

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  // When set, training-mode calls accumulate an equal-weight average of the
  // batch statistics instead of the exponential one.
  bool cumulative = false;
  std::size_t batches = 0;

  void begin_cumulative() {
    cumulative = true;
    batches = 0;
  }

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// x: (B, C) or (B, C, L); statistics per channel over batch and length.
/// Training mode normalizes with batch statistics and updates the running
/// ones; eval mode uses the frozen running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training) {
  if (x.ndim() < 2 || x.ndim() > 3 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1) ||
      state.running_mean.size() != x.dim(1))
    throw ContractError(detail::op_shapes("batch_norm", x.shape(), gamma.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.ndim() == 3 ? x.dim(2) : 1;
  const std::size_t count = B * L;
  std::vector<T> mu(C, T(0)), inv_std(C);
  const auto& xv = x.values();
  if (training) {
    require(count > 1, "batch_norm: training mode needs more than one value per channel");
    std::vector<T> var(C, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = xv.data() + (b * C + c) * L;
        for (std::size_t l = 0; l < L; ++l) mu[c] += p[l];
      }
    for (auto& m : mu) m /= static_cast<T>(count);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = xv.data() + (b * C + c) * L;
        for (std::size_t l = 0; l < L; ++l) var[c] += (p[l] - mu[c]) * (p[l] - mu[c]);
      }
    for (std::size_t c = 0; c < C; ++c) {
      const T biased = var[c] / static_cast<T>(count);
      inv_std[c] = T(1) / std::sqrt(biased + state.eps);
      const T unbiased = var[c] / static_cast<T>(count - 1);
      const T w = state.cumulative ? T(1) / static_cast<T>(state.batches + 1) : state.momentum;
      state.running_mean[c] = (T(1) - w) * state.running_mean[c] + w * mu[c];
      state.running_var[c] = (T(1) - w) * state.running_var[c] + w * unbiased;
    }
    ++state.batches;
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  std::vector<T> out(x.numel()), xhat(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * L;
      for (std::size_t l = 0; l < L; ++l) {
        xhat[base + l] = (xv[base + l] - mu[c]) * inv_std[c];
        out[base + l] = xhat[base + l] * gamma[c] + beta[c];
      }
    }
  auto nx = x.node(), ng = gamma.node(), nb = beta.node();
  return detail::make_result<T>("batch_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                                [nx, ng, nb, B, C, L, training, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std)](detail::Node<T>& self) {
    const auto& g = self.grad;
    std::vector<T> sum_dy(C, T(0)), sum_dy_x(C, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (b * C + c) * L;
        for (std::size_t l = 0; l < L; ++l) {
          sum_dy[c] += g[base + l];
          sum_dy_x[c] += g[base + l] * xhat[base + l];
        }
      }
    if (ng->requires_grad) {
      auto& gg = ng->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_x[c];
    }
    if (nb->requires_grad) {
      auto& gb = nb->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
    }
    if (!nx->requires_grad) return;
    auto& gx = nx->ensure_grad();
    const auto& gamma = ng->data;
    const T n = static_cast<T>(B * L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (b * C + c) * L;
        const T k = gamma[c] * inv_std[c];
        for (std::size_t l = 0; l < L; ++l) {
          if (training)
            gx[base + l] += k / n * (n * g[base + l] - sum_dy[c] - xhat[base + l] * sum_dy_x[c]);
          else
            gx[base + l] += k * g[base + l];
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: identity in eval mode; in training, zeroes each element
/// with probability `rate` and rescales survivors by 1/(1-rate).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  Tensor<T> mask = Tensor<T>::zeros(x.shape());
  for (auto& m : mask.values()) m = rng.uniform() >= rate ? keep_scale : T(0);
  return mul(x, mask);
}

// ---------------------------------------------------------------------------
// Convolution and pooling over (batch, channels, length)
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (len + 2 * pad < kernel) return 0;
  return (len + 2 * pad - kernel) / stride + 1;
}

template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t len, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t lout, T* col) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t j = 0; j < k; ++j) {
      T* row = col + (c * k + j) * lout;
      const T* src = x + c * len;
      for (std::size_t o = 0; o < lout; ++o) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * stride + j) - static_cast<std::ptrdiff_t>(pad);
        row[o] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) ? src[pos] : T(0);
      }
    }
}

template <typename T>
void col2im_add(const T* col, std::size_t cin, std::size_t len, std::size_t k, std::size_t stride,
                std::size_t pad, std::size_t lout, T* dx) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t j = 0; j < k; ++j) {
      const T* row = col + (c * k + j) * lout;
      T* dst = dx + c * len;
      for (std::size_t o = 0; o < lout; ++o) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * stride + j) - static_cast<std::ptrdiff_t>(pad);
        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) dst[pos] += row[o];
      }
    }
}

}  // namespace detail

/// x (B, Cin, L), weight (Cout, Cin, K), optional bias (Cout).
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  using detail::ConstMatMap;
  using detail::MatMap;
  if (x.ndim() != 3 || weight.ndim() != 3 || weight.dim(1) != x.dim(1) || stride == 0)
    throw ContractError(detail::op_shapes("conv1d", x.shape(), weight.shape()));
  const std::size_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const std::size_t Cout = weight.dim(0), K = weight.dim(2);
  if (bias && bias->numel() != Cout) throw ContractError(detail::op_shapes("conv1d", weight.shape(), bias->shape()));
  const std::size_t Lout = detail::conv_out_len(L, K, stride, padding);
  if (Lout == 0) throw ContractError(detail::op_shapes("conv1d", x.shape(), weight.shape()));
  const bool pointwise = K == 1 && stride == 1 && padding == 0;
  const std::size_t CK = Cin * K;
  std::vector<T> out(B * Cout * Lout);
  std::vector<T> col(pointwise ? 0 : CK * Lout);
  ConstMatMap<T> W(weight.values().data(), Cout, CK);
  for (std::size_t b = 0; b < B; ++b) {
    const T* xb = x.values().data() + b * Cin * L;
    const T* cols = xb;
    if (!pointwise) {
      detail::im2col(xb, Cin, L, K, stride, padding, Lout, col.data());
      cols = col.data();
    }
    MatMap<T> O(out.data() + b * Cout * Lout, Cout, Lout);
    O.noalias() = W * ConstMatMap<T>(cols, CK, Lout);
    if (bias)
      for (std::size_t c = 0; c < Cout; ++c) O.row(c).array() += (*bias)[c];
  }
  auto nx = x.node(), nw = weight.node();
  std::shared_ptr<detail::Node<T>> nb = bias ? bias->node() : nullptr;
  Tensor<T> result = bias ? detail::make_result<T>("conv1d", {B, Cout, Lout}, std::move(out), {&x, &weight, bias}, nullptr)
                          : detail::make_result<T>("conv1d", {B, Cout, Lout}, std::move(out), {&x, &weight}, nullptr);
  if (!result.requires_grad()) return result;
  result.node()->backward_fn = [nx, nw, nb, B, Cin, L, Cout, K, CK, Lout, stride, padding,
                                pointwise](detail::Node<T>& self) {
    std::vector<T> col(pointwise ? 0 : CK * Lout);
    std::vector<T> dcol(pointwise ? 0 : CK * Lout);
    ConstMatMap<T> W(nw->data.data(), Cout, CK);
    for (std::size_t b = 0; b < B; ++b) {
      ConstMatMap<T> G(self.grad.data() + b * Cout * Lout, Cout, Lout);
      const T* xb = nx->data.data() + b * Cin * L;
      if (nw->requires_grad) {
        const T* cols = xb;
        if (!pointwise) {
          detail::im2col(xb, Cin, L, K, stride, padding, Lout, col.data());
          cols = col.data();
        }
        MatMap<T>(nw->ensure_grad().data(), Cout, CK).noalias() += G * ConstMatMap<T>(cols, CK, Lout).transpose();
      }
      if (nb && nb->requires_grad) {
        auto& gb = nb->ensure_grad();
        for (std::size_t c = 0; c < Cout; ++c) gb[c] += G.row(c).sum();
      }
      if (nx->requires_grad) {
        T* dx = nx->ensure_grad().data() + b * Cin * L;
        if (pointwise) {
          MatMap<T>(dx, Cin, L).noalias() += W.transpose() * G;
        } else {
          MatMap<T>(dcol.data(), CK, Lout).noalias() = W.transpose() * G;
          detail::col2im_add(dcol.data(), Cin, L, K, stride, padding, Lout, dx);
        }
      }
    }
  };
  return result;
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  return conv1d(x, weight, &bias, stride, padding);
}

/// Max pooling over the last axis of (B, C, L); padded positions never win.
template <typename T>
Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding = 0) {
  if (x.ndim() != 3 || kernel == 0 || stride == 0 || padding >= kernel)
    throw ContractError("max_pool1d: invalid configuration for input " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const std::size_t Lout = detail::conv_out_len(L, kernel, stride, padding);
  if (Lout == 0) throw ContractError("max_pool1d: window larger than input " + shape_str(x.shape()));
  std::vector<T> out(B * C * Lout);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* src = x.values().data() + bc * L;
    for (std::size_t o = 0; o < Lout; ++o) {
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(o * stride) - static_cast<std::ptrdiff_t>(padding);
      T best = -std::numeric_limits<T>::infinity();
      std::size_t best_i = 0;
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
        if (p < 0 || p >= static_cast<std::ptrdiff_t>(L)) continue;
        if (src[p] > best) {
          best = src[p];
          best_i = static_cast<std::size_t>(p);
        }
      }
      out[bc * Lout + o] = best;
      arg[bc * Lout + o] = bc * L + best_i;
    }
  }
  auto nx = x.node();
  return detail::make_result<T>("max_pool1d", {B, C, Lout}, std::move(out), {&x},
                                [nx, arg = std::move(arg)](detail::Node<T>& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Lookup and recurrent cell
// ---------------------------------------------------------------------------

/// Rows of table (V, D) at the given indices -> (n, D).
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  require(table.ndim() == 2, "embedding: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<T> out(indices.size() * D);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= V)
      throw ContractError("embedding: index " + std::to_string(indices[i]) + " out of range for " +
                          shape_str(table.shape()));
    std::copy_n(table.values().begin() + indices[i] * D, D, out.begin() + i * D);
  }
  auto nt = table.node();
  return detail::make_result<T>("embedding", {indices.size(), D}, std::move(out), {&table},
                                [nt, indices, D](detail::Node<T>& self) {
    auto& gt = nt->ensure_grad();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t d = 0; d < D; ++d) gt[indices[i] * D + d] += self.grad[i * D + d];
  });
}

/// Fused LSTM cell. gates (B, 4H) in order input, forget, candidate, output;
/// c_prev (B, H). Returns (B, 2H) holding [h_new, c_new].
template <typename T>
Tensor<T> lstm_cell(const Tensor<T>& gates, const Tensor<T>& c_prev) {
  if (gates.ndim() != 2 || c_prev.ndim() != 2 || gates.dim(0) != c_prev.dim(0) ||
      gates.dim(1) != 4 * c_prev.dim(1))
    throw ContractError(detail::op_shapes("lstm_cell", gates.shape(), c_prev.shape()));
  const std::size_t B = gates.dim(0), H = c_prev.dim(1);
  std::vector<T> act(B * 4 * H), out(B * 2 * H), tanh_c(B * H);
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = gates.values().data() + b * 4 * H;
    T* a = act.data() + b * 4 * H;
    for (std::size_t j = 0; j < H; ++j) {
      a[j] = sigmoid_scalar(z[j]);
      a[H + j] = sigmoid_scalar(z[H + j]);
      a[2 * H + j] = std::tanh(z[2 * H + j]);
      a[3 * H + j] = sigmoid_scalar(z[3 * H + j]);
      const T c = a[H + j] * c_prev[b * H + j] + a[j] * a[2 * H + j];
      tanh_c[b * H + j] = std::tanh(c);
      out[b * 2 * H + j] = a[3 * H + j] * tanh_c[b * H + j];
      out[b * 2 * H + H + j] = c;
    }
  }
  auto ng = gates.node(), nc = c_prev.node();
  return detail::make_result<T>("lstm_cell", {B, 2 * H}, std::move(out), {&gates, &c_prev},
                                [ng, nc, B, H, act = std::move(act),
                                 tanh_c = std::move(tanh_c)](detail::Node<T>& self) {
    T* gz = ng->requires_grad ? ng->ensure_grad().data() : nullptr;
    T* gc = nc->requires_grad ? nc->ensure_grad().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      const T* a = act.data() + b * 4 * H;
      for (std::size_t j = 0; j < H; ++j) {
        const T dh = self.grad[b * 2 * H + j];
        const T tc = tanh_c[b * H + j];
        const T dc = self.grad[b * 2 * H + H + j] + dh * a[3 * H + j] * (T(1) - tc * tc);
        const T i = a[j], f = a[H + j], g = a[2 * H + j], o = a[3 * H + j];
        if (gz) {
          T* z = gz + b * 4 * H;
          z[j] += dc * g * i * (T(1) - i);
          z[H + j] += dc * nc->data[b * H + j] * f * (T(1) - f);
          z[2 * H + j] += dc * i * (T(1) - g * g);
          z[3 * H + j] += dh * tc * o * (T(1) - o);
        }
        if (gc) gc[b * H + j] += dc * f;
      }
    }
  });
}

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

/// One LSTM time step. x (B, I), state h/c (B, H), kernel (I, 4H),
/// recurrent kernel (H, 4H), bias (4H). recurrent_mask, when given, scales h
/// before the recurrent product (recurrent dropout).
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const LstmState<T>& state, const Tensor<T>& kernel,
                       const Tensor<T>& recurrent_kernel, const Tensor<T>& bias,
                       const Tensor<T>* recurrent_mask = nullptr) {
  const std::size_t H = state.h.dim(1);
  const Tensor<T> h_in = recurrent_mask ? mul(state.h, *recurrent_mask) : state.h;
  const Tensor<T> gates = add(add(matmul(x, kernel), matmul(h_in, recurrent_kernel)), bias);
  const Tensor<T> packed = lstm_cell(gates, state.c);
  return {slice(packed, 1, 0, H), slice(packed, 1, H, 2 * H)};
}

}  // namespace ecgxai::tensor
