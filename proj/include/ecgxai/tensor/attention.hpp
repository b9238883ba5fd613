#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ecgxai/tensor/ops.hpp"

namespace ecgxai::tensor {

template <typename T>
struct AttentionParams {
  Tensor<T> query_kernel, query_bias;
  Tensor<T> key_kernel, key_bias;
  Tensor<T> value_kernel, value_bias;
  Tensor<T> output_kernel, output_bias;
};

template <typename T>
struct AttentionResult {
  Tensor<T> output;   // (B, T, D)
  Tensor<T> weights;  // (B, heads, T, T); rows are queries
};

/// Scaled dot-product self-attention with `n_heads` heads over x (B, T, D).
/// key_mask (B, T), when given, marks attendable key positions with 1;
/// masked keys receive exactly zero weight from every query.
template <typename T>
AttentionResult<T> multi_head_attention(const Tensor<T>& x, const AttentionParams<T>& p,
                                        std::size_t n_heads,
                                        const std::vector<std::uint8_t>* key_mask = nullptr) {
  require(x.ndim() == 3, "multi_head_attention: expected (batch, seq, dim), got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
  require(n_heads > 0 && D % n_heads == 0,
          "multi_head_attention: embedding dim " + std::to_string(D) + " not divisible by " +
              std::to_string(n_heads) + " heads");
  const std::size_t dh = D / n_heads;

  auto split_heads = [&](const Tensor<T>& t) {
    return permute(reshape(t, {B, L, n_heads, dh}), {0, 2, 1, 3});
  };
  const Tensor<T> q = split_heads(linear(x, p.query_kernel, p.query_bias));
  const Tensor<T> k = permute(reshape(linear(x, p.key_kernel, p.key_bias), {B, L, n_heads, dh}), {0, 2, 3, 1});
  const Tensor<T> v = split_heads(linear(x, p.value_kernel, p.value_bias));

  const Tensor<T> scores = scale(matmul(q, k), T(1) / std::sqrt(static_cast<T>(dh)));
  Tensor<T> weights = key_mask ? masked_softmax(scores, *key_mask) : softmax(scores);
  const Tensor<T> context = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {B, L, D});
  return {linear(context, p.output_kernel, p.output_bias), weights};
}

}  // namespace ecgxai::tensor
