#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "avsr/tensor.hpp"

namespace avsr {

using TokenId = std::int32_t;

// Differentiable primitives. Every op validates shapes (ShapeError naming the
// offending shapes) and rejects non-finite outputs (NumericError).

/// y = x W + b over the last axis of x. x: [..., d_in], W: [d_in, d_out], b: [d_out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Normalizes the last axis to zero mean / unit variance, then gamma * x_hat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double c);
/// tanh(gate) * x for a scalar gate tensor.
Tensor tanh_gate(const Tensor& x, const Tensor& gate);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
/// Softmax over the last axis.
Tensor softmax(const Tensor& x);
/// Sum of all entries, as a scalar.
Tensor sum(const Tensor& x);
/// Rows of `table` ([V, d]) selected by ids, giving [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

/// Scaled dot-product attention on already-projected Q [T_q, d], K, V [T_kv, d],
/// with d split into n_heads contiguous column blocks. causal requires T_q == T_kv.
Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads, bool causal);

/// Projection weights for one attention sublayer. All W are [d, d], all b are [d].
struct AttentionWeights {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

/// Full multi-head attention: project, attend per head, concatenate, project out.
/// Self-attention when q_in and kv_in are the same tensor.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionWeights& weights,
                            std::size_t n_heads, bool causal);

struct CrossEntropyResult {
  Tensor loss;            ///< scalar mean NLL over counted positions
  std::size_t correct{};  ///< positions whose argmax equals the target
  std::size_t counted{};  ///< positions whose target != ignore_id
};

/// Mean negative log-likelihood of targets under softmax(logits) ([T, V]).
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const TokenId> targets, TokenId ignore_id);

}  // namespace avsr
