#pragma once

// Differentiable primitives. All matrices are row-major; "rows x cols" below
// refers to Tensor::rows()/cols().

#include <cstddef>
#include <span>
#include <vector>

#include "mathlm/corpus.hpp"
#include "mathlm/kernels.hpp"
#include "mathlm/rng.hpp"
#include "mathlm/tensor.hpp"

namespace mathlm {

/// When on, every op result is scanned and NonFinite is thrown on NaN/Inf.
/// Defaults to on in builds without NDEBUG.
void set_debug_checks(bool on);
bool debug_checks();

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T without materializing the transpose.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
/// x[r, c] + bias[c].
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
/// add_bias(matmul(x, w), bias).
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Sets cells above the diagonal of each trailing square matrix to -inf.
template <typename T> Tensor<T> causal_mask(const Tensor<T>& scores);

/// Normalizes each slice along the last axis, then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// Row gather from a [V x d] table. Throws BadId.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const TokenId> ids);

/// Inverted dropout: survivors scaled by 1/(1-rate). Identity when !training
/// or rate == 0. Throws BadRate unless 0 <= rate < 1.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, CounterRng& rng);

/// Mean of -log softmax(logits)[t, target_t] over positions whose target is
/// not `ignore_id`. Throws AllIgnored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets,
                        TokenId ignore_id);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

/// [B x m x k] times [B x k x n] (or [B x n x k] transposed when trans_b).
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false);

/// [n_seq*seq_len x h*d] with sequence-major rows to [n_seq*h x seq_len x d].
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t n_seq, std::size_t seq_len,
                      std::size_t n_heads);

/// Inverse of split_heads.
template <typename T> Tensor<T> merge_heads(const Tensor<T>& x, std::size_t n_seq);

/// softmax(Q K^T / sqrt(d_k) [+ causal mask]) V for a single head.
template <typename T>
Tensor<T> sdpa(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal);

/// Row-wise log-softmax in double precision, no graph.
template <typename T>
std::vector<double> log_softmax_rows(std::span<const T> logits, std::size_t rows, std::size_t cols);

}  // namespace mathlm
