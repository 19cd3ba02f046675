#pragma once

// Causal transformer language model: token embedding plus sinusoidal
// positions, a linear lift to the model width, a stack of post-norm
// masked-attention layers and a full softmax output projection.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mathlm/lm.hpp"
#include "mathlm/ops.hpp"

namespace mathlm {

struct TmlmConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t head_dim = 16;
  std::size_t d_embed = 256;
  std::size_t d_model = 512;
  std::size_t d_ffn = 1024;
  std::size_t context_len = 256;
  double dropout = 0.1;
  std::size_t vocab_size = 108;

  /// 4 heads of 16, embed 256, hidden 512, feed-forward 1024, context 256.
  static TmlmConfig reference(std::size_t n_layers, std::size_t vocab_size = 108);

  std::size_t attention_width() const { return n_heads * head_dim; }
  void validate() const;  // throws Error
  bool operator==(const TmlmConfig&) const = default;
};

/// Exact trainable scalar count of a TmlmConfig.
std::size_t count_params(const TmlmConfig& config);

/// sin(p / 10000^(i/d)) for even i, cos(p / 10000^((i-1)/d)) for odd i.
/// Throws OutOfRange unless p < context_len and i < d_embed.
double positional_encoding(std::size_t p, std::size_t i, std::size_t d_embed,
                           std::size_t context_len);

template <typename T>
struct TmlmLayer {
  Tensor<T> w_q, b_q, w_k, b_k, w_v, b_v;  // [d_model x h*d_k], [h*d_k]
  Tensor<T> w_o, b_o;                      // [h*d_k x d_model], [d_model]
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> w_ffn1, b_ffn1;  // [d_model x d_ffn]
  Tensor<T> w_ffn2, b_ffn2;  // [d_ffn x d_model]
  Tensor<T> ln2_gain, ln2_bias;
};

/// Batch layout for the packed layer functions: rows s*seq_len + t.
struct PackedBatch {
  std::size_t n_seq = 1;
  std::size_t seq_len = 0;
};

/// Masked multi-head self-attention over X [n_seq*seq_len x d_model].
template <typename T>
Tensor<T> mmsa(const Tensor<T>& x, const TmlmLayer<T>& layer, const TmlmConfig& config,
               PackedBatch batch);

/// Y = LN(X + drop(MMSA(X))); Z = LN(Y + drop(FFN(Y))), FFN = relu hidden layer.
template <typename T>
Tensor<T> transformer_layer(const Tensor<T>& x, const TmlmLayer<T>& layer,
                            const TmlmConfig& config, PackedBatch batch, bool training,
                            CounterRng& rng);

template <typename T>
class TransformerLm final : public NeuralLm<T> {
 public:
  /// Xavier-uniform matrices, zero biases, unit gains.
  TransformerLm(TmlmConfig config, Vocab vocab, std::uint64_t seed);

  std::string_view kind() const override { return "tmlm"; }
  const Vocab& vocab() const override { return vocab_; }
  const TmlmConfig& config() const { return config_; }
  std::size_t max_sequence_length() const override { return config_.context_len; }

  std::vector<typename NeuralLm<T>::NamedParam> named_parameters() const override;

  BatchLogits<T> forward_batch(std::span<const TokenSeq> batch, bool training,
                               CounterRng& rng) const override;

  /// Logits [|seq| x V]; row t scores token t given tokens < t.
  /// Throws SequenceTooLong or BadId.
  Tensor<T> forward(const TokenSeq& seq, bool training, CounterRng& rng) const;

  const std::vector<TmlmLayer<T>>& layers() const { return layers_; }
  std::vector<TmlmLayer<T>>& layers() { return layers_; }

 private:
  TmlmConfig config_;
  Vocab vocab_;
  Tensor<T> embedding_;             // [V x d_embed]
  Tensor<T> w_in_, b_in_;           // [d_embed x d_model]
  std::vector<TmlmLayer<T>> layers_;
  Tensor<T> w_out_, b_out_;         // [d_model x V]
  std::vector<T> pe_table_;         // [context_len x d_embed]
};

}  // namespace mathlm
