#pragma once

// Stacked GRU language model baseline.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mathlm/lm.hpp"
#include "mathlm/ops.hpp"

namespace mathlm {

struct GruConfig {
  std::size_t n_layers = 2;
  std::size_t d_embed = 256;
  std::size_t d_hidden = 512;
  std::size_t vocab_size = 108;
  double dropout = 0.1;

  /// Embedding 256 and hidden 512, the transformer's widths.
  static GruConfig reference(std::size_t n_layers, std::size_t vocab_size = 108);

  std::size_t input_width(std::size_t layer) const { return layer == 0 ? d_embed : d_hidden; }
  void validate() const;
  bool operator==(const GruConfig&) const = default;
};

std::size_t count_params(const GruConfig& config);

/// Gate blocks are laid out [update | reset | candidate] along columns.
template <typename T>
struct GruCellParams {
  Tensor<T> w;      // [d_in x 3h]
  Tensor<T> u;      // [h x 3h]
  Tensor<T> b_in;   // [3h]
  Tensor<T> b_hid;  // [3h]
};

/// One step for a batch of rows: x [B x d_in], h [B x h] -> [B x h].
///   z  = sigmoid(W_z x + U_z h + b_z)
///   r  = sigmoid(W_r x + U_r h + b_r)
///   h~ = tanh(W_h x + U_h (r * h) + b_h)
///   h' = (1 - z) * h + z * h~
template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruCellParams<T>& params);

template <typename T>
class GruLm final : public NeuralLm<T> {
 public:
  GruLm(GruConfig config, Vocab vocab, std::uint64_t seed);

  std::string_view kind() const override { return "gru"; }
  const Vocab& vocab() const override { return vocab_; }
  const GruConfig& config() const { return config_; }

  std::vector<typename NeuralLm<T>::NamedParam> named_parameters() const override;

  /// Rows are time-major.
  BatchLogits<T> forward_batch(std::span<const TokenSeq> batch, bool training,
                               CounterRng& rng) const override;

  /// Logits [|seq| x V]; row t scores token t given tokens < t.
  Tensor<T> forward(const TokenSeq& seq, bool training, CounterRng& rng) const;

 private:
  GruConfig config_;
  Vocab vocab_;
  Tensor<T> embedding_;
  std::vector<GruCellParams<T>> cells_;
  Tensor<T> w_out_, b_out_;
};

}  // namespace mathlm
