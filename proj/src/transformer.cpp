#include "mathlm/transformer.hpp"

#include <cmath>
#include <string>

#include "mathlm/errors.hpp"
#include "mathlm/init.hpp"

namespace mathlm {

TmlmConfig TmlmConfig::reference(std::size_t n_layers, std::size_t vocab_size) {
  TmlmConfig c;
  c.n_layers = n_layers;
  c.vocab_size = vocab_size;
  return c;
}

void TmlmConfig::validate() const {
  if (n_heads == 0 || head_dim == 0 || d_embed == 0 || d_model == 0 || d_ffn == 0 ||
      context_len == 0 || vocab_size < 2) {
    throw Error("transformer config has a zero dimension");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw BadRate("transformer dropout outside [0, 1)");
}

std::size_t count_params(const TmlmConfig& c) {
  const std::size_t a = c.attention_width();
  const std::size_t per_layer = 3 * (c.d_model * a + a)      // Q, K, V projections
                                + a * c.d_model + c.d_model  // output projection
                                + 2 * 2 * c.d_model          // two layer norms
                                + c.d_model * c.d_ffn + c.d_ffn + c.d_ffn * c.d_model + c.d_model;
  return c.vocab_size * c.d_embed                 // embedding
         + c.d_embed * c.d_model + c.d_model      // lift to model width
         + c.n_layers * per_layer                 //
         + c.d_model * c.vocab_size + c.vocab_size;  // output projection
}

double positional_encoding(std::size_t p, std::size_t i, std::size_t d_embed,
                           std::size_t context_len) {
  if (p >= context_len || i >= d_embed) {
    throw OutOfRange("positional encoding (" + std::to_string(p) + ", " + std::to_string(i) +
                     ") outside [" + std::to_string(context_len) + " x " +
                     std::to_string(d_embed) + "]");
  }
  const std::size_t even = i - (i % 2);
  const double angle =
      static_cast<double>(p) / std::pow(10000.0, static_cast<double>(even) / static_cast<double>(d_embed));
  return (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

template <typename T>
Tensor<T> mmsa(const Tensor<T>& x, const TmlmLayer<T>& layer, const TmlmConfig& config,
               PackedBatch batch) {
  const auto q = linear(x, layer.w_q, layer.b_q);
  const auto k = linear(x, layer.w_k, layer.b_k);
  const auto v = linear(x, layer.w_v, layer.b_v);
  const std::size_t n = batch.n_seq, L = batch.seq_len, h = config.n_heads;
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(config.head_dim)));
  const auto scores = scale(batched_matmul(split_heads(q, n, L, h), split_heads(k, n, L, h),
                                           /*trans_b=*/true),
                            inv_sqrt_dk);
  const auto probs = softmax(causal_mask(scores), 2);
  const auto heads = batched_matmul(probs, split_heads(v, n, L, h));
  return linear(merge_heads(heads, n), layer.w_o, layer.b_o);
}

template <typename T>
Tensor<T> transformer_layer(const Tensor<T>& x, const TmlmLayer<T>& layer,
                            const TmlmConfig& config, PackedBatch batch, bool training,
                            CounterRng& rng) {
  const auto attn = dropout(mmsa(x, layer, config, batch), config.dropout, training, rng);
  const auto y = layer_norm(add(x, attn), layer.ln1_gain, layer.ln1_bias);
  const auto hidden = relu(linear(y, layer.w_ffn1, layer.b_ffn1));
  const auto ffn = dropout(linear(hidden, layer.w_ffn2, layer.b_ffn2), config.dropout, training, rng);
  return layer_norm(add(y, ffn), layer.ln2_gain, layer.ln2_bias);
}

template <typename T>
TransformerLm<T>::TransformerLm(TmlmConfig config, Vocab vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  if (vocab_.size() != config_.vocab_size) {
    throw Error("vocabulary has " + std::to_string(vocab_.size()) + " entries, config expects " +
                std::to_string(config_.vocab_size));
  }
  CounterRng rng(seed, /*stream=*/0x746d6c6dULL);
  const std::size_t a = config_.attention_width();
  const std::size_t dm = config_.d_model;
  embedding_ = xavier_uniform<T>(config_.vocab_size, config_.d_embed, rng);
  w_in_ = xavier_uniform<T>(config_.d_embed, dm, rng);
  b_in_ = zeros_param<T>(dm);
  layers_.reserve(config_.n_layers);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    TmlmLayer<T> L;
    L.w_q = xavier_uniform<T>(dm, a, rng);
    L.b_q = zeros_param<T>(a);
    L.w_k = xavier_uniform<T>(dm, a, rng);
    L.b_k = zeros_param<T>(a);
    L.w_v = xavier_uniform<T>(dm, a, rng);
    L.b_v = zeros_param<T>(a);
    L.w_o = xavier_uniform<T>(a, dm, rng);
    L.b_o = zeros_param<T>(dm);
    L.ln1_gain = ones_param<T>(dm);
    L.ln1_bias = zeros_param<T>(dm);
    L.w_ffn1 = xavier_uniform<T>(dm, config_.d_ffn, rng);
    L.b_ffn1 = zeros_param<T>(config_.d_ffn);
    L.w_ffn2 = xavier_uniform<T>(config_.d_ffn, dm, rng);
    L.b_ffn2 = zeros_param<T>(dm);
    L.ln2_gain = ones_param<T>(dm);
    L.ln2_bias = zeros_param<T>(dm);
    layers_.push_back(std::move(L));
  }
  w_out_ = xavier_uniform<T>(dm, config_.vocab_size, rng);
  b_out_ = zeros_param<T>(config_.vocab_size);

  pe_table_.resize(config_.context_len * config_.d_embed);
  for (std::size_t p = 0; p < config_.context_len; ++p) {
    for (std::size_t i = 0; i < config_.d_embed; ++i) {
      pe_table_[p * config_.d_embed + i] =
          static_cast<T>(positional_encoding(p, i, config_.d_embed, config_.context_len));
    }
  }
}

template <typename T>
std::vector<typename NeuralLm<T>::NamedParam> TransformerLm<T>::named_parameters() const {
  std::vector<typename NeuralLm<T>::NamedParam> out;
  out.emplace_back("embedding", embedding_);
  out.emplace_back("input.weight", w_in_);
  out.emplace_back("input.bias", b_in_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "attn.q.weight", L.w_q);
    out.emplace_back(p + "attn.q.bias", L.b_q);
    out.emplace_back(p + "attn.k.weight", L.w_k);
    out.emplace_back(p + "attn.k.bias", L.b_k);
    out.emplace_back(p + "attn.v.weight", L.w_v);
    out.emplace_back(p + "attn.v.bias", L.b_v);
    out.emplace_back(p + "attn.out.weight", L.w_o);
    out.emplace_back(p + "attn.out.bias", L.b_o);
    out.emplace_back(p + "ln1.gain", L.ln1_gain);
    out.emplace_back(p + "ln1.bias", L.ln1_bias);
    out.emplace_back(p + "ffn1.weight", L.w_ffn1);
    out.emplace_back(p + "ffn1.bias", L.b_ffn1);
    out.emplace_back(p + "ffn2.weight", L.w_ffn2);
    out.emplace_back(p + "ffn2.bias", L.b_ffn2);
    out.emplace_back(p + "ln2.gain", L.ln2_gain);
    out.emplace_back(p + "ln2.bias", L.ln2_bias);
  }
  out.emplace_back("output.weight", w_out_);
  out.emplace_back("output.bias", b_out_);
  return out;
}

template <typename T>
BatchLogits<T> TransformerLm<T>::forward_batch(std::span<const TokenSeq> batch, bool training,
                                               CounterRng& rng) const {
  for (const auto& s : batch) {
    if (s.size() > config_.context_len) {
      throw SequenceTooLong("sequence of " + std::to_string(s.size()) +
                            " tokens exceeds context length " +
                            std::to_string(config_.context_len));
    }
  }
  const auto shifted = make_shifted_batch(batch, vocab_);
  const std::size_t rows = shifted.batch * shifted.steps;
  const std::size_t de = config_.d_embed;

  std::vector<T> pe(rows * de);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = r % shifted.steps;
    std::copy_n(pe_table_.begin() + static_cast<std::ptrdiff_t>(t * de), de,
                pe.begin() + static_cast<std::ptrdiff_t>(r * de));
  }
  auto x = add(embedding_lookup(embedding_, shifted.inputs),
               Tensor<T>::from_data({rows, de}, std::move(pe)));
  x = linear(x, w_in_, b_in_);
  const PackedBatch packed{shifted.batch, shifted.steps};
  for (const auto& layer : layers_) {
    x = transformer_layer(x, layer, config_, packed, training, rng);
  }
  BatchLogits<T> out;
  out.logits = linear(x, w_out_, b_out_);
  out.targets = shifted.targets;
  out.batch = shifted.batch;
  out.steps = shifted.steps;
  out.time_major = false;
  return out;
}

template <typename T>
Tensor<T> TransformerLm<T>::forward(const TokenSeq& seq, bool training, CounterRng& rng) const {
  return forward_batch(std::span<const TokenSeq>(&seq, 1), training, rng).logits;
}

template Tensor<float> mmsa(const Tensor<float>&, const TmlmLayer<float>&, const TmlmConfig&, PackedBatch);
template Tensor<double> mmsa(const Tensor<double>&, const TmlmLayer<double>&, const TmlmConfig&, PackedBatch);
template Tensor<float> transformer_layer(const Tensor<float>&, const TmlmLayer<float>&,
                                         const TmlmConfig&, PackedBatch, bool, CounterRng&);
template Tensor<double> transformer_layer(const Tensor<double>&, const TmlmLayer<double>&,
                                          const TmlmConfig&, PackedBatch, bool, CounterRng&);
template class TransformerLm<float>;
template class TransformerLm<double>;

}  // namespace mathlm
