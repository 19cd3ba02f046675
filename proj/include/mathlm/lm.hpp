#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mathlm/corpus.hpp"
#include "mathlm/rng.hpp"
#include "mathlm/tensor.hpp"

namespace mathlm {

/// Anything that assigns conditional token probabilities. Sequences end in
/// eos; position t is scored given positions < t (the first given only the
/// start marker).
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::string_view kind() const = 0;
  virtual const Vocab& vocab() const = 0;

  /// log p(x_t | x_<t) for every position, eos included.
  virtual std::vector<double> token_log_probs(const TokenSeq& seq) const = 0;

  virtual std::vector<std::vector<double>> batch_token_log_probs(
      std::span<const TokenSeq> batch) const;
};

/// Logits for a padded batch. Row of (sequence b, step t) is b*steps + t,
/// or t*batch + b when time_major.
template <typename T>
struct BatchLogits {
  Tensor<T> logits;
  std::vector<TokenId> targets;  // pad_id past each sequence's end
  std::size_t batch = 0;
  std::size_t steps = 0;
  bool time_major = false;

  std::size_t row(std::size_t b, std::size_t t) const {
    return time_major ? t * batch + b : b * steps + t;
  }
};

template <typename T>
class NeuralLm : public LanguageModel {
 public:
  using NamedParam = std::pair<std::string, Tensor<T>>;

  /// Parameter handles in a fixed order; handles share storage with the model.
  virtual std::vector<NamedParam> named_parameters() const = 0;

  virtual BatchLogits<T> forward_batch(std::span<const TokenSeq> batch, bool training,
                                       CounterRng& rng) const = 0;

  /// Longest sequence forward_batch accepts; 0 when unbounded.
  virtual std::size_t max_sequence_length() const { return 0; }

  /// Mean token cross-entropy over the batch, pad positions excluded.
  Tensor<T> loss(std::span<const TokenSeq> batch, bool training, CounterRng& rng) const;

  std::size_t parameter_count() const;
  void zero_grad() const;

  std::vector<double> token_log_probs(const TokenSeq& seq) const override;
  std::vector<std::vector<double>> batch_token_log_probs(
      std::span<const TokenSeq> batch) const override;
};

/// Input ids of a shifted, padded batch: step 0 is the start marker (eos),
/// step t>0 is token t-1. Targets are the tokens themselves.
struct ShiftedBatch {
  std::vector<TokenId> inputs;   // batch-major [batch * steps]
  std::vector<TokenId> targets;  // batch-major [batch * steps]
  std::size_t batch = 0;
  std::size_t steps = 0;
};
ShiftedBatch make_shifted_batch(std::span<const TokenSeq> batch, const Vocab& vocab);

}  // namespace mathlm
