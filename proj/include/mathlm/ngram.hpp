#pragma once

// Count-based N-gram language model.
//
// Every training sequence is prefixed with order-1 start markers (eos) and
// all n-grams of orders 1..N are counted. Probabilities:
//   k > 0:  P(w|h) = sum_n weight_n * (c(h_n w) + k) / (c(h_n) + k|V|)
//           with h_n the last n-1 context tokens (uniform weights by default);
//   k == 0: maximum likelihood c(h_N w) / c(h_N) at the longest context that
//           was observed in training, backing off one order at a time.

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "mathlm/lm.hpp"

namespace mathlm {

inline constexpr std::size_t kMaxNgramOrder = 11;

struct NgramKeyHash {
  std::size_t operator()(const std::vector<TokenId>& key) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (TokenId id : key) {
      h ^= static_cast<std::uint32_t>(id);
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

using NgramTable = std::unordered_map<std::vector<TokenId>, std::uint64_t, NgramKeyHash>;

class NGramModel final : public LanguageModel {
 public:
  /// Empty tables. `weights` (one per order, lowest first) default to uniform.
  /// Throws BadOrder unless 1 <= order <= 11.
  NGramModel(Vocab vocab, std::size_t order, double k, std::vector<double> weights = {});

  std::string_view kind() const override { return "ngram"; }
  const Vocab& vocab() const override { return vocab_; }
  std::size_t order() const { return order_; }
  double k() const { return k_; }
  const std::vector<double>& weights() const { return weights_; }

  void add_sequence(const TokenSeq& seq);
  /// Adds `count` occurrences of one n-gram (length 1..order).
  void add_count(std::span<const TokenId> ngram, std::uint64_t count);

  /// Occurrences of an n-gram of length 1..order.
  std::uint64_t count(std::span<const TokenId> ngram) const;
  /// Times a context of length 0..order-1 was followed by a token.
  std::uint64_t context_count(std::span<const TokenId> context) const;
  /// Table of n-grams of length n (1..order).
  const NgramTable& table(std::size_t n) const { return counts_.at(n - 1); }
  std::uint64_t total_tokens() const { return context_count({}); }

  /// Uses the last min(|context|, order-1) tokens, left-padded with start
  /// markers. Throws UnknownToken for ids outside the vocabulary.
  double prob(std::span<const TokenId> context, TokenId token) const;

  std::vector<double> token_log_probs(const TokenSeq& seq) const override;

 private:
  Vocab vocab_;
  std::size_t order_;
  double k_;
  std::vector<double> weights_;
  std::vector<NgramTable> counts_;    // [n-1] -> n-gram counts
  std::vector<NgramTable> contexts_;  // [n-1] -> counts of (n-1)-token contexts
};

/// Throws BadOrder, EmptyCorpus.
NGramModel train_ngram(std::span<const TokenSeq> corpus, const Vocab& vocab, std::size_t order,
                       double k = 0.01);

double ngram_prob(const NGramModel& model, std::span<const TokenId> context, TokenId token);

/// Sum of log probabilities over all tokens of `seq`, eos included.
double ngram_seq_logprob(const NGramModel& model, const TokenSeq& seq);

}  // namespace mathlm
