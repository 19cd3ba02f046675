#include "mathlm/ngram.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mathlm/errors.hpp"

namespace mathlm {

NGramModel::NGramModel(Vocab vocab, std::size_t order, double k, std::vector<double> weights)
    : vocab_(std::move(vocab)), order_(order), k_(k), weights_(std::move(weights)) {
  if (order_ < 1 || order_ > kMaxNgramOrder) {
    throw BadOrder("n-gram order must be in 1.." + std::to_string(kMaxNgramOrder) + ", got " +
                   std::to_string(order_));
  }
  if (!(k_ >= 0.0)) throw Error("smoothing constant must be non-negative");
  if (weights_.empty()) weights_.assign(order_, 1.0 / static_cast<double>(order_));
  if (weights_.size() != order_) throw Error("need one interpolation weight per order");
  const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (!(total > 0.0)) throw Error("interpolation weights must have positive sum");
  for (auto& w : weights_) {
    if (w < 0.0) throw Error("interpolation weights must be non-negative");
    w /= total;
  }
  counts_.resize(order_);
  contexts_.resize(order_);
}

void NGramModel::add_count(std::span<const TokenId> ngram, std::uint64_t count) {
  const std::size_t n = ngram.size();
  if (n < 1 || n > order_) throw BadOrder("n-gram length outside model order");
  for (TokenId id : ngram) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
      throw BadId("n-gram id " + std::to_string(id) + " outside vocabulary");
    }
  }
  counts_[n - 1][std::vector<TokenId>(ngram.begin(), ngram.end())] += count;
  contexts_[n - 1][std::vector<TokenId>(ngram.begin(), ngram.end() - 1)] += count;
}

void NGramModel::add_sequence(const TokenSeq& seq) {
  std::vector<TokenId> padded(order_ - 1, vocab_.eos_id());
  padded.insert(padded.end(), seq.begin(), seq.end());
  for (std::size_t t = order_ - 1; t < padded.size(); ++t) {
    for (std::size_t n = 1; n <= order_; ++n) {
      add_count(std::span<const TokenId>(padded).subspan(t + 1 - n, n), 1);
    }
  }
}

std::uint64_t NGramModel::count(std::span<const TokenId> ngram) const {
  if (ngram.empty() || ngram.size() > order_) return 0;
  const auto& table = counts_[ngram.size() - 1];
  auto it = table.find(std::vector<TokenId>(ngram.begin(), ngram.end()));
  return it == table.end() ? 0 : it->second;
}

std::uint64_t NGramModel::context_count(std::span<const TokenId> context) const {
  if (context.size() >= order_) return 0;
  const auto& table = contexts_[context.size()];
  auto it = table.find(std::vector<TokenId>(context.begin(), context.end()));
  return it == table.end() ? 0 : it->second;
}

double NGramModel::prob(std::span<const TokenId> context, TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_.size()) {
    throw UnknownToken(context.size(), "#" + std::to_string(token));
  }
  // Full (order-1)-token history, start-marker padded on the left.
  const std::size_t need = order_ - 1;
  std::vector<TokenId> gram(need, vocab_.eos_id());
  const std::size_t take = std::min(need, context.size());
  std::copy(context.end() - static_cast<std::ptrdiff_t>(take), context.end(),
            gram.end() - static_cast<std::ptrdiff_t>(take));
  gram.push_back(token);
  const std::span<const TokenId> full(gram);

  const double V = static_cast<double>(vocab_.size());
  if (k_ > 0.0) {
    double p = 0.0;
    for (std::size_t n = 1; n <= order_; ++n) {
      const auto g = full.subspan(full.size() - n);
      const double c = static_cast<double>(count(g));
      const double ch = static_cast<double>(context_count(g.first(n - 1)));
      p += weights_[n - 1] * (c + k_) / (ch + k_ * V);
    }
    return p;
  }
  for (std::size_t n = order_; n >= 1; --n) {
    const auto g = full.subspan(full.size() - n);
    const auto ch = context_count(g.first(n - 1));
    if (ch > 0) return static_cast<double>(count(g)) / static_cast<double>(ch);
  }
  return 1.0 / V;  // nothing observed at all
}

std::vector<double> NGramModel::token_log_probs(const TokenSeq& seq) const {
  std::vector<TokenId> padded(order_ - 1, vocab_.eos_id());
  padded.insert(padded.end(), seq.begin(), seq.end());
  std::vector<double> out;
  out.reserve(seq.size());
  const std::span<const TokenId> all(padded);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    out.push_back(std::log(prob(all.subspan(t, order_ - 1), seq[t])));
  }
  return out;
}

NGramModel train_ngram(std::span<const TokenSeq> corpus, const Vocab& vocab, std::size_t order,
                       double k) {
  NGramModel model(vocab, order, k);
  if (corpus.empty()) throw EmptyCorpus();
  for (const auto& seq : corpus) model.add_sequence(seq);
  return model;
}

double ngram_prob(const NGramModel& model, std::span<const TokenId> context, TokenId token) {
  return model.prob(context, token);
}

double ngram_seq_logprob(const NGramModel& model, const TokenSeq& seq) {
  const auto lp = model.token_log_probs(seq);
  return std::accumulate(lp.begin(), lp.end(), 0.0);
}

}  // namespace mathlm
