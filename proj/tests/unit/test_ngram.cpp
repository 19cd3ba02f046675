#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mathlm/errors.hpp"
#include "mathlm/ngram.hpp"
#include "mathlm/train.hpp"
#include "oracles/ngram_oracle.hpp"

using namespace mathlm;

namespace {

struct Toy {
  Vocab vocab{std::vector<std::string>{"<pad>", "<eos>", "a", "b", "c"}};
  TokenId a = 2, b = 3, c = 4, eos = 1;
  std::vector<TokenSeq> corpus{TokenSeq{{2, 3, 1}}, TokenSeq{{2, 4, 1}}};
};

double prob_sum(const NGramModel& m, std::span<const TokenId> context) {
  double total = 0;
  for (std::size_t v = 0; v < m.vocab().size(); ++v) {
    total += m.prob(context, static_cast<TokenId>(v));
  }
  return total;
}

}  // namespace

TEST_CASE("hand counts on the two-sequence corpus") {
  Toy t;
  const auto m = train_ngram(t.corpus, t.vocab, 2, 0.0);
  const std::vector<TokenId> ab{t.a, t.b}, ac{t.a, t.c}, a{t.a};
  CHECK(m.count(ab) == 1);
  CHECK(m.count(ac) == 1);
  CHECK(m.count(a) == 2);
  CHECK(m.total_tokens() == 6);
  CHECK(m.prob(a, t.b) == 0.5);
  CHECK(ngram_prob(m, a, t.c) == 0.5);

  // Start marker -> a -> b -> eos: 1 * 0.5 * 1.
  CHECK(ngram_seq_logprob(m, t.corpus[0]) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  const auto lp = m.token_log_probs(t.corpus[0]);
  REQUIRE(lp.size() == 3);
  CHECK(lp[0] == 0.0);
  CHECK(lp[1] == std::log(0.5));
  CHECK(lp[2] == 0.0);
}

TEST_CASE("order 1 gives unigram frequencies") {
  Toy t;
  const auto m = train_ngram(t.corpus, t.vocab, 1, 0.0);
  const std::vector<TokenId> none;
  CHECK(m.prob(none, t.a) == 2.0 / 6.0);
  CHECK(m.prob(none, t.eos) == 2.0 / 6.0);
  CHECK(m.prob(none, t.b) == 1.0 / 6.0);
  // Context beyond the order is ignored.
  const std::vector<TokenId> ctx{t.a, t.b};
  CHECK(m.prob(ctx, t.b) == 1.0 / 6.0);
}

TEST_CASE("errors") {
  Toy t;
  CHECK_THROWS_AS(NGramModel(t.vocab, 0, 0.0), BadOrder);
  CHECK_THROWS_AS(NGramModel(t.vocab, 12, 0.0), BadOrder);
  CHECK_NOTHROW(NGramModel(t.vocab, 11, 0.0));
  CHECK_THROWS_AS(train_ngram({}, t.vocab, 2, 0.0), EmptyCorpus);
  const auto m = train_ngram(t.corpus, t.vocab, 2, 0.0);
  const std::vector<TokenId> a{t.a};
  CHECK_THROWS_AS(m.prob(a, 5), UnknownToken);
  CHECK_THROWS_AS(m.prob(a, -1), UnknownToken);
}

TEST_CASE("smoothing keeps unseen events positive") {
  Toy t;
  const auto m = train_ngram(t.corpus, t.vocab, 3, 0.5);
  const std::vector<TokenId> unseen{t.c, t.c};
  for (std::size_t v = 0; v < t.vocab.size(); ++v) {
    CHECK(m.prob(unseen, static_cast<TokenId>(v)) > 0.0);
  }
  CHECK(std::abs(prob_sum(m, unseen) - 1.0) < 1e-9);
}

TEST_CASE("memorized single sequence has log probability zero") {
  Toy t;
  const std::vector<TokenSeq> one{t.corpus[0]};
  const auto m = train_ngram(one, t.vocab, 3, 0.0);
  CHECK(ngram_seq_logprob(m, one[0]) == 0.0);
  CHECK(perplexity(m, one) == 1.0);
}

TEST_CASE("normalization over 1000 random contexts at every order") {
  const auto vocab = oracle::small_vocab(10);
  const auto corpus = oracle::random_corpus(vocab, 100, 12, 3);
  CounterRng rng(17);
  for (std::size_t order = 1; order <= kMaxNgramOrder; ++order) {
    for (double k : {0.0, 0.01}) {
      const auto m = train_ngram(corpus, vocab, order, k);
      double worst = 0;
      for (int trial = 0; trial < 1000; ++trial) {
        std::vector<TokenId> ctx(rng.below(order + 2));
        for (auto& id : ctx) id = static_cast<TokenId>(1 + rng.below(vocab.size() - 1));
        worst = std::max(worst, std::abs(prob_sum(m, ctx) - 1.0));
      }
      CAPTURE(order);
      CAPTURE(k);
      CHECK(worst < 1e-9);
    }
  }
}

TEST_CASE("log probabilities are never positive") {
  const auto vocab = oracle::small_vocab(6);
  const auto corpus = oracle::random_corpus(vocab, 60, 8, 4);
  const auto m = train_ngram(corpus, vocab, 4, 0.01);
  for (const auto& seq : oracle::random_corpus(vocab, 50, 8, 5)) {
    CHECK(ngram_seq_logprob(m, seq) <= 0.0);
  }
}

TEST_CASE("counts and MLE probabilities equal the brute-force oracle") {
  const auto vocab = oracle::small_vocab(10);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto corpus = oracle::random_corpus(vocab, 100, 8, 100 + seed);
    for (std::size_t order = 1; order <= 5; ++order) {
      const auto m = train_ngram(corpus, vocab, order, 0.0);
      for (std::size_t n = 1; n <= order; ++n) {
        const auto expect = oracle::window_counts(corpus, order, n, vocab.eos_id());
        const auto& got = m.table(n);
        CHECK(got.size() == expect.size());
        for (const auto& [gram, c] : expect) CHECK(m.count(gram) == c);
      }
      CounterRng rng(seed * 31 + order);
      for (int q = 0; q < 200; ++q) {
        std::vector<TokenId> ctx(rng.below(order + 1));
        for (auto& id : ctx) id = static_cast<TokenId>(1 + rng.below(vocab.size() - 1));
        const auto tok = static_cast<TokenId>(rng.below(vocab.size()));
        CHECK(m.prob(ctx, tok) ==
              oracle::mle_prob(corpus, order, ctx, tok, vocab.eos_id(), vocab.size()));
      }
    }
  }
}

TEST_CASE("higher order never raises training perplexity without smoothing") {
  const auto vocab = oracle::small_vocab(8);
  const auto corpus = oracle::random_corpus(vocab, 100, 10, 9);
  double previous = INFINITY;
  for (std::size_t order = 1; order <= kMaxNgramOrder; ++order) {
    const double ppl = perplexity(train_ngram(corpus, vocab, order, 0.0), corpus);
    CHECK(ppl <= previous + 1e-12);
    previous = ppl;
  }
}

TEST_CASE("unambiguous corpus reaches perplexity one") {
  const auto vocab = oracle::small_vocab(5);
  // "2 2" is followed by 3 once and by 4 once; three tokens of history tell
  // the two apart.
  const TokenSeq seq{{2, 2, 3, 2, 2, 4, 1}};
  const std::vector<TokenSeq> corpus{seq, seq};
  CHECK(perplexity(train_ngram(corpus, vocab, 3, 0.0), corpus) > 1.0);
  CHECK(perplexity(train_ngram(corpus, vocab, 4, 0.0), corpus) == 1.0);
}

TEST_CASE("add_count and weights") {
  Toy t;
  NGramModel m(t.vocab, 2, 1.0, {0.25, 0.75});
  CHECK(m.weights() == std::vector<double>{0.25, 0.75});
  const std::vector<TokenId> ab{t.a, t.b};
  m.add_count(ab, 3);
  CHECK(m.count(ab) == 3);
  const std::vector<TokenId> a{t.a};
  CHECK(m.context_count(a) == 3);
  const std::vector<TokenId> bad{t.a, 9};
  CHECK_THROWS_AS(m.add_count(bad, 1), BadId);
  // Unigram table is empty, so the order-1 term is uniform.
  const double V = 5;
  CHECK(m.prob(a, t.b) == doctest::Approx(0.25 * (1.0 / V) + 0.75 * (3 + 1) / (3 + V)));
}
