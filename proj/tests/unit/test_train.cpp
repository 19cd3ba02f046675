#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mathlm/errors.hpp"
#include "mathlm/gru.hpp"
#include "mathlm/train.hpp"
#include "mathlm/transformer.hpp"
#include "oracles/model_checks.hpp"

using namespace mathlm;

namespace {

/// Assigns each token a fixed probability chosen by the test.
class FixedLm final : public LanguageModel {
 public:
  FixedLm(Vocab vocab, std::function<double(TokenId)> p) : vocab_(std::move(vocab)), p_(std::move(p)) {}
  std::string_view kind() const override { return "fixed"; }
  const Vocab& vocab() const override { return vocab_; }
  std::vector<double> token_log_probs(const TokenSeq& seq) const override {
    std::vector<double> out;
    for (TokenId id : seq) out.push_back(std::log(p_(id)));
    return out;
  }

 private:
  Vocab vocab_;
  std::function<double(TokenId)> p_;
};

TmlmConfig mini_tmlm(std::size_t vocab_size) {
  TmlmConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.head_dim = 4;
  c.d_embed = 8;
  c.d_model = 16;
  c.d_ffn = 32;
  c.context_len = 16;
  c.dropout = 0.1;
  c.vocab_size = vocab_size;
  return c;
}

std::vector<TokenSeq> toy_corpus(const Vocab& vocab, std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(oracle::random_sequence(vocab, 2 + rng.below(7), rng));
  return out;
}

Tensor<double> param(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>::from_data({n}, std::move(v), true);
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  CHECK(c.learning_rate == 1e-5);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.eps == 1e-8);
  CHECK(c.weight_decay == 0.01);
}

TEST_CASE("adamw closed forms") {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.5;

  SUBCASE("zero gradient decays only") {
    std::vector<Tensor<double>> p{param({1.0, -2.0, 3.0})};
    auto s = AdamWState<double>::for_params(p);
    const std::vector<double> g(3, 0.0);
    const std::vector<std::span<const double>> grads{g};
    adamw_step<double>(p, grads, s, c);
    CHECK(p[0].data()[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.5)).epsilon(1e-15));
    CHECK(p[0].data()[1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.5)).epsilon(1e-15));
    CHECK(s.step == 1);
  }
  SUBCASE("zero learning rate") {
    c.learning_rate = 0.0;
    std::vector<Tensor<double>> p{param({1.0, -2.0})};
    auto s = AdamWState<double>::for_params(p);
    const std::vector<double> g{0.3, -4.0};
    const std::vector<std::span<const double>> grads{g};
    adamw_step<double>(p, grads, s, c);
    CHECK(p[0].data()[0] == 1.0);
    CHECK(p[0].data()[1] == -2.0);
  }
  SUBCASE("no decay and no gradient is the identity") {
    c.weight_decay = 0.0;
    std::vector<Tensor<double>> p{param({0.25, 7.0})};
    auto s = AdamWState<double>::for_params(p);
    for (int i = 0; i < 3; ++i) adamw_step<double>(p, s, c);
    CHECK(p[0].data()[0] == 0.25);
    CHECK(p[0].data()[1] == 7.0);
  }
  SUBCASE("first steps with a constant gradient move by lr * sign(g)") {
    c.weight_decay = 0.0;
    std::vector<Tensor<double>> p{param({1.0, 1.0, 1.0})};
    auto s = AdamWState<double>::for_params(p);
    const std::vector<double> g{2.0, -0.5, 1e-3};
    const std::vector<std::span<const double>> grads{g};
    adamw_step<double>(p, grads, s, c);
    CHECK(p[0].data()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-8));
    CHECK(p[0].data()[1] == doctest::Approx(1.0 + 0.1).epsilon(1e-8));
    CHECK(p[0].data()[2] == doctest::Approx(1.0 - 0.1 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
    // Bias correction keeps m_hat = g and v_hat = g^2 on the second step too.
    adamw_step<double>(p, grads, s, c);
    CHECK(p[0].data()[0] == doctest::Approx(1.0 - 0.2).epsilon(1e-8));
    CHECK(s.m[0][0] == doctest::Approx(2.0 * (1 - 0.9 * 0.9)).epsilon(1e-12));
    CHECK(s.v[0][0] == doctest::Approx(4.0 * (1 - 0.999 * 0.999)).epsilon(1e-12));
  }
  SUBCASE("errors") {
    std::vector<Tensor<double>> p{param({1.0, 2.0})};
    AdamWState<double> empty;
    CHECK_FALSE(empty.initialized());
    CHECK_THROWS_AS(adamw_step<double>(p, empty, c), UninitializedState);
    auto s = AdamWState<double>::for_params(p);
    const std::vector<double> g{1.0};
    const std::vector<std::span<const double>> grads{g};
    CHECK_THROWS_AS(adamw_step<double>(p, grads, s, c), ShapeMismatch);
  }
}

TEST_CASE("clip_grad_norm") {
  std::vector<Tensor<double>> p{param({0.0, 0.0}), param({0.0})};
  p[0].mutable_grad()[0] = 3.0;
  p[0].mutable_grad()[1] = 0.0;
  p[1].mutable_grad()[0] = 4.0;
  CHECK(clip_grad_norm<double>(p, 10.0) == 5.0);
  CHECK(p[1].grad()[0] == 4.0);
  CHECK(clip_grad_norm<double>(p, 1.0) == 5.0);
  CHECK(p[0].grad()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(p[1].grad()[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("perplexity identities") {
  const auto vocab = Vocab::crohme();
  const std::vector<TokenSeq> corpus{TokenSeq{{5, 6, 7, 1}}, TokenSeq{{9, 1}}};
  CHECK(std::abs(perplexity(FixedLm(vocab, [](TokenId) { return 1.0 / 108; }), corpus) - 108.0) < 1e-9);
  CHECK(perplexity(FixedLm(vocab, [](TokenId) { return 1.0; }), corpus) == 1.0);

  const std::vector<std::vector<double>> hand{{std::log(0.5), std::log(0.25)}};
  CHECK(std::abs(perplexity_from_log_probs(hand) - 2 * std::sqrt(2.0)) < 1e-9);
  CHECK_THROWS_AS(perplexity(FixedLm(vocab, [](TokenId) { return 1.0; }), {}), EmptyCorpus);
}

TEST_CASE("perplexity is order invariant and at least one") {
  const auto vocab = Vocab({"<pad>", "<eos>", "a", "b", "c"});
  const TransformerLm<double> model(mini_tmlm(5), vocab, 2);
  auto corpus = toy_corpus(vocab, 40, 3);
  const double a = perplexity(model, corpus);
  std::reverse(corpus.begin(), corpus.end());
  std::rotate(corpus.begin(), corpus.begin() + 7, corpus.end());
  CHECK(perplexity(model, corpus) == doctest::Approx(a).epsilon(1e-12));
  CHECK(a >= 1.0);
}

TEST_CASE("pad positions contribute no gradient") {
  const auto vocab = Vocab({"<pad>", "<eos>", "a", "b", "c", "d"});
  auto c = mini_tmlm(6);
  c.dropout = 0.0;
  const TransformerLm<double> tm(c, vocab, 4);
  GruConfig gc;
  gc.n_layers = 2;
  gc.d_embed = 4;
  gc.d_hidden = 5;
  gc.vocab_size = 6;
  gc.dropout = 0.0;
  const GruLm<double> gru(gc, vocab, 4);
  const std::vector<TokenSeq> batch{TokenSeq{{2, 3, 1}}, TokenSeq{{4, 5, 2, 3, 3, 1}},
                                    TokenSeq{{5, 1}}};
  std::size_t total = 0;
  for (const auto& s : batch) total += s.size();

  for (const NeuralLm<double>* model : {static_cast<const NeuralLm<double>*>(&tm),
                                        static_cast<const NeuralLm<double>*>(&gru)}) {
    CounterRng rng(0);
    model->zero_grad();
    model->loss(batch, false, rng).backward();
    std::vector<std::vector<double>> joint;
    for (const auto& [name, p] : model->named_parameters()) {
      joint.emplace_back(p.grad().begin(), p.grad().end());
    }
    // Token-weighted sum of single-sequence gradients.
    std::vector<std::vector<double>> parts;
    for (const auto& [name, p] : model->named_parameters()) parts.emplace_back(p.size(), 0.0);
    for (const auto& s : batch) {
      model->zero_grad();
      model->loss(std::vector<TokenSeq>{s}, false, rng).backward();
      std::size_t i = 0;
      for (const auto& [name, p] : model->named_parameters()) {
        if (p.has_grad()) {
          for (std::size_t j = 0; j < p.size(); ++j) {
            parts[i][j] += p.grad()[j] * static_cast<double>(s.size()) / static_cast<double>(total);
          }
        }
        ++i;
      }
    }
    double worst = 0;
    for (std::size_t i = 0; i < joint.size(); ++i) {
      for (std::size_t j = 0; j < joint[i].size(); ++j) {
        worst = std::max(worst, std::abs(joint[i][j] - parts[i][j]));
      }
    }
    CAPTURE(model->kind());
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("training") {
  const auto vocab = Vocab({"<pad>", "<eos>", "a", "b", "c", "d", "e", "f"});
  CorpusSplit split;
  split.train = toy_corpus(vocab, 8, 5);
  split.validation = toy_corpus(vocab, 4, 6);
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.batch_size = 4;
  tc.max_steps = 300;
  tc.eval_interval = 100;
  tc.seed = 7;

  SUBCASE("first loss is near ln V and the model memorizes") {
    auto mc = mini_tmlm(8);
    mc.dropout = 0.0;
    TransformerLm<float> model(mc, vocab, 1);
    const auto h = train(model, split, tc);
    CHECK(std::abs(h.step_losses.front() - std::log(8.0)) < 0.15 * std::log(8.0));
    CHECK(h.step_losses.size() == 300);
    REQUIRE(h.records.size() == 3);
    CHECK(h.records[2].step == 300);
    // Distinct sequences share prefixes, so the floor sits above one.
    CHECK(perplexity(model, split.train) < 2.0);
  }
  SUBCASE("identical seed gives an identical trajectory") {
    tc.max_steps = 20;
    tc.sort_window = 2;
    TransformerLm<float> a(mini_tmlm(8), vocab, 1), b(mini_tmlm(8), vocab, 1);
    std::ostringstream la, lb;
    const auto ha = train(a, split, tc, &la);
    const auto hb = train(b, split, tc, &lb);
    CHECK(ha.step_losses == hb.step_losses);
    CHECK(la.str() == lb.str());
    tc.seed = 8;
    TransformerLm<float> c(mini_tmlm(8), vocab, 1);
    CHECK(train(c, split, tc).step_losses != ha.step_losses);
  }
  SUBCASE("records per epoch and the log format") {
    tc.max_steps = 0;
    tc.epochs = 3;
    tc.eval_interval = 0;
    GruConfig gc;
    gc.n_layers = 1;
    gc.d_embed = 4;
    gc.d_hidden = 6;
    gc.vocab_size = 8;
    GruLm<float> model(gc, vocab, 2);
    std::ostringstream log;
    const auto h = train(model, split, tc, &log);
    CHECK(h.step_losses.size() == 6);
    REQUIRE(h.records.size() == 3);
    CHECK(h.records[0].step == 2);
    std::istringstream in(log.str());
    std::size_t step;
    double loss, ppl;
    in >> step >> loss >> ppl;
    CHECK(step == 2);
    CHECK(loss == doctest::Approx(h.records[0].train_loss).epsilon(1e-5));
    CHECK(ppl == doctest::Approx(h.records[0].val_ppl).epsilon(1e-5));
  }
  SUBCASE("errors") {
    auto small = mini_tmlm(8);
    small.context_len = 3;
    TransformerLm<float> model(small, vocab, 1);
    CHECK_THROWS_AS(train(model, split, tc), SequenceTooLong);
    TransformerLm<float> ok(mini_tmlm(8), vocab, 1);
    CHECK_THROWS_AS(train(ok, CorpusSplit{}, tc), EmptyCorpus);
  }
}
