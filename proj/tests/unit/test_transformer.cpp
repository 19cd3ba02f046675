#include <doctest.h>

#include <cmath>
#include <set>

#include "mathlm/errors.hpp"
#include "mathlm/transformer.hpp"
#include "oracles/model_checks.hpp"

using namespace mathlm;
using Td = Tensor<double>;

namespace {

TmlmConfig mini(std::size_t layers, std::size_t vocab_size, std::size_t heads = 2) {
  TmlmConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.head_dim = 4;
  c.d_embed = 6;
  c.d_model = 8;
  c.d_ffn = 12;
  c.context_len = 32;
  c.dropout = 0.0;
  c.vocab_size = vocab_size;
  return c;
}

Vocab tiny_vocab() { return Vocab({"<pad>", "<eos>", "a", "b", "c", "d", "e"}); }

Td random_tensor(Shape shape, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = 2 * rng.uniform() - 1;
  return Td::from_data(std::move(shape), std::move(v), true);
}

std::vector<double> values(const Td& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("positional encoding examples") {
  for (std::size_t i = 0; i < 256; i += 2) CHECK(positional_encoding(0, i, 256, 256) == 0.0);
  for (std::size_t i = 1; i < 256; i += 2) CHECK(positional_encoding(0, i, 256, 256) == 1.0);
  CHECK(positional_encoding(1, 0, 256, 256) == doctest::Approx(0.841471).epsilon(1e-6));
  // Odd dimensions share the frequency of the even one below.
  CHECK(positional_encoding(7, 5, 256, 256) ==
        doctest::Approx(std::cos(7.0 / std::pow(10000.0, 4.0 / 256.0))).epsilon(1e-15));
  CHECK_THROWS_AS(positional_encoding(256, 0, 256, 256), OutOfRange);
  CHECK_THROWS_AS(positional_encoding(0, 256, 256, 256), OutOfRange);
}

TEST_CASE("positional encoding bounds and distinct rows") {
  std::set<std::vector<double>> rows;
  for (std::size_t p = 0; p < 256; ++p) {
    std::vector<double> row(256);
    for (std::size_t i = 0; i < 256; ++i) {
      row[i] = positional_encoding(p, i, 256, 256);
      CHECK(std::abs(row[i]) <= 1.0);
    }
    rows.insert(row);
  }
  CHECK(rows.size() == 256);
}

TEST_CASE("parameter counts") {
  // Hand sum of one layer at reference widths: Q/K/V, output, two norms, FFN.
  const std::size_t layer = 3 * (512 * 64 + 64) + (64 * 512 + 512) + 2 * 2 * 512 +
                            (512 * 1024 + 1024) + (1024 * 512 + 512);
  CHECK(layer == 1183936);
  const std::size_t base = 108 * 256 + (256 * 512 + 512) + (512 * 108 + 108);
  CHECK(count_params(TmlmConfig::reference(0)) == base);
  CHECK(count_params(TmlmConfig::reference(2)) == base + 2 * layer);
  CHECK(count_params(TmlmConfig::reference(2)) == 2582508);
  CHECK(count_params(TmlmConfig::reference(5)) == 6134316);
  CHECK(count_params(TmlmConfig::reference(8)) == 9686124);

  const TransformerLm<float> model(mini(2, 7), tiny_vocab(), 1);
  CHECK(model.parameter_count() == count_params(mini(2, 7)));
}

TEST_CASE("reference preset") {
  const auto c = TmlmConfig::reference(5);
  CHECK(c.n_layers == 5);
  CHECK(c.n_heads == 4);
  CHECK(c.head_dim == 16);
  CHECK(c.attention_width() == 64);
  CHECK(c.d_embed == 256);
  CHECK(c.d_model == 512);
  CHECK(c.d_ffn == 1024);
  CHECK(c.context_len == 256);
  CHECK(c.dropout == 0.1);
  CHECK(c.vocab_size == 108);
}

TEST_CASE("sdpa examples") {
  const auto v = random_tensor({5, 3}, 2);
  // One position: output is V's only row.
  const auto one = sdpa(random_tensor({1, 4}, 1), random_tensor({1, 4}, 3), slice_rows(v, 0, 1), true);
  CHECK(values(one) == values(slice_rows(v, 0, 1)));

  const auto q0 = Td::zeros({5, 4});
  const auto out = sdpa(q0, random_tensor({5, 4}, 4), v, true);
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t s = 0; s <= t; ++s) mean += v.at(s, c);
      mean /= static_cast<double>(t + 1);
      CHECK(out.at(t, c) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
  const auto any = sdpa(random_tensor({5, 4}, 5), random_tensor({5, 4}, 6), v, true);
  for (std::size_t c = 0; c < 3; ++c) CHECK(any.at(0, c) == doctest::Approx(v.at(0, c)).epsilon(1e-12));
  CHECK_THROWS_AS(sdpa(random_tensor({5, 4}, 1), random_tensor({5, 3}, 1), v, true), ShapeMismatch);
}

TEST_CASE("attention weights") {
  const auto scores = random_tensor({3, 6, 6}, 8);
  const auto w = softmax(causal_mask(scores), 2);
  for (std::size_t m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < 6; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        const double x = w.data()[m * 36 + i * 6 + j];
        CHECK(x >= 0.0);
        if (j > i) CHECK(x == 0.0);
        total += x;
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("mmsa") {
  const auto vocab = tiny_vocab();
  SUBCASE("one head is projected sdpa") {
    const TransformerLm<double> model(mini(1, 7, 1), vocab, 3);
    const auto& L = model.layers()[0];
    const auto x = random_tensor({5, 8}, 9);
    const auto got = mmsa(x, L, model.config(), PackedBatch{1, 5});
    const auto expect = linear(sdpa(linear(x, L.w_q, L.b_q), linear(x, L.w_k, L.b_k),
                                    linear(x, L.w_v, L.b_v), true),
                               L.w_o, L.b_o);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
    }
  }
  SUBCASE("heads are independent sdpa blocks") {
    const TransformerLm<double> model(mini(1, 7, 2), vocab, 3);
    const auto& L = model.layers()[0];
    const auto x = random_tensor({4, 8}, 10);
    const auto q = linear(x, L.w_q, L.b_q), k = linear(x, L.w_k, L.b_k), v = linear(x, L.w_v, L.b_v);
    std::vector<Td> heads;
    for (std::size_t h = 0; h < 2; ++h) {
      heads.push_back(sdpa(slice_cols(q, h * 4, h * 4 + 4), slice_cols(k, h * 4, h * 4 + 4),
                           slice_cols(v, h * 4, h * 4 + 4), true));
    }
    const auto expect = linear(concat_cols<double>(heads), L.w_o, L.b_o);
    const auto got = mmsa(x, L, model.config(), PackedBatch{1, 4});
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
    }
  }
  SUBCASE("zero output projection") {
    TransformerLm<double> model(mini(1, 7), vocab, 3);
    auto& L = model.layers()[0];
    std::fill(L.w_o.mutable_data().begin(), L.w_o.mutable_data().end(), 0.0);
    const auto got = mmsa(random_tensor({4, 8}, 11), L, model.config(), PackedBatch{1, 4});
    for (double v : got.data()) CHECK(v == 0.0);
  }
  SUBCASE("packed sequences do not see each other") {
    const TransformerLm<double> model(mini(1, 7), vocab, 3);
    const auto& L = model.layers()[0];
    const auto x = random_tensor({6, 8}, 12);
    const auto both = mmsa(x, L, model.config(), PackedBatch{2, 3});
    const auto second = mmsa(slice_rows(x, 3, 6), L, model.config(), PackedBatch{1, 3});
    for (std::size_t i = 0; i < second.size(); ++i) {
      CHECK(both.data()[24 + i] == doctest::Approx(second.data()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("transformer_layer") {
  TransformerLm<double> model(mini(1, 7), tiny_vocab(), 4);
  auto& L = model.layers()[0];
  const auto x = random_tensor({5, 8}, 13);
  CounterRng rng(1);
  CHECK(transformer_layer(x, L, model.config(), PackedBatch{1, 5}, false, rng).shape() == x.shape());

  // Row t ignores rows after t.
  auto x2 = Td::from_data({5, 8}, values(x));
  for (std::size_t c = 0; c < 8; ++c) x2.mutable_data()[4 * 8 + c] += 0.5;
  const auto y1 = transformer_layer(x, L, model.config(), PackedBatch{1, 5}, false, rng);
  const auto y2 = transformer_layer(x2, L, model.config(), PackedBatch{1, 5}, false, rng);
  for (std::size_t i = 0; i < 4 * 8; ++i) CHECK(y1.data()[i] == y2.data()[i]);

  // All weights zero, unit gains, zero biases: LN(LN(X)).
  for (auto* w : {&L.w_q, &L.w_k, &L.w_v, &L.w_o, &L.w_ffn1, &L.w_ffn2}) {
    std::fill(w->mutable_data().begin(), w->mutable_data().end(), 0.0);
  }
  const auto ones = Td::full({8}, 1.0), zeros = Td::zeros({8});
  const auto expect = layer_norm(layer_norm(x, ones, zeros), ones, zeros);
  const auto got = transformer_layer(x, L, model.config(), PackedBatch{1, 5}, false, rng);
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward") {
  const auto vocab = tiny_vocab();
  const TransformerLm<double> model(mini(2, 7), vocab, 5);
  CounterRng rng(2);
  const TokenSeq seq{{2, 3, 4, 2, 1}};
  const auto logits = model.forward(seq, false, rng);
  CHECK(logits.shape() == Shape{5, 7});
  const auto lp = log_softmax_rows<double>(logits.data(), 5, 7);
  for (std::size_t t = 0; t < 5; ++t) {
    double total = 0;
    for (std::size_t v = 0; v < 7; ++v) total += std::exp(lp[t * 7 + v]);
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  // Identical across runs.
  CHECK(values(model.forward(seq, false, rng)) == values(logits));
  const TransformerLm<double> again(mini(2, 7), vocab, 5);
  CHECK(values(again.forward(seq, false, rng)) == values(logits));

  TokenSeq long_seq;
  long_seq.ids.assign(33, 2);
  CHECK_THROWS_AS(model.forward(long_seq, false, rng), SequenceTooLong);
  CHECK_THROWS_AS(model.forward(TokenSeq{{2, 9, 1}}, false, rng), BadId);
  CHECK_THROWS_AS(TransformerLm<double>(mini(2, 8), vocab, 1), Error);
}

TEST_CASE("padded batches score like single sequences") {
  const auto vocab = tiny_vocab();
  const TransformerLm<double> model(mini(2, 7), vocab, 6);
  const std::vector<TokenSeq> batch{TokenSeq{{2, 1}}, TokenSeq{{3, 4, 5, 6, 2, 1}},
                                    TokenSeq{{6, 6, 1}}};
  const auto together = model.batch_token_log_probs(batch);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto alone = model.token_log_probs(batch[b]);
    REQUIRE(alone.size() == together[b].size());
    for (std::size_t t = 0; t < alone.size(); ++t) {
      CHECK(together[b][t] == doctest::Approx(alone[t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("causality under random perturbations") {
  const auto vocab = tiny_vocab();
  CHECK(oracle::causality_violations(TransformerLm<double>(mini(2, 7), vocab, 7), 60, 12, 1) == 0);
  CHECK(oracle::causality_violations(TransformerLm<float>(mini(2, 7), vocab, 7), 60, 12, 2) == 0);
}

TEST_CASE("dropout only in training mode") {
  auto c = mini(2, 7);
  c.dropout = 0.3;
  const TransformerLm<double> model(c, tiny_vocab(), 8);
  const TokenSeq seq{{2, 3, 4, 1}};
  CounterRng r1(1), r2(2);
  CHECK(values(model.forward(seq, false, r1)) == values(model.forward(seq, false, r2)));
  CounterRng r3(1), r4(2);
  CHECK(values(model.forward(seq, true, r3)) != values(model.forward(seq, true, r4)));
}

TEST_CASE("end-to-end gradient on a two-layer miniature") {
  const auto vocab = tiny_vocab();
  const TransformerLm<double> model(mini(2, 7), vocab, 9);
  const std::vector<TokenSeq> batch{TokenSeq{{2, 3, 4, 1}}, TokenSeq{{5, 6, 1}}};
  CHECK(oracle::end_to_end_grad_error(model, batch) < 1e-3);
}
