#include <doctest.h>

#include <cmath>

#include "mathlm/errors.hpp"
#include "mathlm/gru.hpp"
#include "oracles/model_checks.hpp"

using namespace mathlm;
using Td = Tensor<double>;

namespace {

GruConfig mini(std::size_t layers) {
  GruConfig c;
  c.n_layers = layers;
  c.d_embed = 5;
  c.d_hidden = 6;
  c.vocab_size = 7;
  c.dropout = 0.0;
  return c;
}

Vocab tiny_vocab() { return Vocab({"<pad>", "<eos>", "a", "b", "c", "d", "e"}); }

Td random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = scale * (2 * rng.uniform() - 1);
  return Td::from_data(std::move(shape), std::move(v), true);
}

GruCellParams<double> random_cell(std::size_t d_in, std::size_t h, std::uint64_t seed) {
  return {random_tensor({d_in, 3 * h}, seed), random_tensor({h, 3 * h}, seed + 1),
          random_tensor({3 * h}, seed + 2), random_tensor({3 * h}, seed + 3)};
}

GruCellParams<double> zero_cell(std::size_t d_in, std::size_t h) {
  return {Td::zeros({d_in, 3 * h}, true), Td::zeros({h, 3 * h}, true), Td::zeros({3 * h}, true),
          Td::zeros({3 * h}, true)};
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("parameter counts") {
  auto hand = [](std::size_t layers) {
    std::size_t n = 108 * 256 + (512 * 108 + 108);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = l == 0 ? 256 : 512;
      n += in * 3 * 512 + 512 * 3 * 512 + 2 * 3 * 512;
    }
    return n;
  };
  CHECK(count_params(GruConfig::reference(1)) == hand(1));
  CHECK(count_params(GruConfig::reference(1)) == 1265772);
  CHECK(count_params(GruConfig::reference(2)) == 2841708);
  CHECK(count_params(GruConfig::reference(3)) == 4417644);
  const GruLm<float> model(mini(2), tiny_vocab(), 1);
  CHECK(model.parameter_count() == count_params(mini(2)));
  CHECK(mini(3).input_width(0) == 5);
  CHECK(mini(3).input_width(2) == 6);
}

TEST_CASE("gru_cell with zero parameters") {
  const auto h = random_tensor({2, 4}, 3);
  const auto x = random_tensor({2, 3}, 4);
  const auto out = gru_cell(x, h, zero_cell(3, 4));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.5 * h.data()[i]);

  const auto zero = gru_cell(Td::zeros({2, 3}), Td::zeros({2, 4}), zero_cell(3, 4));
  for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("gru_cell matches the gate equations") {
  const std::size_t d_in = 3, H = 4;
  const auto p = random_cell(d_in, H, 10);
  const auto x = random_tensor({1, d_in}, 20);
  const auto h = random_tensor({1, H}, 21);
  const auto out = gru_cell(x, h, p);

  auto wx = [&](std::size_t col) {
    double s = p.b_in.data()[col];
    for (std::size_t i = 0; i < d_in; ++i) s += x.data()[i] * p.w.at(i, col);
    return s;
  };
  auto uh = [&](std::size_t col, const std::vector<double>& v) {
    double s = p.b_hid.data()[col];
    for (std::size_t i = 0; i < H; ++i) s += v[i] * p.u.at(i, col);
    return s;
  };
  const std::vector<double> hv(h.data().begin(), h.data().end());
  std::vector<double> z(H), r(H), rh(H);
  for (std::size_t j = 0; j < H; ++j) {
    z[j] = sigmoid_ref(wx(j) + uh(j, hv));
    r[j] = sigmoid_ref(wx(H + j) + uh(H + j, hv));
    rh[j] = r[j] * hv[j];
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double cand = std::tanh(wx(2 * H + j) + uh(2 * H + j, rh));
    const double expect = (1 - z[j]) * hv[j] + z[j] * cand;
    CHECK(out.data()[j] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK_THROWS_AS(gru_cell(random_tensor({1, 2}, 1), h, p), ShapeMismatch);
}

TEST_CASE("gru_cell stays within the convex bound") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = random_cell(3, 5, 100 + seed);
    const auto h = random_tensor({4, 5}, 200 + seed, 3.0);
    const auto out = gru_cell(random_tensor({4, 3}, 300 + seed, 2.0), h, p);
    double h_inf = 0, out_inf = 0;
    for (double v : h.data()) h_inf = std::max(h_inf, std::abs(v));
    for (double v : out.data()) out_inf = std::max(out_inf, std::abs(v));
    CHECK(out_inf <= std::max(h_inf, 1.0));
  }
}

TEST_CASE("gru_cell gradient against finite differences") {
  auto p = random_cell(3, 4, 40);
  auto x = random_tensor({2, 3}, 41);
  auto h = random_tensor({2, 4}, 42);
  const auto w = random_tensor({2, 4}, 43).detach();
  auto loss = [&]() { return sum(mul(gru_cell(x, h, p), w)); };
  std::vector<Td*> inputs{&x, &h, &p.w, &p.u, &p.b_in, &p.b_hid};
  for (auto* t : inputs) t->zero_grad();
  loss().backward();
  double diff2 = 0, a2 = 0;
  for (auto* t : inputs) {
    const std::vector<double> analytic(t->grad().begin(), t->grad().end());
    auto data = t->mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + 1e-5;
      const double up = loss().item();
      data[i] = keep - 1e-5;
      const double down = loss().item();
      data[i] = keep;
      const double numeric = (up - down) / 2e-5;
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
    }
  }
  CHECK(std::sqrt(diff2 / a2) < 1e-4);
}

TEST_CASE("forward") {
  const auto vocab = tiny_vocab();
  const GruLm<double> model(mini(2), vocab, 3);
  CounterRng rng(1);
  const TokenSeq seq{{2, 3, 4, 1}};
  const auto logits = model.forward(seq, false, rng);
  CHECK(logits.shape() == Shape{4, 7});
  const GruLm<double> again(mini(2), vocab, 3);
  const auto l2 = again.forward(seq, false, rng);
  CHECK(std::equal(logits.data().begin(), logits.data().end(), l2.data().begin()));
  CHECK_THROWS_AS(model.forward(TokenSeq{{2, 7, 1}}, false, rng), BadId);
}

TEST_CASE("time-major batches score like single sequences") {
  const GruLm<double> model(mini(2), tiny_vocab(), 4);
  const std::vector<TokenSeq> batch{TokenSeq{{2, 3, 4, 5, 1}}, TokenSeq{{6, 1}},
                                    TokenSeq{{3, 3, 1}}};
  CounterRng rng(0);
  const auto out = model.forward_batch(batch, false, rng);
  CHECK(out.time_major);
  CHECK(out.row(1, 2) == 2 * 3 + 1);
  const auto together = model.batch_token_log_probs(batch);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto alone = model.token_log_probs(batch[b]);
    for (std::size_t t = 0; t < alone.size(); ++t) {
      CHECK(together[b][t] == doctest::Approx(alone[t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("causality under random perturbations") {
  CHECK(oracle::causality_violations(GruLm<double>(mini(2), tiny_vocab(), 5), 60, 12, 3) == 0);
}

TEST_CASE("end-to-end gradient on a two-layer miniature") {
  const GruLm<double> model(mini(2), tiny_vocab(), 6);
  const std::vector<TokenSeq> batch{TokenSeq{{2, 3, 4, 1}}, TokenSeq{{5, 6, 1}}};
  CHECK(oracle::end_to_end_grad_error(model, batch) < 1e-3);
}
