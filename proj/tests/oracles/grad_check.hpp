#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mathlm/ops.hpp"

namespace oracle {

using Td = mathlm::Tensor<double>;
using mathlm::CounterRng;
using mathlm::Shape;

inline Td random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  CounterRng rng(seed);
  std::vector<double> v(mathlm::shape_size(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Td::from_data(std::move(shape), std::move(v), true);
}

// Values bounded away from zero, for kinked functions.
inline Td away_from_zero(Shape shape, std::uint64_t seed) {
  auto t = random_tensor(std::move(shape), seed, 0.2, 1.0);
  CounterRng rng(seed + 1);
  for (auto& x : t.mutable_data()) {
    if (rng.uniform() < 0.5) x = -x;
  }
  return t;
}

// Compares backprop of sum(f(inputs) * R) against central differences with
// h = 1e-5. Returns the worst norm-wise relative error over the inputs.
inline double grad_check(std::vector<Td> inputs, const std::function<Td(const std::vector<Td>&)>& f) {
  const Td probe = f(inputs);
  const Td weights = random_tensor(probe.shape(), 999);
  auto objective = [&]() {
    const Td out = f(inputs);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (std::isinf(out.data()[i])) continue;  // masked cells carry no gradient
      s += out.data()[i] * weights.data()[i];
    }
    return s;
  };

  for (auto& in : inputs) in.zero_grad();
  const Td w = weights.detach();
  Td out = f(inputs);
  // Masked -inf cells would poison the sum; route through a finite copy.
  bool has_inf = false;
  for (double v : out.data()) has_inf = has_inf || std::isinf(v);
  if (has_inf) {
    std::vector<double> finite_w(w.data().begin(), w.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (std::isinf(out.data()[i])) finite_w[i] = 0;
    }
    auto& node = out.node();
    std::vector<double> seed_grad(finite_w);
    node.grad = seed_grad;
    // Run the graph backward from `out` with the chosen seed gradient.
    auto tape = mathlm::ComputationTape<double>::record(out);
    for (auto* n : tape.nodes()) {
      if (n != &node && !n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    }
    for (auto it = tape.nodes().rbegin(); it != tape.nodes().rend(); ++it) {
      if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
    }
  } else {
    sum(mul(out, w)).backward();
  }

  double worst = 0;
  const double h = 1e-5;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    const std::vector<double> analytic = in.has_grad()
                                             ? std::vector<double>(in.grad().begin(), in.grad().end())
                                             : std::vector<double>(in.size(), 0.0);
    double diff2 = 0, a2 = 0, n2 = 0;
    auto data = in.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = objective();
      data[i] = keep - h;
      const double down = objective();
      data[i] = keep;
      const double numeric = (up - down) / (2 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    worst = std::max(worst, std::sqrt(diff2) / scale);
  }
  return worst;
}

/// Worst finite-difference error of every autograd primitive, by name.
inline std::vector<std::pair<std::string, double>> primitive_grad_errors() {
  using namespace mathlm;
  using V = std::vector<Td>;
  std::vector<std::pair<std::string, double>> out;
  auto check = [&](std::string name, std::vector<Td> in, const std::function<Td(const V&)>& f) {
    out.emplace_back(std::move(name), grad_check(std::move(in), f));
  };
  check("matmul", {random_tensor({3, 4}, 1), random_tensor({4, 5}, 2)},
        [](const V& in) { return matmul(in[0], in[1]); });
  check("matmul_nt", {random_tensor({3, 4}, 1), random_tensor({6, 4}, 2)},
        [](const V& in) { return matmul_nt(in[0], in[1]); });
  check("transpose", {random_tensor({3, 4}, 1)}, [](const V& in) { return transpose(in[0]); });
  check("add sub mul scale", {random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)},
        [](const V& in) { return scale(mul(add(in[0], in[1]), sub(in[0], in[1])), 1.7); });
  check("add_bias", {random_tensor({3, 4}, 1), random_tensor({4}, 2)},
        [](const V& in) { return add_bias(in[0], in[1]); });
  check("linear", {random_tensor({3, 4}, 1), random_tensor({4, 2}, 2), random_tensor({2}, 3)},
        [](const V& in) { return linear(in[0], in[1], in[2]); });
  check("sum", {random_tensor({3, 4}, 1)}, [](const V& in) { return sum(in[0]); });
  check("relu", {away_from_zero({3, 4}, 1)}, [](const V& in) { return relu(in[0]); });
  check("sigmoid", {random_tensor({3, 4}, 2, -3, 3)}, [](const V& in) { return sigmoid(in[0]); });
  check("tanh", {random_tensor({3, 4}, 3, -3, 3)}, [](const V& in) { return tanh(in[0]); });
  for (std::size_t axis = 0; axis < 3; ++axis) {
    check("softmax axis " + std::to_string(axis), {random_tensor({2, 3, 4}, 1, -2, 2)},
          [axis](const V& in) { return softmax(in[0], axis); });
  }
  check("causal_mask", {random_tensor({2, 4, 4}, 2)}, [](const V& in) { return causal_mask(in[0]); });
  check("masked softmax", {random_tensor({2, 4, 4}, 1)},
        [](const V& in) { return softmax(causal_mask(in[0]), 2); });
  check("layer_norm", {random_tensor({3, 6}, 1), random_tensor({6}, 2), random_tensor({6}, 3)},
        [](const V& in) { return layer_norm(in[0], in[1], in[2], 1e-5); });
  const std::vector<TokenId> ids{1, 3, 1, 0};
  check("embedding_lookup", {random_tensor({4, 3}, 1)},
        [&ids](const V& in) { return embedding_lookup(in[0], ids); });
  check("dropout", {random_tensor({5, 6}, 1)}, [](const V& in) {
    CounterRng rng(42);
    return dropout(in[0], 0.3, true, rng);
  });
  const std::vector<TokenId> targets{2, 0, 4, 1};
  check("cross_entropy", {random_tensor({4, 5}, 1, -2, 2)},
        [&targets](const V& in) { return cross_entropy(in[0], targets, 4); });
  check("slice_cols", {random_tensor({4, 6}, 1)}, [](const V& in) { return slice_cols(in[0], 1, 4); });
  check("slice_rows", {random_tensor({4, 6}, 1)}, [](const V& in) { return slice_rows(in[0], 2, 4); });
  check("concat_cols", {random_tensor({3, 2}, 1), random_tensor({3, 4}, 2)},
        [](const V& in) { return concat_cols<double>(in); });
  check("concat_rows", {random_tensor({2, 3}, 1), random_tensor({4, 3}, 2)},
        [](const V& in) { return concat_rows<double>(in); });
  check("batched_matmul", {random_tensor({3, 4, 5}, 1), random_tensor({3, 5, 2}, 2)},
        [](const V& in) { return batched_matmul(in[0], in[1]); });
  check("batched_matmul trans_b", {random_tensor({3, 4, 5}, 1), random_tensor({3, 6, 5}, 2)},
        [](const V& in) { return batched_matmul(in[0], in[1], true); });
  check("split_heads", {random_tensor({6, 8}, 1)}, [](const V& in) { return split_heads(in[0], 2, 3, 2); });
  check("merge_heads", {random_tensor({4, 3, 2}, 1)}, [](const V& in) { return merge_heads(in[0], 2); });
  for (bool causal : {false, true}) {
    check(causal ? "sdpa causal" : "sdpa",
          {random_tensor({4, 3}, 1), random_tensor({4, 3}, 2), random_tensor({4, 5}, 3)},
          [causal](const V& in) { return sdpa(in[0], in[1], in[2], causal); });
  }
  return out;
}

}  // namespace oracle
