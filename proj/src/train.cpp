#include "mathlm/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "mathlm/errors.hpp"

namespace mathlm {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("AdamW betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw Error("AdamW eps must be positive");
  if (!(weight_decay >= 0.0)) throw Error("weight decay must be non-negative");
  if (batch_size == 0) throw Error("batch size must be positive");
  if (max_steps == 0 && epochs == 0) throw Error("need max_steps or epochs");
  if (clip_norm && !(*clip_norm > 0.0)) throw Error("clip norm must be positive");
}

template <typename T>
AdamWState<T> AdamWState<T>::for_params(std::span<const Tensor<T>> params) {
  AdamWState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), T(0));
    s.v.emplace_back(p.size(), T(0));
  }
  return s;
}

template <typename T>
void adamw_step(std::span<Tensor<T>> params, std::span<const std::span<const T>> grads,
                AdamWState<T>& state, const TrainConfig& config) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw UninitializedState("AdamW state holds " + std::to_string(state.m.size()) +
                             " moment buffers for " + std::to_string(params.size()) +
                             " parameters");
  }
  if (grads.size() != params.size()) throw ShapeMismatch("one gradient per parameter expected");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].size();
    if (state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeMismatch("AdamW moment " + std::to_string(i) + " does not match its parameter");
    }
    if (!grads[i].empty() && grads[i].size() != n) {
      throw ShapeMismatch("gradient " + std::to_string(i) + " does not match its parameter");
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double lr = config.learning_rate, wd = config.weight_decay;
  const double b1 = config.beta1, b2 = config.beta2;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      const double th = static_cast<double>(theta[j]);
      theta[j] = static_cast<T>(th - lr * m_hat / (std::sqrt(v_hat) + config.eps) - lr * wd * th);
    }
  }
}

template <typename T>
void adamw_step(std::span<Tensor<T>> params, AdamWState<T>& state, const TrainConfig& config) {
  std::vector<std::span<const T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    grads.push_back(p.has_grad() ? p.grad() : std::span<const T>());
  }
  adamw_step<T>(params, grads, state, config);
}

template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
TrainHistory train(NeuralLm<T>& model, const CorpusSplit& split, const TrainConfig& config,
                   std::ostream* log) {
  config.validate();
  if (split.train.empty()) throw EmptyCorpus();
  if (const std::size_t cap = model.max_sequence_length(); cap > 0) {
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      if (split.train[i].size() > cap) {
        throw SequenceTooLong("training sequence " + std::to_string(i) + " has " +
                              std::to_string(split.train[i].size()) +
                              " tokens, context holds " + std::to_string(cap));
      }
    }
  }

  std::vector<Tensor<T>> params;
  for (auto& [name, p] : model.named_parameters()) params.push_back(p);
  auto state = AdamWState<T>::for_params(params);

  const CounterRng root(config.seed, /*stream=*/0x747261696eULL);
  const CounterRng shuffle_root = root.fork(1);
  const CounterRng dropout_root = root.fork(2);

  const std::size_t n = split.train.size();
  const std::size_t bs = std::min(config.batch_size, n);
  const std::size_t per_epoch = (n + bs - 1) / bs;
  const std::size_t total = config.max_steps > 0 ? config.max_steps : per_epoch * config.epochs;

  TrainHistory history;
  double pending_loss = 0.0;
  std::size_t pending_steps = 0;
  auto record = [&](std::size_t step) {
    TrainRecord r;
    r.step = step;
    r.train_loss = pending_steps ? pending_loss / static_cast<double>(pending_steps) : 0.0;
    r.val_ppl = split.validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : perplexity(model, split.validation);
    history.records.push_back(r);
    pending_loss = 0.0;
    pending_steps = 0;
    if (log) *log << r.step << '\t' << r.train_loss << '\t' << r.val_ppl << std::endl;
  };

  std::vector<std::size_t> order(n), batch_order(per_epoch);
  std::vector<TokenSeq> batch;
  for (std::size_t step = 1; step <= total; ++step) {
    const std::size_t epoch = (step - 1) / per_epoch;
    const std::size_t slot = (step - 1) % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      CounterRng rng = shuffle_root.fork(epoch);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      std::iota(batch_order.begin(), batch_order.end(), std::size_t{0});
      if (config.sort_window > 1) {
        const std::size_t w = config.sort_window * bs;
        for (std::size_t lo = 0; lo < n; lo += w) {
          std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(lo),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, lo + w)),
                           [&](std::size_t a, std::size_t b) {
                             return split.train[a].size() < split.train[b].size();
                           });
        }
        for (std::size_t i = per_epoch; i > 1; --i) {
          std::swap(batch_order[i - 1], batch_order[rng.below(i)]);
        }
      }
    }
    const std::size_t first = batch_order[slot] * bs;
    batch.clear();
    for (std::size_t i = first; i < std::min(n, first + bs); ++i) {
      batch.push_back(split.train[order[i]]);
    }

    model.zero_grad();
    CounterRng drop = dropout_root.fork(step);
    const auto loss = model.loss(batch, /*training=*/true, drop);
    loss.backward();
    if (config.clip_norm) clip_grad_norm<T>(params, *config.clip_norm);
    adamw_step<T>(params, state, config);

    const double l = static_cast<double>(loss.item());
    history.step_losses.push_back(l);
    pending_loss += l;
    ++pending_steps;

    const bool at_interval = config.eval_interval > 0 ? step % config.eval_interval == 0
                                                      : slot + 1 == per_epoch;
    if (at_interval || step == total) record(step);
  }
  return history;
}

double perplexity_from_log_probs(std::span<const std::vector<double>> log_probs) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& seq : log_probs) {
    for (double lp : seq) sum += lp;
    count += seq.size();
  }
  if (count == 0) throw EmptyCorpus();
  return std::exp(-sum / static_cast<double>(count));
}

double perplexity(const LanguageModel& model, std::span<const TokenSeq> corpus) {
  if (corpus.empty()) throw EmptyCorpus();
  constexpr std::size_t kChunk = 32;
  std::vector<std::vector<double>> all;
  all.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); i += kChunk) {
    auto part = model.batch_token_log_probs(corpus.subspan(i, std::min(kChunk, corpus.size() - i)));
    for (auto& p : part) all.push_back(std::move(p));
  }
  return perplexity_from_log_probs(all);
}

#define MATHLM_INSTANTIATE(T)                                                                 \
  template struct AdamWState<T>;                                                              \
  template void adamw_step<T>(std::span<Tensor<T>>, std::span<const std::span<const T>>,      \
                              AdamWState<T>&, const TrainConfig&);                            \
  template void adamw_step<T>(std::span<Tensor<T>>, AdamWState<T>&, const TrainConfig&);      \
  template double clip_grad_norm<T>(std::span<Tensor<T>>, double);                            \
  template TrainHistory train<T>(NeuralLm<T>&, const CorpusSplit&, const TrainConfig&,        \
                                 std::ostream*);
MATHLM_INSTANTIATE(float)
MATHLM_INSTANTIATE(double)
#undef MATHLM_INSTANTIATE

}  // namespace mathlm
