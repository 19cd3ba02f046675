#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mathlm/lm.hpp"

namespace mathlm {

struct TrainConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  /// Stop after this many updates; 0 runs `epochs` full passes instead.
  std::size_t max_steps = 0;
  std::size_t epochs = 10;
  /// Evaluate every this many steps; 0 evaluates at each epoch end.
  std::size_t eval_interval = 0;
  /// When > 1, each shuffled window of this many batches is sorted by length
  /// before being cut, and the batch order is shuffled again. Less padding.
  std::size_t sort_window = 0;
  std::optional<double> clip_norm;  // global L2 bound on gradients
  std::uint64_t seed = 0;

  void validate() const;  // throws Error
};

template <typename T>
struct AdamWState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamWState for_params(std::span<const Tensor<T>> params);
  bool initialized() const { return !m.empty() || step > 0; }
};

/// One decoupled-decay Adam update of every parameter in place:
///   theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta.
/// An empty gradient span counts as zero. Throws ShapeMismatch when a gradient
/// or moment size differs from its parameter, UninitializedState when the
/// state was not built for this parameter list.
template <typename T>
void adamw_step(std::span<Tensor<T>> params, std::span<const std::span<const T>> grads,
                AdamWState<T>& state, const TrainConfig& config);

/// Same, with gradients read from the parameters' grad buffers.
template <typename T>
void adamw_step(std::span<Tensor<T>> params, AdamWState<T>& state, const TrainConfig& config);

/// Rescales gradients in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm);

struct TrainRecord {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean loss of the steps since the previous record
  double val_ppl = 0.0;     // NaN without a validation set
};

struct TrainHistory {
  std::vector<double> step_losses;
  std::vector<TrainRecord> records;
};

/// Minibatch AdamW on split.train. Each epoch reshuffles under the seed;
/// dropout masks are drawn per step from the seed as well, so a run is a pure
/// function of (model init, split, config). Writes one
/// `step<TAB>train_loss<TAB>val_ppl` line per record to `log` when given.
/// Throws SequenceTooLong, EmptyCorpus.
template <typename T>
TrainHistory train(NeuralLm<T>& model, const CorpusSplit& split, const TrainConfig& config,
                   std::ostream* log = nullptr);

/// exp of the mean negative log-likelihood pooled over every token (eos
/// included) of every sequence. Throws EmptyCorpus.
double perplexity(const LanguageModel& model, std::span<const TokenSeq> corpus);

/// Pooled perplexity from per-sequence token log-probabilities.
double perplexity_from_log_probs(std::span<const std::vector<double>> log_probs);

}  // namespace mathlm
