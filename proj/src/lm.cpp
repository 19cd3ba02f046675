#include "mathlm/lm.hpp"

#include "mathlm/errors.hpp"
#include "mathlm/ops.hpp"

namespace mathlm {

std::vector<std::vector<double>> LanguageModel::batch_token_log_probs(
    std::span<const TokenSeq> batch) const {
  std::vector<std::vector<double>> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(token_log_probs(s));
  return out;
}

ShiftedBatch make_shifted_batch(std::span<const TokenSeq> batch, const Vocab& vocab) {
  ShiftedBatch b;
  b.batch = batch.size();
  for (const auto& s : batch) {
    if (s.empty()) throw EmptySequence();
    b.steps = std::max(b.steps, s.size());
  }
  b.inputs.assign(b.batch * b.steps, vocab.pad_id());
  b.targets.assign(b.batch * b.steps, vocab.pad_id());
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& s = batch[i];
    for (std::size_t t = 0; t < s.size(); ++t) {
      b.inputs[i * b.steps + t] = t == 0 ? vocab.eos_id() : s[t - 1];
      b.targets[i * b.steps + t] = s[t];
    }
  }
  return b;
}

template <typename T>
Tensor<T> NeuralLm<T>::loss(std::span<const TokenSeq> batch, bool training,
                            CounterRng& rng) const {
  auto out = forward_batch(batch, training, rng);
  return cross_entropy(out.logits, out.targets, vocab().pad_id());
}

template <typename T>
std::size_t NeuralLm<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : named_parameters()) n += p.size();
  return n;
}

template <typename T>
void NeuralLm<T>::zero_grad() const {
  for (auto& [name, p] : named_parameters()) {
    Tensor<T> handle = p;
    handle.zero_grad();
  }
}

template <typename T>
std::vector<double> NeuralLm<T>::token_log_probs(const TokenSeq& seq) const {
  return batch_token_log_probs(std::span<const TokenSeq>(&seq, 1)).front();
}

template <typename T>
std::vector<std::vector<double>> NeuralLm<T>::batch_token_log_probs(
    std::span<const TokenSeq> batch) const {
  std::vector<std::vector<double>> out(batch.size());
  if (batch.empty()) return out;
  CounterRng unused(0);
  const auto fwd = forward_batch(batch, /*training=*/false, unused);
  const std::size_t V = fwd.logits.cols();
  const auto logits = fwd.logits.data();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    out[b].resize(s.size());
    for (std::size_t t = 0; t < s.size(); ++t) {
      const auto lp = log_softmax_rows<T>(logits.subspan(fwd.row(b, t) * V, V), 1, V);
      out[b][t] = lp[static_cast<std::size_t>(s[t])];
    }
  }
  return out;
}

template class NeuralLm<float>;
template class NeuralLm<double>;

}  // namespace mathlm
