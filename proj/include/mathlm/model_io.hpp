#pragma once

// Conversion between models and checkpoints.

#include <filesystem>
#include <memory>

#include "mathlm/checkpoint.hpp"
#include "mathlm/gru.hpp"
#include "mathlm/ngram.hpp"
#include "mathlm/transformer.hpp"

namespace mathlm {

template <typename T>
Checkpoint to_checkpoint(const TransformerLm<T>& model);
template <typename T>
Checkpoint to_checkpoint(const GruLm<T>& model);
Checkpoint to_checkpoint(const NGramModel& model);

/// Rebuilds whichever model the checkpoint holds. Throws FormatError.
std::unique_ptr<LanguageModel> model_from_checkpoint(const Checkpoint& ckpt);

/// Neural model of precision T; throws FormatError for n-gram checkpoints or
/// a different stored precision.
template <typename T>
std::unique_ptr<NeuralLm<T>> neural_from_checkpoint(const Checkpoint& ckpt);

NGramModel ngram_from_checkpoint(const Checkpoint& ckpt);

Vocab vocab_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mathlm
