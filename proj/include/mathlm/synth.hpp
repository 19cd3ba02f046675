#pragma once

// Random LaTeX expressions from a small context-free grammar over the
// 106-symbol inventory. Each expression favours one variable, so matching
// brackets and repeated variables give long-range structure.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mathlm/rng.hpp"

namespace mathlm {

struct SynthOptions {
  std::size_t max_depth = 3;
  std::size_t min_tokens = 1;   // lexemes, eos not counted
  std::size_t max_tokens = 120;

  /// "default", "short" (depth 2) or "long" (at least 30 lexemes). Throws Error.
  static SynthOptions preset(std::string_view name);
};

class SynthGrammar {
 public:
  SynthGrammar(SynthOptions options, std::uint64_t seed);

  /// Lexemes of the next expression; always balanced and within the length
  /// bounds.
  std::vector<std::string> sample_lexemes();

  /// Canonical text of the next expression (a fixed point of normalize).
  std::string sample();

 private:
  std::vector<std::string> draw();

  SynthOptions options_;
  CounterRng rng_;
};

/// `count` expressions from a fresh grammar seeded with `seed`.
std::vector<std::string> generate_corpus(const SynthOptions& options, std::size_t count,
                                         std::uint64_t seed);

}  // namespace mathlm
