#pragma once

// LaTeX math corpus handling: normalization, tokenization, vocabulary and
// train/validation/test partitioning.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mathlm {

using TokenId = std::int32_t;

/// Token inventory. Ids are dense; `<pad>` and `<eos>` are always present.
class Vocab {
 public:
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kEos = "<eos>";

  /// Specials only.
  Vocab();

  /// Takes the tokens in id order. Throws Error on duplicates or missing specials.
  explicit Vocab(std::vector<std::string> tokens);

  /// The 108-entry CROHME-style inventory (106 symbols plus the two specials).
  static Vocab crohme();

  std::size_t size() const { return tokens_.size(); }
  TokenId pad_id() const { return pad_id_; }
  TokenId eos_id() const { return eos_id_; }

  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;  // throws BadId
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_id_ = 0;
  TokenId eos_id_ = 1;
};

/// Token ids of one expression, terminated by exactly one eos.
struct TokenSeq {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  TokenId operator[](std::size_t i) const { return ids[i]; }
  auto begin() const { return ids.begin(); }
  auto end() const { return ids.end(); }
  bool operator==(const TokenSeq&) const = default;
};

struct CorpusSplit {
  std::vector<TokenSeq> train;
  std::vector<TokenSeq> validation;
  std::vector<TokenSeq> test;
};

struct Lexeme {
  std::string text;
  std::size_t position;  // byte offset in the source string
};

/// Splits LaTeX source into lexemes: `\name` commands, `\` + one symbol,
/// and single characters (a whole UTF-8 code point for non-ASCII input).
/// Whitespace separates lexemes and is dropped.
std::vector<Lexeme> lex_latex(std::string_view text);

/// Joins lexemes into canonical text. The only separator ever emitted is a
/// single space between a letter command and a following letter.
std::string join_lexemes(std::span<const std::string> lexemes);

/// Canonical form used throughout: style wrappers unwrapped, sizing and
/// spacing commands dropped, single-token bases of ^/_ unbraced, canonical
/// whitespace. Throws InvalidLatex for unbalanced braces or missing arguments.
std::string normalize(std::string_view raw);

/// Longest-match tokenization of a normalized expression, eos appended.
TokenSeq tokenize(std::string_view expr, const Vocab& vocab);

/// Inverse of tokenize; the trailing eos is suppressed.
std::string detokenize(const TokenSeq& seq, const Vocab& vocab);

/// Specials first, then distinct tokens in lexicographic order.
Vocab build_vocab(std::span<const std::vector<std::string>> corpus);

/// Position permutation of a deterministic seeded shuffle, cut 80/10/10.
/// Validation and test each get floor(n/10); rounding goes to train.
struct SplitIndices {
  std::vector<std::size_t> train, validation, test;
};
SplitIndices split_indices(std::size_t n, std::uint64_t seed);

CorpusSplit split_corpus(std::span<const TokenSeq> corpus, std::uint64_t seed);

// File formats: corpus = one expression per line; vocab = one token per line,
// line number is the id.
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);
Vocab read_vocab(const std::filesystem::path& path);
void write_vocab(const std::filesystem::path& path, const Vocab& vocab);

/// Normalizes and tokenizes every line. Errors propagate with the line number
/// folded into the message.
std::vector<TokenSeq> read_corpus(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace mathlm
