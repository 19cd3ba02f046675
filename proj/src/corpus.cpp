#include "mathlm/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>

#include "mathlm/errors.hpp"
#include "mathlm/rng.hpp"

namespace mathlm {

namespace {

// 106 symbols of the CROHME-style inventory.
constexpr std::array<std::string_view, 106> kCrohmeSymbols = {
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m",
    "n", "o", "p", "q", "r", "s", "t", "u", "v", "w", "x", "y", "z",
    "A", "B", "C", "E", "F", "G", "H", "I", "L", "M", "N", "P", "R", "S", "T", "V", "X", "Y",
    "\\alpha", "\\beta", "\\gamma", "\\theta", "\\lambda", "\\mu", "\\pi", "\\sigma", "\\phi", "\\Delta",
    "\\sin", "\\cos", "\\tan", "\\log", "\\lim",
    "\\sum", "\\int", "\\sqrt", "\\frac",
    "=", "\\neq", "<", ">", "\\leq", "\\geq",
    "+", "-", "\\times", "\\div", "\\pm", "/",
    "\\infty", "\\rightarrow", "\\exists", "\\forall", "\\in", "\\ldots", "\\prime", "!",
    ",", ".",
    "(", ")", "[", "]", "\\{", "\\}", "|",
    "{", "}", "^", "_",
};

// Wrappers whose argument is kept and whose command is removed.
const std::set<std::string, std::less<>> kStyleWrappers = {
    "\\mathrm", "\\textrm", "\\text", "\\mbox", "\\mathbf", "\\mathit",
};

// Sizing and spacing commands that carry no symbol content.
const std::set<std::string, std::less<>> kDropped = {
    "\\left", "\\right", "\\displaystyle", "\\limits", "\\nolimits",
    "\\,", "\\;", "\\:", "\\!", "\\quad", "\\qquad", "\\ ",
};

bool is_letter_command(std::string_view s) {
  return s.size() >= 2 && s[0] == '\\' && std::isalpha(static_cast<unsigned char>(s[1]));
}

bool is_script(std::string_view s) { return s == "^" || s == "_"; }

struct Item {
  std::string token;  // empty for groups
  std::vector<Item> children;
  bool group = false;
};

std::vector<Item> parse_items(const std::vector<Lexeme>& lex, std::size_t& pos, bool nested) {
  std::vector<Item> items;
  while (pos < lex.size()) {
    const std::string& t = lex[pos].text;
    if (t == "{") {
      ++pos;
      Item g;
      g.group = true;
      g.children = parse_items(lex, pos, true);
      items.push_back(std::move(g));
    } else if (t == "}") {
      if (!nested) {
        throw InvalidLatex("unbalanced '}' at position " + std::to_string(lex[pos].position));
      }
      ++pos;
      return items;
    } else {
      items.push_back(Item{t, {}, false});
      ++pos;
    }
  }
  if (nested) throw InvalidLatex("unclosed '{'");
  return items;
}

bool is_token(const Item& it, std::string_view s) { return !it.group && it.token == s; }

void require_argument(const std::vector<Item>& items, std::size_t i, std::string_view cmd) {
  if (i >= items.size() || (!items[i].group && is_script(items[i].token))) {
    throw InvalidLatex("missing argument for '" + std::string(cmd) + "'");
  }
}

void normalize_level(std::vector<Item>& items) {
  for (auto& it : items) {
    if (it.group) normalize_level(it.children);
  }

  std::vector<Item> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    Item& it = items[i];
    if (!it.group && kDropped.contains(it.token)) {
      // `\left.` / `\right.` are invisible delimiters.
      if ((it.token == "\\left" || it.token == "\\right") && i + 1 < items.size() &&
          is_token(items[i + 1], ".")) {
        ++i;
      }
      continue;
    }
    if (!it.group && kStyleWrappers.contains(it.token)) {
      require_argument(items, i + 1, it.token);
      Item& arg = items[++i];
      if (arg.group) {
        for (auto& c : arg.children) out.push_back(std::move(c));
      } else {
        out.push_back(std::move(arg));
      }
      continue;
    }
    out.push_back(std::move(it));
  }

  std::vector<bool> is_arg(out.size(), false);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].group) continue;
    const std::string& t = out[i].token;
    if (is_script(t)) {
      require_argument(out, i + 1, t);
      is_arg[i + 1] = true;
    } else if (t == "\\frac") {
      require_argument(out, i + 1, t);
      require_argument(out, i + 2, t);
      is_arg[i + 1] = is_arg[i + 2] = true;
    } else if (t == "\\sqrt") {
      std::size_t j = i + 1;
      if (j < out.size() && is_token(out[j], "[")) {
        while (j < out.size() && !is_token(out[j], "]")) ++j;
        if (j == out.size()) throw InvalidLatex("unclosed '[' after '\\sqrt'");
        ++j;
      }
      require_argument(out, j, t);
      is_arg[j] = true;
    }
  }

  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    Item& it = out[i];
    if (it.group && !is_arg[i] && it.children.size() == 1 && !it.children[0].group &&
        !out[i + 1].group && is_script(out[i + 1].token)) {
      Item inner = std::move(it.children[0]);
      it = std::move(inner);
    }
  }
  items = std::move(out);
}

void flatten(const std::vector<Item>& items, std::vector<std::string>& out) {
  for (const auto& it : items) {
    if (it.group) {
      out.emplace_back("{");
      flatten(it.children, out);
      out.emplace_back("}");
    } else {
      out.push_back(it.token);
    }
  }
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{std::string(kPad), std::string(kEos)}) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
  auto pad = index_.find(std::string(kPad));
  auto eos = index_.find(std::string(kEos));
  if (pad == index_.end() || eos == index_.end()) {
    throw Error("vocabulary must contain <pad> and <eos>");
  }
  pad_id_ = pad->second;
  eos_id_ = eos->second;
}

Vocab Vocab::crohme() {
  std::vector<std::string> symbols(kCrohmeSymbols.begin(), kCrohmeSymbols.end());
  std::vector<std::vector<std::string>> corpus{std::move(symbols)};
  return build_vocab(corpus);
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw BadId("token id " + std::to_string(id) + " outside vocabulary of size " +
                std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<Lexeme> lex_latex(std::string_view text) {
  std::vector<Lexeme> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (c == '\\') {
      std::size_t j = i + 1;
      if (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) {
        while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
      } else if (j < text.size()) {
        j += utf8_length(static_cast<unsigned char>(text[j]));
      }
      j = std::min(j, text.size());
      out.push_back({std::string(text.substr(i, j - i)), i});
      i = j;
      continue;
    }
    const std::size_t len = std::min(utf8_length(c), text.size() - i);
    out.push_back({std::string(text.substr(i, len)), i});
    i += len;
  }
  return out;
}

std::string join_lexemes(std::span<const std::string> lexemes) {
  std::string out;
  for (std::size_t i = 0; i < lexemes.size(); ++i) {
    if (i > 0 && is_letter_command(lexemes[i - 1]) && !lexemes[i].empty() &&
        std::isalpha(static_cast<unsigned char>(lexemes[i][0]))) {
      out.push_back(' ');
    }
    out += lexemes[i];
  }
  return out;
}

std::string normalize(std::string_view raw) {
  const auto lex = lex_latex(raw);
  std::size_t pos = 0;
  auto items = parse_items(lex, pos, false);
  normalize_level(items);
  std::vector<std::string> flat;
  flatten(items, flat);
  return join_lexemes(flat);
}

TokenSeq tokenize(std::string_view expr, const Vocab& vocab) {
  const auto lex = lex_latex(expr);
  if (lex.empty()) throw EmptySequence();
  TokenSeq seq;
  seq.ids.reserve(lex.size() + 1);
  for (const auto& l : lex) {
    auto id = vocab.find(l.text);
    if (!id || *id == vocab.pad_id() || *id == vocab.eos_id()) {
      throw UnknownToken(l.position, l.text);
    }
    seq.ids.push_back(*id);
  }
  seq.ids.push_back(vocab.eos_id());
  return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  std::vector<std::string> parts;
  parts.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const TokenId id = seq[i];
    const std::string& tok = vocab.token(id);
    if (id == vocab.eos_id()) {
      if (i + 1 != seq.size()) throw BadId("eos before end of sequence");
      break;
    }
    if (id == vocab.pad_id()) throw BadId("pad id inside a stored sequence");
    parts.push_back(tok);
  }
  return join_lexemes(parts);
}

Vocab build_vocab(std::span<const std::vector<std::string>> corpus) {
  std::set<std::string> distinct;
  for (const auto& seq : corpus) {
    for (const auto& t : seq) {
      if (t != Vocab::kPad && t != Vocab::kEos) distinct.insert(t);
    }
  }
  std::vector<std::string> tokens{std::string(Vocab::kPad), std::string(Vocab::kEos)};
  tokens.insert(tokens.end(), distinct.begin(), distinct.end());
  return Vocab(std::move(tokens));
}

SplitIndices split_indices(std::size_t n, std::uint64_t seed) {
  if (n < 10) {
    throw TooFewSequences("need at least 10 sequences to split, got " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  CounterRng rng(seed, /*stream=*/0x53504c4954ULL);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  const std::size_t n_val = n / 10;
  const std::size_t n_test = n / 10;
  const std::size_t n_train = n - n_val - n_test;
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

CorpusSplit split_corpus(std::span<const TokenSeq> corpus, std::uint64_t seed) {
  const auto idx = split_indices(corpus.size(), seed);
  CorpusSplit out;
  auto take = [&](const std::vector<std::size_t>& from, std::vector<TokenSeq>& to) {
    to.reserve(from.size());
    for (auto i : from) to.push_back(corpus[i]);
  };
  take(idx.train, out.train);
  take(idx.validation, out.validation);
  take(idx.test, out.test);
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Vocab read_vocab(const std::filesystem::path& path) { return Vocab(read_lines(path)); }

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  write_lines(path, vocab.tokens());
}

std::vector<TokenSeq> read_corpus(const std::filesystem::path& path, const Vocab& vocab) {
  const auto lines = read_lines(path);
  std::vector<TokenSeq> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(tokenize(normalize(lines[i]), vocab));
    } catch (const UnknownToken&) {
      throw;
    } catch (const Error& e) {
      throw Error(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mathlm
