#include "mathlm/synth.hpp"

#include <array>

#include "mathlm/corpus.hpp"
#include "mathlm/errors.hpp"

namespace mathlm {

namespace {

constexpr std::array<std::string_view, 26> kLower = {
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m",
    "n", "o", "p", "q", "r", "s", "t", "u", "v", "w", "x", "y", "z"};
constexpr std::array<std::string_view, 18> kUpper = {"A", "B", "C", "E", "F", "G", "H", "I", "L",
                                                     "M", "N", "P", "R", "S", "T", "V", "X", "Y"};
constexpr std::array<std::string_view, 10> kGreek = {
    "\\alpha", "\\beta", "\\gamma", "\\theta", "\\lambda",
    "\\mu",    "\\pi",   "\\sigma", "\\phi",   "\\Delta"};
constexpr std::array<std::string_view, 6> kVarPool = {"x", "y", "z", "t", "n", "a"};
constexpr std::array<std::string_view, 4> kFuncs = {"\\sin", "\\cos", "\\tan", "\\log"};
constexpr std::array<std::string_view, 6> kRelations = {"=", "\\neq", "<", ">", "\\leq", "\\geq"};
constexpr std::array<std::string_view, 6> kOps = {"+", "-", "\\times", "\\div", "\\pm", "/"};

template <std::size_t N>
std::string_view pick(CounterRng& rng, const std::array<std::string_view, N>& from) {
  return from[rng.below(N)];
}

class Builder {
 public:
  Builder(CounterRng& rng, std::size_t max_depth) : rng_(rng), max_depth_(max_depth) {
    main_ = pick(rng_, kVarPool);
  }

  std::vector<std::string> statement() {
    const double u = rng_.uniform();
    if (u < 0.50) {
      expr(0);
      relation();
      expr(0);
    } else if (u < 0.65) {
      expr(0);
    } else if (u < 0.72) {
      emit("\\forall");
      emit(main_);
      emit("\\in");
      emit(pick(rng_, kUpper));
      emit(",");
      expr(1);
      relation();
      expr(1);
    } else if (u < 0.77) {
      emit("\\exists");
      emit(main_);
      emit("\\in");
      emit(pick(rng_, kUpper));
      emit(",");
      expr(1);
      relation();
      expr(1);
    } else if (u < 0.83) {
      set_literal();
    } else if (u < 0.93) {
      emit(rng_.below(2) ? "f" : "g");
      if (rng_.below(4) == 0) emit("\\prime");
      emit("(");
      emit(main_);
      emit(")");
      emit("=");
      expr(0);
    } else {
      emit(main_);
      emit("\\in");
      emit(rng_.below(2) ? "[" : "(");
      number();
      emit(",");
      if (rng_.below(3) == 0) {
        emit("\\infty");
        emit(")");
      } else {
        number();
        emit(rng_.below(2) ? "]" : ")");
      }
    }
    return std::move(out_);
  }

 private:
  void emit(std::string_view s) { out_.emplace_back(s); }

  std::string_view variable() {
    const double u = rng_.uniform();
    if (u < 0.55) return main_;
    if (u < 0.85) return pick(rng_, kLower);
    if (u < 0.95) return pick(rng_, kGreek);
    return pick(rng_, kUpper);
  }

  void relation() { emit(rng_.below(2) ? "=" : pick(rng_, kRelations)); }

  void number() {
    const std::size_t digits = 1 + rng_.below(rng_.below(3) == 0 ? 3 : 1);
    for (std::size_t i = 0; i < digits; ++i) {
      emit(std::string(1, static_cast<char>('0' + (i == 0 && digits > 1 ? 1 + rng_.below(9)
                                                                         : rng_.below(10)))));
    }
    if (rng_.below(10) == 0) {
      emit(".");
      emit(std::string(1, static_cast<char>('0' + rng_.below(10))));
    }
  }

  void braced_expr(std::size_t depth) {
    emit("{");
    expr(depth);
    emit("}");
  }

  void small_script() {
    emit("{");
    const auto r = rng_.below(4);
    if (r == 0) {
      emit(variable());
    } else if (r == 1 && depth_ok(1)) {
      emit(main_);
      emit(pick(rng_, kOps));
      number();
    } else {
      emit(std::string(1, static_cast<char>('0' + rng_.below(10))));
    }
    emit("}");
  }

  bool depth_ok(std::size_t depth) const { return depth < max_depth_; }

  void expr(std::size_t depth) {
    term(depth);
    const std::size_t extra = rng_.below(depth == 0 ? 4 : 2);
    for (std::size_t i = 0; i < extra; ++i) {
      emit(rng_.below(3) ? (rng_.below(2) ? "+" : "-") : pick(rng_, kOps));
      term(depth);
    }
  }

  void term(std::size_t depth) {
    if (rng_.below(4) == 0) {
      number();
      if (rng_.below(2)) emit(variable());
      return;
    }
    if (rng_.below(5) == 0) emit(std::string(1, static_cast<char>('2' + rng_.below(8))));
    factor(depth);
  }

  void atom() {
    switch (rng_.below(8)) {
      case 0:
        number();
        break;
      case 1:
        emit(variable());
        emit("^");
        small_script();
        break;
      case 2:
        emit(variable());
        emit("_");
        emit("{");
        emit(rng_.below(2) ? std::string_view("i") : std::string_view("n"));
        emit("}");
        break;
      default:
        emit(variable());
    }
  }

  void factor(std::size_t depth) {
    if (!depth_ok(depth)) {
      atom();
      return;
    }
    const std::size_t d = depth + 1;
    switch (rng_.below(18)) {
      case 0:
        emit("\\frac");
        braced_expr(d);
        braced_expr(d);
        break;
      case 1:
        emit("\\sqrt");
        if (rng_.below(3) == 0) {
          emit("[");
          emit(std::string(1, static_cast<char>('2' + rng_.below(3))));
          emit("]");
        }
        braced_expr(d);
        break;
      case 2:
      case 3:
        emit("(");
        expr(d);
        emit(")");
        if (rng_.below(3) == 0) {
          emit("^");
          small_script();
        }
        break;
      case 4:
        emit("[");
        expr(d);
        emit("]");
        break;
      case 5:
        emit("|");
        expr(d);
        emit("|");
        break;
      case 6:
        emit(pick(rng_, kFuncs));
        if (rng_.below(4) == 0) {
          emit("^");
          emit("{");
          emit("2");
          emit("}");
        }
        if (rng_.below(2)) {
          emit(main_);
        } else {
          emit("(");
          expr(d);
          emit(")");
        }
        break;
      case 7: {
        emit("\\sum");
        const auto idx = rng_.below(2) ? std::string_view("i") : std::string_view("k");
        emit("_");
        emit("{");
        emit(idx);
        emit("=");
        emit(rng_.below(2) ? "0" : "1");
        emit("}");
        emit("^");
        emit("{");
        emit(rng_.below(2) ? "n" : "\\infty");
        emit("}");
        emit(idx);
        factor(d);
        break;
      }
      case 8:
        emit("\\int");
        if (rng_.below(2)) {
          emit("_");
          emit("{");
          emit(rng_.below(2) ? "0" : "a");
          emit("}");
          emit("^");
          emit("{");
          emit(rng_.below(2) ? "1" : "b");
          emit("}");
        }
        expr(d);
        emit("d");
        emit(main_);
        break;
      case 9:
        emit("\\lim");
        emit("_");
        emit("{");
        emit(main_);
        emit("\\rightarrow");
        if (rng_.below(2)) {
          emit("\\infty");
        } else {
          emit("0");
        }
        emit("}");
        factor(d);
        break;
      case 10:
        emit(rng_.below(2) ? main_ : std::string_view("n"));
        emit("!");
        break;
      case 11:
        emit(rng_.below(2) ? "f" : "g");
        emit("\\prime");
        emit("(");
        emit(main_);
        emit(")");
        break;
      case 12:
        emit("\\pi");
        break;
      default:
        atom();
    }
  }

  void set_literal() {
    emit(pick(rng_, kUpper));
    emit("=");
    emit("\\{");
    const std::size_t n = 2 + rng_.below(3);
    for (std::size_t i = 0; i < n; ++i) {
      if (i) emit(",");
      if (rng_.below(2)) {
        number();
      } else {
        emit(variable());
      }
    }
    if (rng_.below(2)) {
      emit(",");
      emit("\\ldots");
    }
    emit("\\}");
  }

  CounterRng& rng_;
  std::size_t max_depth_;
  std::string_view main_;
  std::vector<std::string> out_;
};

}  // namespace

SynthOptions SynthOptions::preset(std::string_view name) {
  SynthOptions o;
  if (name == "default") return o;
  if (name == "short") {
    o.max_depth = 2;
    return o;
  }
  if (name == "long") {
    o.min_tokens = 30;
    o.max_tokens = 160;
    return o;
  }
  throw Error("unknown grammar preset '" + std::string(name) + "'");
}

SynthGrammar::SynthGrammar(SynthOptions options, std::uint64_t seed)
    : options_(options), rng_(seed, /*stream=*/0x73796e7468ULL) {
  if (options_.min_tokens == 0 || options_.min_tokens > options_.max_tokens) {
    throw Error("synthetic length bounds must satisfy 1 <= min <= max");
  }
}

std::vector<std::string> SynthGrammar::draw() {
  Builder b(rng_, options_.max_depth);
  return b.statement();
}

std::vector<std::string> SynthGrammar::sample_lexemes() {
  constexpr int kAttempts = 100000;
  for (int i = 0; i < kAttempts; ++i) {
    auto lex = draw();
    if (lex.size() >= options_.min_tokens && lex.size() <= options_.max_tokens) return lex;
  }
  throw Error("grammar could not meet the requested length bounds");
}

std::string SynthGrammar::sample() { return join_lexemes(sample_lexemes()); }

std::vector<std::string> generate_corpus(const SynthOptions& options, std::size_t count,
                                         std::uint64_t seed) {
  SynthGrammar g(options, seed);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(g.sample());
  return out;
}

}  // namespace mathlm
