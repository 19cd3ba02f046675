#include "mathlm/model_io.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <type_traits>

#include "mathlm/errors.hpp"

namespace mathlm {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t get_size(const Checkpoint& c, std::string_view key) {
  const auto& s = c.get(key);
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw FormatError("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("config '" + std::string(key) + "' is not an unsigned integer: " + s);
  }
}

double get_double(const Checkpoint& c, std::string_view key) {
  const auto& s = c.get(key);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw FormatError("");
    return v;
  } catch (const std::exception&) {
    throw FormatError("config '" + std::string(key) + "' is not a number: " + s);
  }
}

void put_vocab(Checkpoint& c, const Vocab& v) {
  std::string s;
  for (const auto& t : v.tokens()) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  c.set("vocab", s);
}

template <typename T>
constexpr std::string_view precision_tag() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename T>
void put_params(Checkpoint& c, const NeuralLm<T>& model) {
  c.set("precision", std::string(precision_tag<T>()));
  for (const auto& [name, p] : model.named_parameters()) {
    std::vector<std::uint64_t> shape(p.shape().begin(), p.shape().end());
    if constexpr (std::is_same_v<T, float>) {
      c.records.push_back(TensorRecord::from_f32(name, shape, p.data()));
    } else {
      c.records.push_back(TensorRecord::from_f64(name, shape, p.data()));
    }
  }
}

template <typename T>
void load_params(const Checkpoint& c, NeuralLm<T>& model) {
  if (c.get("precision") != precision_tag<T>()) {
    throw FormatError("checkpoint precision is " + c.get("precision"));
  }
  for (auto& [name, p] : model.named_parameters()) {
    const auto& r = c.record(name);
    if (!std::equal(r.shape.begin(), r.shape.end(), p.shape().begin(), p.shape().end())) {
      throw FormatError("record '" + name + "' has the wrong shape");
    }
    std::vector<T> values;
    if constexpr (std::is_same_v<T, float>) {
      values = r.to_f32();
    } else {
      values = r.to_f64();
    }
    Tensor<T> handle = p;
    std::copy(values.begin(), values.end(), handle.mutable_data().begin());
  }
}

TmlmConfig tmlm_config(const Checkpoint& c) {
  TmlmConfig t;
  t.n_layers = get_size(c, "layers");
  t.n_heads = get_size(c, "heads");
  t.head_dim = get_size(c, "head_dim");
  t.d_embed = get_size(c, "d_embed");
  t.d_model = get_size(c, "d_model");
  t.d_ffn = get_size(c, "d_ffn");
  t.context_len = get_size(c, "context_len");
  t.dropout = get_double(c, "dropout");
  t.vocab_size = get_size(c, "vocab_size");
  return t;
}

GruConfig gru_config(const Checkpoint& c) {
  GruConfig g;
  g.n_layers = get_size(c, "layers");
  g.d_embed = get_size(c, "d_embed");
  g.d_hidden = get_size(c, "d_hidden");
  g.dropout = get_double(c, "dropout");
  g.vocab_size = get_size(c, "vocab_size");
  return g;
}

}  // namespace

Vocab vocab_from_checkpoint(const Checkpoint& ckpt) {
  std::istringstream in(ckpt.get("vocab"));
  std::vector<std::string> tokens;
  for (std::string t; in >> t;) tokens.push_back(t);
  try {
    return Vocab(std::move(tokens));
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint vocabulary: ") + e.what());
  }
}

template <typename T>
Checkpoint to_checkpoint(const TransformerLm<T>& model) {
  Checkpoint c;
  c.kind = "tmlm";
  const auto& t = model.config();
  c.set("layers", std::to_string(t.n_layers));
  c.set("heads", std::to_string(t.n_heads));
  c.set("head_dim", std::to_string(t.head_dim));
  c.set("d_embed", std::to_string(t.d_embed));
  c.set("d_model", std::to_string(t.d_model));
  c.set("d_ffn", std::to_string(t.d_ffn));
  c.set("context_len", std::to_string(t.context_len));
  c.set("dropout", fmt_double(t.dropout));
  c.set("vocab_size", std::to_string(t.vocab_size));
  put_vocab(c, model.vocab());
  put_params(c, model);
  return c;
}

template <typename T>
Checkpoint to_checkpoint(const GruLm<T>& model) {
  Checkpoint c;
  c.kind = "gru";
  const auto& g = model.config();
  c.set("layers", std::to_string(g.n_layers));
  c.set("d_embed", std::to_string(g.d_embed));
  c.set("d_hidden", std::to_string(g.d_hidden));
  c.set("dropout", fmt_double(g.dropout));
  c.set("vocab_size", std::to_string(g.vocab_size));
  put_vocab(c, model.vocab());
  put_params(c, model);
  return c;
}

Checkpoint to_checkpoint(const NGramModel& model) {
  Checkpoint c;
  c.kind = "ngram";
  c.set("order", std::to_string(model.order()));
  c.set("k", fmt_double(model.k()));
  std::string w;
  for (double x : model.weights()) {
    if (!w.empty()) w += ' ';
    w += fmt_double(x);
  }
  c.set("weights", w);
  put_vocab(c, model.vocab());
  for (std::size_t n = 1; n <= model.order(); ++n) {
    std::vector<std::vector<std::int64_t>> rows;
    for (const auto& [key, count] : model.table(n)) {
      std::vector<std::int64_t> row(key.begin(), key.end());
      row.push_back(static_cast<std::int64_t>(count));
      rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end());
    std::vector<std::int64_t> flat;
    flat.reserve(rows.size() * (n + 1));
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    c.records.push_back(TensorRecord::from_i64("counts." + std::to_string(n),
                                               {rows.size(), n + 1}, flat));
  }
  return c;
}

NGramModel ngram_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "ngram") throw FormatError("checkpoint holds a " + ckpt.kind + " model");
  std::vector<double> weights;
  {
    std::istringstream in(ckpt.get("weights"));
    for (std::string s; in >> s;) weights.push_back(std::stod(s));
  }
  NGramModel model(vocab_from_checkpoint(ckpt), get_size(ckpt, "order"), get_double(ckpt, "k"),
                   std::move(weights));
  for (std::size_t n = 1; n <= model.order(); ++n) {
    const auto& r = ckpt.record("counts." + std::to_string(n));
    if (r.shape.size() != 2 || r.shape[1] != n + 1) {
      throw FormatError("record '" + r.name + "' has the wrong shape");
    }
    const auto flat = r.to_i64();
    std::vector<TokenId> key(n);
    for (std::size_t i = 0; i < r.shape[0]; ++i) {
      const auto* row = flat.data() + i * (n + 1);
      for (std::size_t j = 0; j < n; ++j) key[j] = static_cast<TokenId>(row[j]);
      if (row[n] < 0) throw FormatError("negative n-gram count");
      model.add_count(key, static_cast<std::uint64_t>(row[n]));
    }
  }
  return model;
}

template <typename T>
std::unique_ptr<NeuralLm<T>> neural_from_checkpoint(const Checkpoint& ckpt) {
  std::unique_ptr<NeuralLm<T>> model;
  if (ckpt.kind == "tmlm") {
    model = std::make_unique<TransformerLm<T>>(tmlm_config(ckpt), vocab_from_checkpoint(ckpt), 0);
  } else if (ckpt.kind == "gru") {
    model = std::make_unique<GruLm<T>>(gru_config(ckpt), vocab_from_checkpoint(ckpt), 0);
  } else {
    throw FormatError("checkpoint holds a " + ckpt.kind + " model");
  }
  load_params(ckpt, *model);
  return model;
}

std::unique_ptr<LanguageModel> model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind == "ngram") return std::make_unique<NGramModel>(ngram_from_checkpoint(ckpt));
  if (ckpt.kind != "tmlm" && ckpt.kind != "gru") {
    throw FormatError("unknown model kind '" + ckpt.kind + "'");
  }
  if (ckpt.get("precision") == "f64") return neural_from_checkpoint<double>(ckpt);
  return neural_from_checkpoint<float>(ckpt);
}

template Checkpoint to_checkpoint(const TransformerLm<float>&);
template Checkpoint to_checkpoint(const TransformerLm<double>&);
template Checkpoint to_checkpoint(const GruLm<float>&);
template Checkpoint to_checkpoint(const GruLm<double>&);
template std::unique_ptr<NeuralLm<float>> neural_from_checkpoint(const Checkpoint&);
template std::unique_ptr<NeuralLm<double>> neural_from_checkpoint(const Checkpoint&);

}  // namespace mathlm
