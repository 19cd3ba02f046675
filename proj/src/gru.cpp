#include "mathlm/gru.hpp"

#include <string>

#include "mathlm/errors.hpp"
#include "mathlm/init.hpp"

namespace mathlm {

namespace {

// Recurrent weights split once per sequence so the per-step graph stays small.
template <typename T>
struct RecurrentSlices {
  Tensor<T> u_zr, b_zr, u_n, b_n;

  static RecurrentSlices from(const GruCellParams<T>& p) {
    const std::size_t h = p.u.dim(0);
    return {slice_cols(p.u, 0, 2 * h), slice_cols(p.b_hid, 0, 2 * h),
            slice_cols(p.u, 2 * h, 3 * h), slice_cols(p.b_hid, 2 * h, 3 * h)};
  }
};

template <typename T>
Tensor<T> gru_step(const Tensor<T>& gx_zr, const Tensor<T>& gx_n, const Tensor<T>& h,
                   const RecurrentSlices<T>& rs) {
  const std::size_t H = h.cols();
  const auto zr = sigmoid(add(gx_zr, linear(h, rs.u_zr, rs.b_zr)));
  const auto z = slice_cols(zr, 0, H);
  const auto r = slice_cols(zr, H, 2 * H);
  const auto cand = tanh(add(gx_n, linear(mul(r, h), rs.u_n, rs.b_n)));
  return add(h, mul(z, sub(cand, h)));
}

}  // namespace

GruConfig GruConfig::reference(std::size_t n_layers, std::size_t vocab_size) {
  GruConfig c;
  c.n_layers = n_layers;
  c.vocab_size = vocab_size;
  return c;
}

void GruConfig::validate() const {
  if (n_layers == 0 || d_embed == 0 || d_hidden == 0 || vocab_size < 2) {
    throw Error("GRU config has a zero dimension");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw BadRate("GRU dropout outside [0, 1)");
}

std::size_t count_params(const GruConfig& c) {
  std::size_t n = c.vocab_size * c.d_embed;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    n += 3 * c.d_hidden * (c.input_width(l) + c.d_hidden + 2);
  }
  return n + c.d_hidden * c.vocab_size + c.vocab_size;
}

template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruCellParams<T>& params) {
  const std::size_t H = params.u.dim(0);
  if (h.rank() != 2 || h.cols() != H || x.rank() != 2 || x.rows() != h.rows() ||
      params.w.dim(0) != x.cols() || params.w.dim(1) != 3 * H || params.u.dim(1) != 3 * H) {
    throw ShapeMismatch("gru_cell: inconsistent input, state or parameter shapes");
  }
  const auto gx = linear(x, params.w, params.b_in);
  return gru_step(slice_cols(gx, 0, 2 * H), slice_cols(gx, 2 * H, 3 * H), h,
                  RecurrentSlices<T>::from(params));
}

template <typename T>
GruLm<T>::GruLm(GruConfig config, Vocab vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  if (vocab_.size() != config_.vocab_size) {
    throw Error("vocabulary has " + std::to_string(vocab_.size()) + " entries, config expects " +
                std::to_string(config_.vocab_size));
  }
  CounterRng rng(seed, /*stream=*/0x677275ULL);
  const std::size_t H = config_.d_hidden;
  embedding_ = xavier_uniform<T>(config_.vocab_size, config_.d_embed, rng);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    GruCellParams<T> p;
    p.w = xavier_uniform<T>(config_.input_width(l), 3 * H, rng);
    p.u = xavier_uniform<T>(H, 3 * H, rng);
    p.b_in = zeros_param<T>(3 * H);
    p.b_hid = zeros_param<T>(3 * H);
    cells_.push_back(std::move(p));
  }
  w_out_ = xavier_uniform<T>(H, config_.vocab_size, rng);
  b_out_ = zeros_param<T>(config_.vocab_size);
}

template <typename T>
std::vector<typename NeuralLm<T>::NamedParam> GruLm<T>::named_parameters() const {
  std::vector<typename NeuralLm<T>::NamedParam> out;
  out.emplace_back("embedding", embedding_);
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    const std::string p = "gru" + std::to_string(l) + ".";
    out.emplace_back(p + "w", cells_[l].w);
    out.emplace_back(p + "u", cells_[l].u);
    out.emplace_back(p + "b_in", cells_[l].b_in);
    out.emplace_back(p + "b_hid", cells_[l].b_hid);
  }
  out.emplace_back("output.weight", w_out_);
  out.emplace_back("output.bias", b_out_);
  return out;
}

template <typename T>
BatchLogits<T> GruLm<T>::forward_batch(std::span<const TokenSeq> batch, bool training,
                                       CounterRng& rng) const {
  const auto shifted = make_shifted_batch(batch, vocab_);
  const std::size_t B = shifted.batch, L = shifted.steps, H = config_.d_hidden;

  std::vector<TokenId> inputs(B * L), targets(B * L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < L; ++t) {
      inputs[t * B + b] = shifted.inputs[b * L + t];
      targets[t * B + b] = shifted.targets[b * L + t];
    }
  }

  auto x = embedding_lookup(embedding_, inputs);
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    if (l > 0) x = dropout(x, config_.dropout, training, rng);
    const auto& cell = cells_[l];
    const auto gx = linear(x, cell.w, cell.b_in);
    const auto gx_zr = slice_cols(gx, 0, 2 * H);
    const auto gx_n = slice_cols(gx, 2 * H, 3 * H);
    const auto rs = RecurrentSlices<T>::from(cell);
    auto h = Tensor<T>::zeros({B, H});
    std::vector<Tensor<T>> states;
    states.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
      h = gru_step(slice_rows(gx_zr, t * B, (t + 1) * B), slice_rows(gx_n, t * B, (t + 1) * B),
                   h, rs);
      states.push_back(h);
    }
    x = concat_rows<T>(states);
  }

  BatchLogits<T> out;
  out.logits = linear(x, w_out_, b_out_);
  out.targets = std::move(targets);
  out.batch = B;
  out.steps = L;
  out.time_major = true;
  return out;
}

template <typename T>
Tensor<T> GruLm<T>::forward(const TokenSeq& seq, bool training, CounterRng& rng) const {
  return forward_batch(std::span<const TokenSeq>(&seq, 1), training, rng).logits;
}

template Tensor<float> gru_cell(const Tensor<float>&, const Tensor<float>&, const GruCellParams<float>&);
template Tensor<double> gru_cell(const Tensor<double>&, const Tensor<double>&, const GruCellParams<double>&);
template class GruLm<float>;
template class GruLm<double>;

}  // namespace mathlm
