#include "mathlm/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "mathlm/errors.hpp"

namespace mathlm {

namespace {

using kernels::Trans;

#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
void check_finite(const Node<T>& n, bool allow_neg_inf) {
  for (T v : n.data) {
    if (std::isnan(v) || (std::isinf(v) && !(allow_neg_inf && v < 0))) {
      throw NonFinite(std::string("non-finite value produced by ") + std::string(n.op));
    }
  }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                      std::string_view op, std::function<void(Node<T>&)> fn,
                      bool allow_neg_inf = false) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->parents.push_back(in.ptr());
    node->backward_fn = std::move(fn);
  }
  if (g_debug_checks) check_finite(*node, allow_neg_inf);
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result_n(Shape shape, std::vector<T> data, std::span<const Tensor<T>> inputs,
                        std::string_view op, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->parents.push_back(in.ptr());
    node->backward_fn = std::move(fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void require_matrix(const Tensor<T>& a, std::string_view what) {
  if (a.rank() != 2) {
    throw ShapeMismatch(std::string(what) + " expects a matrix, got " + shape_str(a.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + ": " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
}

template <typename T, typename F, typename G>
Tensor<T> unary(const Tensor<T>& a, std::string_view op, F forward, G local_grad) {
  std::vector<T> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(x[i]);
  return make_result<T>(a.shape(), std::move(out), {a}, op, [local_grad](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * local_grad(p.data[i], self.data[i]);
    }
  });
}

template <typename T>
void col_sum_into(std::span<const T> g, std::size_t rows, std::size_t cols, std::span<T> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += g[r * cols + c];
  }
}

}  // namespace

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeMismatch("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  kernels::gemm(Trans::kNo, Trans::kNo, m, n, k, a.data().data(), b.data().data(), out.data(),
                false);
  return make_result<T>({m, n}, std::move(out), {a, b}, "matmul", [m, n, k](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      kernels::gemm(Trans::kNo, Trans::kYes, m, k, n, self.grad.data(), pb.data.data(),
                    pa.grad_buffer().data(), true);
    }
    if (pb.requires_grad) {
      kernels::gemm(Trans::kYes, Trans::kNo, k, n, m, pa.data.data(), self.grad.data(),
                    pb.grad_buffer().data(), true);
    }
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeMismatch("matmul_nt inner extents differ: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  kernels::gemm(Trans::kNo, Trans::kYes, m, n, k, a.data().data(), b.data().data(), out.data(),
                false);
  return make_result<T>({m, n}, std::move(out), {a, b}, "matmul_nt", [m, n, k](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      kernels::gemm(Trans::kNo, Trans::kNo, m, k, n, self.grad.data(), pb.data.data(),
                    pa.grad_buffer().data(), true);
    }
    if (pb.requires_grad) {
      kernels::gemm(Trans::kYes, Trans::kNo, n, k, m, self.grad.data(), pa.data.data(),
                    pb.grad_buffer().data(), true);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return make_result<T>({c, r}, std::move(out), {a}, "transpose", [r, c](Node<T>& self) {
    auto& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "sub", [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    // Read both inputs before writing: a and b may be the same node.
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {a}, "scale", [factor](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (bias.size() != cols) {
    throw ShapeMismatch("add_bias: bias " + shape_str(bias.shape()) + " for input " +
                        shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.data()[c];
  }
  return make_result<T>(x.shape(), std::move(out), {x, bias}, "add_bias",
                        [rows, cols](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (px.requires_grad) {
                            auto g = px.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                            col_sum_into<T>(self.grad, rows, cols, pb.grad_buffer());
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  return add_bias(matmul(x, w), bias);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return make_result<T>({1}, {s}, {a}, "sum", [](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a, "sigmoid",
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(
      a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeMismatch("softmax axis " + std::to_string(axis) + " for " + shape_str(x.shape()));
  }
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  std::vector<T> out(x.size());
  if (inner == 1) {
    kernels::softmax_rows(x.data().data(), out.data(), outer, n);
  } else {
    const auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          out[base + j * inner] = std::exp(in[base + j * inner] - mx);
          total += out[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
      }
    }
  }
  return make_result<T>(s, std::move(out), {x}, "softmax", [outer, inner, n](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) {
          dot += self.grad[base + j * inner] * self.data[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t at = base + j * inner;
          g[at] += self.data[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores) {
  if (scores.rank() < 2 || scores.dim(scores.rank() - 1) != scores.dim(scores.rank() - 2)) {
    throw ShapeMismatch("causal_mask expects trailing square matrices, got " +
                        shape_str(scores.shape()));
  }
  const std::size_t L = scores.cols();
  const std::size_t mats = scores.size() / (L * L);
  std::vector<T> out(scores.data().begin(), scores.data().end());
  for (std::size_t m = 0; m < mats; ++m) {
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = i + 1; j < L; ++j) out[m * L * L + i * L + j] = -std::numeric_limits<T>::infinity();
    }
  }
  return make_result<T>(
      scores.shape(), std::move(out), {scores}, "causal_mask",
      [L, mats](Node<T>& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t m = 0; m < mats; ++m) {
          for (std::size_t i = 0; i < L; ++i) {
            for (std::size_t j = 0; j <= i; ++j) g[m * L * L + i * L + j] += self.grad[m * L * L + i * L + j];
          }
        }
      },
      /*allow_neg_inf=*/true);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t cols = x.cols();
  const std::size_t rows = x.size() / std::max<std::size_t>(cols, 1);
  if (cols == 0 || gain.size() != cols || bias.size() != cols) {
    throw ShapeMismatch("layer_norm: input " + shape_str(x.shape()) + ", gain " +
                        shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  std::vector<T> out(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  kernels::layer_norm_rows(x.data().data(), gain.data().data(), bias.data().data(), eps,
                           out.data(), xhat->data(), inv_std->data(), rows, cols);
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
                        [rows, cols, xhat, inv_std](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          if (px.requires_grad) {
                            kernels::layer_norm_rows_backward(
                                self.grad.data(), pg.data.data(), xhat->data(), inv_std->data(),
                                px.grad_buffer().data(), rows, cols);
                          }
                          if (pg.requires_grad) {
                            auto g = pg.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cols; ++c) {
                                g[c] += self.grad[r * cols + c] * (*xhat)[r * cols + c];
                              }
                            }
                          }
                          if (pb.requires_grad) {
                            col_sum_into<T>(self.grad, rows, cols, pb.grad_buffer());
                          }
                        });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const TokenId> ids) {
  require_matrix(table, "embedding_lookup");
  const std::size_t V = table.dim(0), d = table.dim(1);
  std::vector<TokenId> rows(ids.begin(), ids.end());
  std::vector<T> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= V) {
      throw BadId("embedding id " + std::to_string(rows[i]) + " outside table of " +
                  std::to_string(V) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const std::size_t n = rows.size();
  return make_result<T>({n, d}, std::move(out), {table}, "embedding",
                        [rows = std::move(rows), d](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < rows.size(); ++i) {
                            const std::size_t base = static_cast<std::size_t>(rows[i]) * d;
                            for (std::size_t c = 0; c < d; ++c) g[base + c] += self.grad[i * d + c];
                          }
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, CounterRng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw BadRate("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = x.data()[i] * (*mask)[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "dropout", [mask](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets,
                        TokenId ignore_id) {
  const std::size_t N = logits.rows(), V = logits.cols();
  if (targets.size() != N) {
    throw ShapeMismatch("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(N) + " logit rows");
  }
  auto probs = std::make_shared<std::vector<T>>(N * V);
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  double total = 0;
  std::size_t count = 0;
  const auto x = logits.data();
  for (std::size_t t = 0; t < N; ++t) {
    if (tgt[t] == ignore_id) continue;
    if (tgt[t] < 0 || static_cast<std::size_t>(tgt[t]) >= V) {
      throw BadId("target id " + std::to_string(tgt[t]) + " outside " + std::to_string(V) +
                  " classes");
    }
    const T* row = x.data() + t * V;
    T mx = *std::max_element(row, row + V);
    double z = 0;
    for (std::size_t c = 0; c < V; ++c) z += std::exp(static_cast<double>(row[c] - mx));
    const double log_z = std::log(z) + mx;
    total += log_z - row[tgt[t]];
    for (std::size_t c = 0; c < V; ++c) {
      (*probs)[t * V + c] = static_cast<T>(std::exp(row[c] - log_z));
    }
    ++count;
  }
  if (count == 0) throw AllIgnored();
  const T loss = static_cast<T>(total / static_cast<double>(count));
  return make_result<T>({1}, {loss}, {logits}, "cross_entropy",
                        [probs, tgt = std::move(tgt), ignore_id, count, V](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          const T w = self.grad[0] / static_cast<T>(count);
                          for (std::size_t t = 0; t < tgt.size(); ++t) {
                            if (tgt[t] == ignore_id) continue;
                            for (std::size_t c = 0; c < V; ++c) g[t * V + c] += w * (*probs)[t * V + c];
                            g[t * V + static_cast<std::size_t>(tgt[t])] -= w;
                          }
                        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 1) require_matrix(x, "slice_cols");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (begin > end || end > cols) throw ShapeMismatch("slice_cols range out of bounds");
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * cols + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  Shape shape = x.rank() == 1 ? Shape{w} : Shape{rows, w};
  return make_result<T>(std::move(shape), std::move(out), {x}, "slice_cols",
                        [rows, cols, begin, w](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < w; ++c) g[r * cols + begin + c] += self.grad[r * w + c];
                          }
                        });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin > end || end > rows) throw ShapeMismatch("slice_rows range out of bounds");
  std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                     x.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return make_result<T>({end - begin, cols}, std::move(out), {x}, "slice_rows",
                        [begin, cols](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * cols + i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != rows) throw ShapeMismatch("concat_cols row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(rows * total);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(parts[i].data().begin() + static_cast<std::ptrdiff_t>(r * widths[i]), widths[i],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    }
    off += widths[i];
  }
  return make_result_n<T>({rows, total}, std::move(out), parts, "concat_cols",
                          [rows, total, widths](Node<T>& self) {
                            std::size_t off = 0;
                            for (std::size_t i = 0; i < widths.size(); ++i) {
                              auto& p = *self.parents[i];
                              if (p.requires_grad) {
                                auto g = p.grad_buffer();
                                for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t c = 0; c < widths[i]; ++c) {
                                    g[r * widths[i] + c] += self.grad[r * total + off + c];
                                  }
                                }
                              }
                              off += widths[i];
                            }
                          });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeMismatch("concat_rows column counts differ");
    rows += p.rows();
    sizes.push_back(p.size());
  }
  std::vector<T> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result_n<T>({rows, cols}, std::move(out), parts, "concat_rows",
                          [sizes](Node<T>& self) {
                            std::size_t off = 0;
                            for (std::size_t i = 0; i < sizes.size(); ++i) {
                              auto& p = *self.parents[i];
                              if (p.requires_grad) {
                                auto g = p.grad_buffer();
                                for (std::size_t j = 0; j < sizes[i]; ++j) g[j] += self.grad[off + j];
                              }
                              off += sizes[i];
                            }
                          });
}

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(trans_b ? 2 : 1)) {
    throw ShapeMismatch("batched_matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                        (trans_b ? "^T" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  const Trans tb = trans_b ? Trans::kYes : Trans::kNo;
  std::vector<T> out(batch * m * n);
  kernels::batched_gemm(Trans::kNo, tb, batch, m, n, k, a.data().data(), b.data().data(),
                        out.data(), false);
  return make_result<T>(
      {batch, m, n}, std::move(out), {a, b}, "batched_matmul",
      [batch, m, n, k, trans_b](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          // dA = dC op(B)^T
          kernels::batched_gemm(Trans::kNo, trans_b ? Trans::kNo : Trans::kYes, batch, m, k, n,
                                self.grad.data(), pb.data.data(), pa.grad_buffer().data(), true);
        }
        if (pb.requires_grad) {
          if (trans_b) {
            kernels::batched_gemm(Trans::kYes, Trans::kNo, batch, n, k, m, self.grad.data(),
                                  pa.data.data(), pb.grad_buffer().data(), true);
          } else {
            kernels::batched_gemm(Trans::kYes, Trans::kNo, batch, k, n, m, pa.data.data(),
                                  self.grad.data(), pb.grad_buffer().data(), true);
          }
        }
      });
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t n_seq, std::size_t seq_len,
                      std::size_t n_heads) {
  require_matrix(x, "split_heads");
  if (n_heads == 0 || x.dim(0) != n_seq * seq_len || x.dim(1) % n_heads != 0) {
    throw ShapeMismatch("split_heads: " + shape_str(x.shape()) + " into " +
                        std::to_string(n_seq) + " sequences of " + std::to_string(seq_len) +
                        " with " + std::to_string(n_heads) + " heads");
  }
  const std::size_t width = x.dim(1), d = width / n_heads;
  const auto in = x.data();
  std::vector<T> out(x.size());
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t t = 0; t < seq_len; ++t) {
        std::copy_n(in.data() + (s * seq_len + t) * width + h * d, d,
                    out.data() + ((s * n_heads + h) * seq_len + t) * d);
      }
    }
  }
  return make_result<T>({n_seq * n_heads, seq_len, d}, std::move(out), {x}, "split_heads",
                        [n_seq, seq_len, n_heads, width, d](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          for (std::size_t s = 0; s < n_seq; ++s) {
                            for (std::size_t h = 0; h < n_heads; ++h) {
                              for (std::size_t t = 0; t < seq_len; ++t) {
                                const T* src = self.grad.data() + ((s * n_heads + h) * seq_len + t) * d;
                                T* dst = g.data() + (s * seq_len + t) * width + h * d;
                                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t n_seq) {
  if (x.rank() != 3 || n_seq == 0 || x.dim(0) % n_seq != 0) {
    throw ShapeMismatch("merge_heads: " + shape_str(x.shape()) + " over " +
                        std::to_string(n_seq) + " sequences");
  }
  const std::size_t n_heads = x.dim(0) / n_seq, seq_len = x.dim(1), d = x.dim(2);
  const std::size_t width = n_heads * d;
  const auto in = x.data();
  std::vector<T> out(x.size());
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t t = 0; t < seq_len; ++t) {
        std::copy_n(in.data() + ((s * n_heads + h) * seq_len + t) * d, d,
                    out.data() + (s * seq_len + t) * width + h * d);
      }
    }
  }
  return make_result<T>({n_seq * seq_len, width}, std::move(out), {x}, "merge_heads",
                        [n_seq, seq_len, n_heads, width, d](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          for (std::size_t s = 0; s < n_seq; ++s) {
                            for (std::size_t h = 0; h < n_heads; ++h) {
                              for (std::size_t t = 0; t < seq_len; ++t) {
                                const T* src = self.grad.data() + (s * seq_len + t) * width + h * d;
                                T* dst = g.data() + ((s * n_heads + h) * seq_len + t) * d;
                                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> sdpa(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal) {
  require_matrix(q, "sdpa");
  require_matrix(k, "sdpa");
  require_matrix(v, "sdpa");
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0) || q.dim(0) != k.dim(0)) {
    throw ShapeMismatch("sdpa: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                        ", V " + shape_str(v.shape()));
  }
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  auto scores = scale(matmul_nt(q, k), inv_sqrt_dk);
  if (causal) scores = causal_mask(scores);
  return matmul(softmax(scores, 1), v);
}

template <typename T>
std::vector<double> log_softmax_rows(std::span<const T> logits, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = logits.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - log_z;
  }
  return out;
}

#define MATHLM_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> tanh(const Tensor<T>&);                                                   \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> causal_mask(const Tensor<T>&);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const TokenId>);             \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, CounterRng&);                     \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const TokenId>, TokenId);       \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                  \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                  \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&, bool);                 \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t, std::size_t, std::size_t);     \
  template Tensor<T> merge_heads(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> sdpa(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool);         \
  template std::vector<double> log_softmax_rows(std::span<const T>, std::size_t, std::size_t);

MATHLM_INSTANTIATE_OPS(float)
MATHLM_INSTANTIATE_OPS(double)

}  // namespace mathlm
