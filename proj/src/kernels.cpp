#include "mathlm/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

namespace mathlm::kernels {

namespace {

std::atomic<int> g_threads{1};

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// Packed gemm in the usual three-level blocking: a KC-deep slab of B is
// packed into NR-wide column panels, an MC x KC block of A into MR-row
// panels, and an MR x NR register tile of C is accumulated per micro-kernel
// call. Every C element sums its k terms in ascending order, one KC slab
// after another, whatever the thread count.
template <typename T>
struct Blocking {
  static constexpr std::size_t kLanes = 64 / sizeof(T);
  static constexpr std::size_t kNr = 2 * kLanes;
  static constexpr std::size_t kMr = 8;
  static constexpr std::size_t kKc = 256;
  static constexpr std::size_t kMc = 96;
};

template <typename T>
using Vec [[gnu::vector_size(64)]] = T;

template <typename T>
Vec<T> load_vec(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <typename T>
void store_vec(T* p, Vec<T> v) {
  std::memcpy(p, &v, sizeof v);
}

template <typename T>
T element(const T* x, Trans t, std::size_t rows, std::size_t cols, std::size_t i, std::size_t j) {
  // Element (i, j) of op(X), op(X) being rows x cols.
  return t == Trans::kNo ? x[i * cols + j] : x[j * rows + i];
}

// B slab rows [p0, p0+kc) packed as ceil(n/NR) panels of kc x NR, zero padded.
template <typename T>
void pack_b(const T* b, Trans tb, std::size_t k, std::size_t n, std::size_t p0, std::size_t kc,
            T* out) {
  constexpr std::size_t nr = Blocking<T>::kNr;
  for (std::size_t j0 = 0; j0 < n; j0 += nr) {
    const std::size_t w = std::min(nr, n - j0);
    for (std::size_t p = 0; p < kc; ++p) {
      T* dst = out + (j0 / nr) * kc * nr + p * nr;
      if (tb == Trans::kNo) {
        std::memcpy(dst, b + (p0 + p) * n + j0, w * sizeof(T));
      } else {
        for (std::size_t j = 0; j < w; ++j) dst[j] = b[(j0 + j) * k + p0 + p];
      }
      std::fill(dst + w, dst + nr, T(0));
    }
  }
}

// A block rows [i0, i0+mc), cols [p0, p0+kc) packed as MR-row panels, p-major.
template <typename T>
void pack_a(const T* a, Trans ta, std::size_t m, std::size_t k, std::size_t i0, std::size_t mc,
            std::size_t p0, std::size_t kc, T* out) {
  constexpr std::size_t mr = Blocking<T>::kMr;
  for (std::size_t r0 = 0; r0 < mc; r0 += mr) {
    const std::size_t h = std::min(mr, mc - r0);
    T* panel = out + (r0 / mr) * kc * mr;
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < mr; ++r) {
        panel[p * mr + r] = r < h ? element(a, ta, m, k, i0 + r0 + r, p0 + p) : T(0);
      }
    }
  }
}

template <typename T>
void micro_kernel(std::size_t kc, const T* ap, const T* bp, T* c, std::size_t ldc, std::size_t h,
                  std::size_t w, bool accumulate) {
  constexpr std::size_t mr = Blocking<T>::kMr;
  constexpr std::size_t nr = Blocking<T>::kNr;
  constexpr std::size_t lanes = Blocking<T>::kLanes;
  Vec<T> acc[mr][2] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const Vec<T> b0 = load_vec(bp + p * nr);
    const Vec<T> b1 = load_vec(bp + p * nr + lanes);
#pragma GCC unroll 8
    for (std::size_t r = 0; r < mr; ++r) {
      const T av = ap[p * mr + r];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  alignas(64) T tile[nr];
  for (std::size_t r = 0; r < h; ++r) {
    store_vec<T>(tile, acc[r][0]);
    store_vec<T>(tile + lanes, acc[r][1]);
    T* crow = c + r * ldc;
    if (accumulate) {
      for (std::size_t j = 0; j < w; ++j) crow[j] += tile[j];
    } else {
      for (std::size_t j = 0; j < w; ++j) crow[j] = tile[j];
    }
  }
}

// C rows [i0, i0+mc) for one packed B slab.
template <typename T>
void gemm_block(const T* a, Trans ta, const T* bpack, std::size_t m, std::size_t n,
                std::size_t k, std::size_t i0, std::size_t mc, std::size_t p0, std::size_t kc,
                T* c, bool accumulate, std::vector<T>& apack) {
  constexpr std::size_t mr = Blocking<T>::kMr;
  constexpr std::size_t nr = Blocking<T>::kNr;
  apack.resize(((mc + mr - 1) / mr) * mr * kc);
  pack_a(a, ta, m, k, i0, mc, p0, kc, apack.data());
  for (std::size_t j0 = 0; j0 < n; j0 += nr) {
    const T* bp = bpack + (j0 / nr) * kc * nr;
    for (std::size_t r0 = 0; r0 < mc; r0 += mr) {
      micro_kernel(kc, apack.data() + (r0 / mr) * kc * mr, bp, c + (i0 + r0) * n + j0, n,
                   std::min(mr, mc - r0), std::min(nr, n - j0), accumulate);
    }
  }
}

template <typename T>
void gemm_impl(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
               const T* b, T* c, bool accumulate, int threads) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  using B = Blocking<T>;
  const std::size_t panels = (n + B::kNr - 1) / B::kNr;
  std::vector<T> bpack(panels * B::kNr * std::min(k, B::kKc));
  const std::size_t blocks = (m + B::kMc - 1) / B::kMc;
  const bool parallel = threads > 1 && blocks > 1 && m * n * k >= kParallelWork;
  for (std::size_t p0 = 0; p0 < k; p0 += B::kKc) {
    const std::size_t kc = std::min(B::kKc, k - p0);
    pack_b(b, tb, k, n, p0, kc, bpack.data());
    const bool acc = accumulate || p0 > 0;
    if (!parallel) {
      std::vector<T> apack;
      for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t i0 = blk * B::kMc;
        gemm_block(a, ta, bpack.data(), m, n, k, i0, std::min(B::kMc, m - i0), p0, kc, c, acc,
                   apack);
      }
      continue;
    }
#pragma omp parallel num_threads(threads)
    {
      std::vector<T> apack;
#pragma omp for schedule(static)
      for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t i0 = blk * B::kMc;
        gemm_block(a, ta, bpack.data(), m, n, k, i0, std::min(B::kMc, m - i0), p0, kc, c, acc,
                   apack);
      }
    }
  }
}

}  // namespace

void set_num_threads(int n) { g_threads = std::max(1, n); }

int num_threads() { return g_threads; }

void configure_threads_from_env() {
  if (const char* env = std::getenv("MATHLM_THREADS")) {
    try {
      set_num_threads(std::stoi(env));
    } catch (...) {
      set_num_threads(1);
    }
  }
}

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  gemm_impl(ta, tb, m, n, k, a, b, c, accumulate, g_threads);
}

template <typename T>
void batched_gemm(Trans ta, Trans tb, std::size_t batch, std::size_t m, std::size_t n,
                  std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const int threads = g_threads;
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && batch > 1 && batch * m * n * k >= kParallelWork)
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_impl(ta, tb, m, n, k, a + i * m * k, b + i * k * n, c + i * m * n, accumulate, 1);
  }
}

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows, std::size_t cols) {
  const int threads = g_threads;
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && rows * cols >= kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in + r * cols;
    T* y = out + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x[c]);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    const T inv = T(1) / sum;
    for (std::size_t c = 0; c < cols; ++c) y[c] *= inv;
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T eps, T* y, T* xhat, T* inv_std,
                     std::size_t rows, std::size_t cols) {
  const int threads = g_threads;
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && rows * cols >= kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    double mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = static_cast<T>((xr[c] - mean) * is);
      xhat[r * cols + c] = h;
      y[r * cols + c] = gain[c] * h + bias[c];
    }
  }
}

template <typename T>
void layer_norm_rows_backward(const T* dy, const T* gain, const T* xhat, const T* inv_std, T* dx,
                              std::size_t rows, std::size_t cols) {
  const int threads = g_threads;
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && rows * cols >= kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = dy + r * cols;
    const T* h = xhat + r * cols;
    double mean_d = 0, mean_dh = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = static_cast<double>(g[c]) * gain[c];
      mean_d += d;
      mean_dh += d * h[c];
    }
    mean_d /= static_cast<double>(cols);
    mean_dh /= static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = static_cast<double>(g[c]) * gain[c];
      dx[r * cols + c] += static_cast<T>(inv_std[r] * (d - mean_d - h[c] * mean_dh));
    }
  }
}

namespace ref {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
        const T bv = tb == Trans::kNo ? b[p * n + j] : b[j * k + p];
        sum += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

template <typename T>
void batched_gemm(Trans ta, Trans tb, std::size_t batch, std::size_t m, std::size_t n,
                  std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < batch; ++i) {
    ref::gemm(ta, tb, m, n, k, a + i * m * k, b + i * k * n, c + i * m * n, accumulate);
  }
}

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = in[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[r * cols + c]);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(in[r * cols + c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(in[r * cols + c] - mx) / sum;
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T eps, T* y, T* xhat, T* inv_std,
                     std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    long double mean = 0, var = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += x[r * cols + c];
    mean /= cols;
    for (std::size_t c = 0; c < cols; ++c) var += (x[r * cols + c] - mean) * (x[r * cols + c] - mean);
    var /= cols;
    inv_std[r] = static_cast<T>(1.0L / std::sqrt(var + eps));
    for (std::size_t c = 0; c < cols; ++c) {
      xhat[r * cols + c] = static_cast<T>((x[r * cols + c] - mean) / std::sqrt(var + eps));
      y[r * cols + c] = gain[c] * xhat[r * cols + c] + bias[c];
    }
  }
}

}  // namespace ref

#define MATHLM_INSTANTIATE_KERNELS(T)                                                          \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                        T*, bool);                                                             \
  template void batched_gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t,           \
                                std::size_t, const T*, const T*, T*, bool);                    \
  template void softmax_rows<T>(const T*, T*, std::size_t, std::size_t);                       \
  template void layer_norm_rows<T>(const T*, const T*, const T*, T, T*, T*, T*, std::size_t,   \
                                   std::size_t);                                               \
  template void layer_norm_rows_backward<T>(const T*, const T*, const T*, const T*, T*,        \
                                            std::size_t, std::size_t);                         \
  namespace ref {                                                                              \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                        T*, bool);                                                             \
  template void batched_gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t,           \
                                std::size_t, const T*, const T*, T*, bool);                    \
  template void softmax_rows<T>(const T*, T*, std::size_t, std::size_t);                       \
  template void layer_norm_rows<T>(const T*, const T*, const T*, T, T*, T*, T*, std::size_t,   \
                                   std::size_t);                                               \
  }

MATHLM_INSTANTIATE_KERNELS(float)
MATHLM_INSTANTIATE_KERNELS(double)

}  // namespace mathlm::kernels
