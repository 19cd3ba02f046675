#pragma once

// Dense kernels used by the tensor engine. Each kernel has an OpenMP version
// (namespace kernels) and a plain serial version (namespace kernels::ref)
// that tests and the benchmark compare against.
//
// Every parallel kernel partitions its *outputs* across threads and keeps a
// fixed accumulation order inside each output, so results are bit-identical
// for any thread count.

#include <cstddef>

namespace mathlm::kernels {

/// Threads used by the parallel kernels. Default 1; `MATHLM_THREADS` overrides
/// when configure_threads_from_env() is called.
void set_num_threads(int n);
int num_threads();
void configure_threads_from_env();

enum class Trans { kNo, kYes };

/// C[m x n] (+)= op(A) * op(B), row-major. op(A) is m x k, op(B) is k x n.
/// A is stored m x k (kNo) or k x m (kYes); B is k x n (kNo) or n x k (kYes).
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

/// `batch` independent products; item i reads A + i*m*k, B + i*k*n and
/// writes C + i*m*n. Parallel over items.
template <typename T>
void batched_gemm(Trans ta, Trans tb, std::size_t batch, std::size_t m, std::size_t n,
                  std::size_t k, const T* a, const T* b, T* c, bool accumulate);

/// Row-wise softmax over `cols`, in place safe (in may alias out).
template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows, std::size_t cols);

/// Row-wise layer normalization. Writes the normalized pre-affine values to
/// `xhat` and per-row 1/sqrt(var+eps) to `inv_std`.
template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T eps, T* y, T* xhat, T* inv_std,
                     std::size_t rows, std::size_t cols);

/// Gradient of layer_norm_rows wrt x, accumulated into dx.
template <typename T>
void layer_norm_rows_backward(const T* dy, const T* gain, const T* xhat, const T* inv_std, T* dx,
                              std::size_t rows, std::size_t cols);

namespace ref {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

template <typename T>
void batched_gemm(Trans ta, Trans tb, std::size_t batch, std::size_t m, std::size_t n,
                  std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows, std::size_t cols);

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T eps, T* y, T* xhat, T* inv_std,
                     std::size_t rows, std::size_t cols);

}  // namespace ref

}  // namespace mathlm::kernels
