// Serial reference kernels against the OpenMP versions at shapes the models
// actually hit. Thread count is the second argument of the parallel cases.

#include <benchmark/benchmark.h>

#include <vector>

#include "mathlm/kernels.hpp"
#include "mathlm/rng.hpp"

namespace k = mathlm::kernels;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  mathlm::CounterRng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(2 * rng.uniform() - 1);
  return v;
}

// Rows of a 32-sequence batch of length 32 times a 512 x 512 projection.
void gemm_args(benchmark::internal::Benchmark* b) {
  for (long threads : {1, 2, 4}) {
    b->Args({1024, 512, 512, threads});
    b->Args({1024, 1024, 512, threads});
    b->Args({1024, 108, 512, threads});
  }
}

void BM_GemmRef(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto kk = static_cast<std::size_t>(state.range(2));
  const auto a = random_floats(m * kk, 1), b = random_floats(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    k::ref::gemm(k::Trans::kNo, k::Trans::kNo, m, n, kk, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * m * n * kk, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}
BENCHMARK(BM_GemmRef)->Args({1024, 512, 512})->Args({1024, 1024, 512})->Args({1024, 108, 512});

void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto kk = static_cast<std::size_t>(state.range(2));
  k::set_num_threads(static_cast<int>(state.range(3)));
  const auto a = random_floats(m * kk, 1), b = random_floats(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    k::gemm(k::Trans::kNo, k::Trans::kNo, m, n, kk, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * m * n * kk, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
  k::set_num_threads(1);
}
BENCHMARK(BM_Gemm)->Apply(gemm_args)->UseRealTime();

// Attention scores: 32 sequences x 4 heads, length 32, head width 16.
void BM_BatchedGemmRef(benchmark::State& state) {
  const std::size_t batch = 128, L = 32, d = 16;
  const auto q = random_floats(batch * L * d, 3), kt = random_floats(batch * L * d, 4);
  std::vector<float> s(batch * L * L);
  for (auto _ : state) {
    k::ref::batched_gemm(k::Trans::kNo, k::Trans::kYes, batch, L, L, d, q.data(), kt.data(), s.data(), false);
    benchmark::DoNotOptimize(s.data());
  }
}
BENCHMARK(BM_BatchedGemmRef);

void BM_BatchedGemm(benchmark::State& state) {
  const std::size_t batch = 128, L = 32, d = 16;
  k::set_num_threads(static_cast<int>(state.range(0)));
  const auto q = random_floats(batch * L * d, 3), kt = random_floats(batch * L * d, 4);
  std::vector<float> s(batch * L * L);
  for (auto _ : state) {
    k::batched_gemm(k::Trans::kNo, k::Trans::kYes, batch, L, L, d, q.data(), kt.data(), s.data(), false);
    benchmark::DoNotOptimize(s.data());
  }
  k::set_num_threads(1);
}
BENCHMARK(BM_BatchedGemm)->Arg(1)->Arg(2)->Arg(4)->UseRealTime();

void BM_SoftmaxRef(benchmark::State& state) {
  const std::size_t rows = 4096, cols = 108;
  const auto x = random_floats(rows * cols, 5);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    k::ref::softmax_rows(x.data(), y.data(), rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_SoftmaxRef);

void BM_Softmax(benchmark::State& state) {
  const std::size_t rows = 4096, cols = 108;
  k::set_num_threads(static_cast<int>(state.range(0)));
  const auto x = random_floats(rows * cols, 5);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    k::softmax_rows(x.data(), y.data(), rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
  k::set_num_threads(1);
}
BENCHMARK(BM_Softmax)->Arg(1)->Arg(2)->Arg(4)->UseRealTime();

void BM_LayerNormRef(benchmark::State& state) {
  const std::size_t rows = 1024, cols = 512;
  const auto x = random_floats(rows * cols, 6), g = random_floats(cols, 7), b = random_floats(cols, 8);
  std::vector<float> y(x.size()), xhat(x.size()), inv(rows);
  for (auto _ : state) {
    k::ref::layer_norm_rows(x.data(), g.data(), b.data(), 1e-5f, y.data(), xhat.data(), inv.data(), rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_LayerNormRef);

void BM_LayerNorm(benchmark::State& state) {
  const std::size_t rows = 1024, cols = 512;
  k::set_num_threads(static_cast<int>(state.range(0)));
  const auto x = random_floats(rows * cols, 6), g = random_floats(cols, 7), b = random_floats(cols, 8);
  std::vector<float> y(x.size()), xhat(x.size()), inv(rows);
  for (auto _ : state) {
    k::layer_norm_rows(x.data(), g.data(), b.data(), 1e-5f, y.data(), xhat.data(), inv.data(), rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
  k::set_num_threads(1);
}
BENCHMARK(BM_LayerNorm)->Arg(1)->Arg(2)->Arg(4)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
