// OpenMP kernels against their serial reference versions.

#include <benchmark/benchmark.h>

#include <vector>

#include "zhoi/kernels.hpp"
#include "zhoi/rng.hpp"

namespace {

using Gemm = void (*)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  zhoi::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

// Square problems: m = k = n = state.range(0).
template <Gemm F>
void BM_Gemm(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(s * s, 1), b = random_buffer(s * s, 2);
  std::vector<double> c(s * s);
  for (auto _ : state) {
    F(a.data(), b.data(), c.data(), s, s, s, false);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * s * s * s, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

// Grid side state.range(0), 64 channels: the encoder's local block shape.
template <bool Parallel>
void BM_Depthwise(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const std::size_t ch = 64;
  const auto x = random_buffer(side * side * ch, 3), w = random_buffer(9 * ch, 4);
  std::vector<double> y(side * side * ch);
  for (auto _ : state) {
    if constexpr (Parallel) {
      zhoi::kernels::depthwise3x3(x.data(), w.data(), y.data(), side, side, ch);
    } else {
      zhoi::kernels::reference::depthwise3x3(x.data(), w.data(), y.data(), side, side, ch);
    }
    benchmark::DoNotOptimize(y.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side * ch));
}

}  // namespace

BENCHMARK(BM_Gemm<zhoi::kernels::gemm_nn>)->Name("gemm_nn/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<zhoi::kernels::reference::gemm_nn>)->Name("gemm_nn/reference")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<zhoi::kernels::gemm_nt>)->Name("gemm_nt/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<zhoi::kernels::reference::gemm_nt>)->Name("gemm_nt/reference")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<zhoi::kernels::gemm_tn>)->Name("gemm_tn/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<zhoi::kernels::reference::gemm_tn>)->Name("gemm_tn/reference")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Depthwise<true>)->Name("depthwise3x3/openmp")->Arg(8)->Arg(16)->Arg(32)->Arg(64);
BENCHMARK(BM_Depthwise<false>)->Name("depthwise3x3/reference")->Arg(8)->Arg(16)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
