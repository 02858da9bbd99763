// Serial reference vs OpenMP kernels on the shapes the desk backbone and
// encoder actually produce.
#include <benchmark/benchmark.h>

#include "tml/kernels.hpp"
#include "tml/ops.hpp"
#include "tml/rng.hpp"

namespace {

using tml::kernels::GemmShape;

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  tml::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const GemmShape s{.m = state.range(0), .n = state.range(1), .k = state.range(2),
                    .trans_b = state.range(3) != 0};
  auto a = random_values(static_cast<std::size_t>(s.m * s.k), 1);
  auto b = random_values(static_cast<std::size_t>(s.k * s.n), 2);
  std::vector<float> c(static_cast<std::size_t>(s.m * s.n));
  for (auto _ : state) {
    if constexpr (Parallel) {
      tml::kernels::omp::gemm<float>(s, a, b, c);
    } else {
      tml::kernels::serial::gemm<float>(s, a, b, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * static_cast<double>(s.m * s.n * s.k),
                                                benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

// conv-as-gemm shapes: (C_out, B*Ho*Wo, C_in*9) for a 64-batch through
// 32/64/128-channel stages, plus an encoder projection (B*S, 3D, D).
#define GEMM_ARGS                                  \
  Args({32, 64 * 16 * 16, 32 * 9, 0})              \
      ->Args({64, 64 * 8 * 8, 64 * 9, 0})          \
      ->Args({128, 64 * 4 * 4, 128 * 9, 0})        \
      ->Args({64 * 16, 3 * 128, 128, 1})           \
      ->Unit(benchmark::kMillisecond)

BENCHMARK_TEMPLATE(BM_Gemm, false)->GEMM_ARGS;
BENCHMARK_TEMPLATE(BM_Gemm, true)->GEMM_ARGS;

template <bool Parallel>
void BM_Conv2dStep(benchmark::State& state) {
  const std::int64_t batch = state.range(0), ch = state.range(1), hw = state.range(2);
  tml::kernels::set_backend(Parallel ? tml::kernels::Backend::omp : tml::kernels::Backend::serial);
  tml::Tensor<float> x(tml::Shape{batch, ch, hw, hw}, random_values(static_cast<std::size_t>(batch * ch * hw * hw), 3));
  tml::Tensor<float> w(tml::Shape{ch, ch, 3, 3}, random_values(static_cast<std::size_t>(ch * ch * 9), 4), true);
  x.set_requires_grad(true);
  for (auto _ : state) {
    tml::Tape<float> tape;
    auto y = tml::ops::conv2d(tape, x, w, {.stride = 1, .padding = 1});
    auto loss = tml::ops::sum_all(tape, y);
    tape.backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
  }
  tml::kernels::set_backend(tml::kernels::Backend::omp);
}

BENCHMARK_TEMPLATE(BM_Conv2dStep, false)->Args({64, 32, 16})->Args({64, 128, 4})->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_Conv2dStep, true)->Args({64, 32, 16})->Args({64, 128, 4})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
