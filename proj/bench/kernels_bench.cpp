#include <benchmark/benchmark.h>

#include <random>

#include "sweettok/kernels.hpp"

namespace k = sweettok::kernels;
using sweettok::Tensor;

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& x : t.values()) x = n(rng);
  return t;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  Tensor c;
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::gemm(a, k::Trans::kNo, b, k::Trans::kNo, c);
    } else {
      k::serial::gemm(a, k::Trans::kNo, b, k::Trans::kNo, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] =
      benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  k::AttentionShape s;
  s.groups = 1;
  s.q_len = s.kv_len = static_cast<std::size_t>(state.range(0));
  s.heads = 8;
  s.head_dim = 64;
  const Tensor q = random_tensor(s.q_len, s.width(), 3), kk = random_tensor(s.kv_len, s.width(), 4),
               v = random_tensor(s.kv_len, s.width(), 5);
  Tensor out;
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::attention_forward(q, kk, v, s, out, nullptr);
    } else {
      k::serial::attention_forward(q, kk, v, s, out, nullptr);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_SquaredDistances(benchmark::State& state) {
  const auto codes_n = static_cast<std::size_t>(state.range(0));
  const Tensor z = random_tensor(1280, 256, 6), codes = random_tensor(codes_n, 256, 7);
  Tensor out;
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::squared_distances(z, codes, 0, codes_n, out);
    } else {
      k::serial::squared_distances(z, codes, 0, codes_n, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Attention<false>)->Name("attention/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_Attention<true>)->Name("attention/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_SquaredDistances<false>)->Name("squared_distances/serial")->Arg(1024)->Arg(4096);
BENCHMARK(BM_SquaredDistances<true>)->Name("squared_distances/parallel")->Arg(1024)->Arg(4096);

BENCHMARK_MAIN();
