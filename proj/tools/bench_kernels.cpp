// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "mcae/kernels.hpp"

using namespace mcae;

namespace {

Mat random_mat(Index rows, Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<Real> u(-1, 1);
    Mat m(rows, cols);
    for (Real& v : m.values()) v = u(rng);
    return m;
}

template <Mat (*F)(const Mat&, const Mat&)>
void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<Index>(state.range(0));
    const Mat a = random_mat(n, n, 1), b = random_mat(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <Mat (*F)(const Mat&, const Mat&)>
void bm_matmul_nt(benchmark::State& state) {
    const auto n = static_cast<Index>(state.range(0));
    const Mat a = random_mat(n, n, 1), b = random_mat(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

void bm_softmax(benchmark::State& state) {
    const auto n = static_cast<Index>(state.range(0));
    const Mat x = random_mat(n, n, 3);
    for (auto _ : state) {
        Mat y = x;
        kernels::softmax_rows(y);
        benchmark::DoNotOptimize(y.data());
    }
}

void bm_softmax_reference(benchmark::State& state) {
    const auto n = static_cast<Index>(state.range(0));
    const Mat x = random_mat(n, n, 3);
    for (auto _ : state) {
        Mat y = x;
        kernels::reference::softmax_rows(y);
        benchmark::DoNotOptimize(y.data());
    }
}

void bm_layer_norm(benchmark::State& state) {
    const auto n = static_cast<Index>(state.range(0));
    const Mat x = random_mat(n, 192, 4), g(1, 192, 1.0), b(1, 192, 0.0);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::layer_norm(x, g, b, nullptr));
}

void bm_layer_norm_reference(benchmark::State& state) {
    const auto n = static_cast<Index>(state.range(0));
    const Mat x = random_mat(n, 192, 4), g(1, 192, 1.0), b(1, 192, 0.0);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::layer_norm(x, g, b));
}

}  // namespace

BENCHMARK(bm_matmul<kernels::matmul>)->Name("matmul/parallel")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_matmul<kernels::reference::matmul>)->Name("matmul/reference")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_matmul_nt<kernels::matmul_nt>)->Name("matmul_nt/parallel")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_matmul_nt<kernels::reference::matmul_nt>)->Name("matmul_nt/reference")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(bm_softmax)->Name("softmax_rows/parallel")->Arg(256);
BENCHMARK(bm_softmax_reference)->Name("softmax_rows/reference")->Arg(256);
BENCHMARK(bm_layer_norm)->Name("layer_norm/parallel")->Arg(256);
BENCHMARK(bm_layer_norm_reference)->Name("layer_norm/reference")->Arg(256);

BENCHMARK_MAIN();
