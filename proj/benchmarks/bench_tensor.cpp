#include <benchmark/benchmark.h>

#include "sida/tensor.hpp"

using namespace sida;

static void BM_Matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(1);
    Tensor a = Tensor::randn({n, n}, rng);
    Tensor b = Tensor::randn({n, n}, rng);
    for (auto _ : state) {
        Tape t(false);
        benchmark::DoNotOptimize(t.matmul(a, b).values().data());
    }
    state.SetItemsProcessed(state.iterations() * 2L * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_MatmulBackward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(1);
    Tensor a = Tensor::randn({n, n}, rng, 1.0, true);
    Tensor b = Tensor::randn({n, n}, rng, 1.0, true);
    for (auto _ : state) {
        Tape t;
        Tensor loss = t.sum(t.matmul(a, b));
        t.backward(loss);
        a.zero_grad();
        b.zero_grad();
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64);

static void BM_Softmax(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0));
    Rng rng(2);
    Tensor x = Tensor::randn({rows, rows}, rng, 3.0);
    for (auto _ : state) {
        Tape t(false);
        benchmark::DoNotOptimize(t.softmax(x, 1).values().data());
    }
}
BENCHMARK(BM_Softmax)->Arg(64)->Arg(256);

static void BM_Layernorm(benchmark::State& state) {
    Rng rng(3);
    Tensor x = Tensor::randn({256, 64}, rng);
    Tensor g = Tensor::full({64}, 1.0);
    Tensor b = Tensor::zeros({64});
    for (auto _ : state) {
        Tape t(false);
        benchmark::DoNotOptimize(t.layernorm(x, g, b).values().data());
    }
}
BENCHMARK(BM_Layernorm);

BENCHMARK_MAIN();
