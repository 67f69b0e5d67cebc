#include <benchmark/benchmark.h>

#include <cmath>

#include "sida/perturb.hpp"

using namespace sida;

namespace {

ImageU8 textured(int size) {
    ImageU8 img = ImageU8::filled(size, size, 3, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            img.at(y, x, 0) = static_cast<std::uint8_t>(128 + 100 * std::sin(0.2 * x));
            img.at(y, x, 1) = static_cast<std::uint8_t>(128 + 100 * std::cos(0.15 * y));
            img.at(y, x, 2) = static_cast<std::uint8_t>((x * y) % 255);
        }
    }
    return img;
}

}  // namespace

static void BM_JpegRoundtrip(benchmark::State& state) {
    ImageU8 img = textured(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(jpeg_roundtrip(img, 70).pixels.data());
    }
}
BENCHMARK(BM_JpegRoundtrip)->Arg(64)->Arg(256);

static void BM_ResizeCycle(benchmark::State& state) {
    ImageU8 img = textured(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(resize_cycle(img, 0.5).pixels.data());
    }
}
BENCHMARK(BM_ResizeCycle)->Arg(64)->Arg(256);

static void BM_GaussianNoise(benchmark::State& state) {
    ImageU8 img = textured(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(gaussian_noise(img, 10.0, 7).pixels.data());
    }
}
BENCHMARK(BM_GaussianNoise)->Arg(64)->Arg(256);
