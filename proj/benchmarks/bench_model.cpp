#include <benchmark/benchmark.h>

#include "sida/losses.hpp"
#include "sida/trainer.hpp"

using namespace sida;

namespace {

SidaConfig toy_config() {
    SidaConfig cfg;
    cfg.vlm.d_model = 64;
    cfg.vlm.n_layers = 2;
    cfg.vlm.n_heads = 4;
    cfg.vlm.d_ff = 256;
    cfg.vlm.image_size = 64;
    cfg.vlm.patch_size = 8;
    cfg.vlm.max_seq_len = 256;
    return cfg;
}

ImageF bench_image(int size) {
    ImageF img;
    img.height = img.width = size;
    img.data.resize(static_cast<std::size_t>(size) * size * 3);
    Rng rng(4);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

}  // namespace

static void BM_FullForward(benchmark::State& state) {
    Rng rng(1);
    SidaModel model(toy_config(), rng);
    PromptEncoding prompt = model.encode_default_prompt();
    ImageF img = bench_image(64);
    FullForwardOptions opts;
    opts.force_mask = true;
    for (auto _ : state) {
        Tape t(false);
        SidaOutput out = model.full_forward(t, img, prompt, opts);
        benchmark::DoNotOptimize(out.det_logits.values().data());
    }
}
BENCHMARK(BM_FullForward);

static void BM_TrainStep(benchmark::State& state) {
    Rng rng(2);
    SidaModel model(toy_config(), rng);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.grad_accum_steps = 1;
    cfg.batch_size = 2;
    Trainer trainer(model, cfg);
    Rng img_rng(3);
    std::vector<Sample> batch;
    for (int i = 0; i < 2; ++i) {
        Sample s;
        s.id = "b" + std::to_string(i);
        s.image = bench_image(64);
        s.label = Label::tampered;
        std::vector<double> m(64 * 64, 0.0);
        for (int j = 0; j < 64 * 32; ++j) m[j] = 1.0;
        s.mask = Tensor::from({64, 64}, std::move(m));
        batch.push_back(std::move(s));
    }
    trainer.set_stage(1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(trainer.train_step(batch, 1).total);
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_DecodeMask(benchmark::State& state) {
    Rng rng(5);
    SidaModel model(toy_config(), rng);
    Tape warm(false);
    ImageF img = bench_image(64);
    Tensor feats = model.encode_image(warm, img);
    Tensor h = Tensor::randn({64}, rng);
    for (auto _ : state) {
        Tape t(false);
        benchmark::DoNotOptimize(model.decode_mask(t, h, feats).values().data());
    }
}
BENCHMARK(BM_DecodeMask);
