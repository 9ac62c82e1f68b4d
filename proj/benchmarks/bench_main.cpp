#include <benchmark/benchmark.h>

#include "difforge/corpus.hpp"
#include "difforge/diffusion.hpp"
#include "difforge/mask_forge.hpp"
#include "difforge/metrics.hpp"
#include "difforge/nets.hpp"
#include "difforge/ops.hpp"

using namespace difforge;

namespace {

std::vector<ClassMask> corpus_masks(std::size_t n, std::size_t size) {
    corpus::CorpusSpec spec;
    spec.n_samples = n;
    spec.size = size;
    return corpus::masks_of(corpus::generate_corpus(spec));
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    Var x = parameter(randn(Shape{16, c, 32, 32}, rng));
    Var k = parameter(randn(Shape{c, c, 3, 3}, rng));
    for (auto _ : state) {
        Var y = ops::sum(ops::conv2d(x, k, 1, 1));
        backward(y);
        benchmark::DoNotOptimize(k.grad().data());
    }
    state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DenoiserTrainingStep(benchmark::State& state) {
    Rng rng(2);
    UNetArch arch = Denoiser::default_arch(tissue::kNumClasses);
    arch.base_channels = static_cast<std::size_t>(state.range(0));
    Denoiser net(tissue::kNumClasses, arch, rng);
    const auto masks = corpus_masks(16, 32);
    const auto schedule = NoiseSchedule::linear(1000, 1e-4, 0.02);
    Grid xt = randn(Shape{16, 1, 32, 32}, rng);
    std::vector<std::size_t> t(16);
    for (std::size_t i = 0; i < 16; ++i) t[i] = 1 + 60 * i;
    for (auto _ : state) {
        Var out = net.forward(xt, t, masks);
        backward(ops::mean(ops::mul(out, out)));
        net.params().zero_grad();
    }
    state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_DenoiserTrainingStep)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_DdimSample(benchmark::State& state) {
    Rng rng(3);
    Denoiser net(tissue::kNumClasses, Denoiser::default_arch(tissue::kNumClasses), rng);
    const auto masks = corpus_masks(16, 32);
    const auto schedule = NoiseSchedule::linear(1000, 1e-4, 0.02);
    const NoiseModel model = as_noise_model(net);
    const auto steps = static_cast<std::size_t>(state.range(0));
    NoGradGuard guard;
    for (auto _ : state) {
        Rng r(4);
        benchmark::DoNotOptimize(ddim_sample(model, masks, schedule, steps, r).data());
    }
    state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_DdimSample)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_BalanceDataset(benchmark::State& state) {
    const auto masks = corpus_masks(static_cast<std::size_t>(state.range(0)), 32);
    forge::BalanceConfig cfg;
    for (auto _ : state) {
        Rng rng(5);
        benchmark::DoNotOptimize(forge::balance_dataset(masks, cfg, rng).masks.size());
    }
}
BENCHMARK(BM_BalanceDataset)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
    Rng rng(6);
    const auto n = static_cast<std::size_t>(state.range(0));
    Grid a = randn(Shape{n, n}, rng), b = randn(Shape{n, n}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b, 2.0));
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
