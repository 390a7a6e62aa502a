#include <benchmark/benchmark.h>

#include "fabseg/autograd.hpp"
#include "fabseg/config.hpp"
#include "fabseg/inference.hpp"
#include "fabseg/postprocess.hpp"
#include "fabseg/prompter_net.hpp"
#include "fabseg/random.hpp"
#include "fabseg/sam_block.hpp"

namespace {

using namespace fabseg;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (double& v : t.values()) v = rng.normal();
    return t;
}

ByteRaster random_tile(int size, std::uint64_t seed) {
    ByteRaster tile(size, size, 3, Domain::U8);
    Rng rng(seed);
    for (auto& v : tile.pixels()) v = static_cast<std::uint8_t>(rng.below(256));
    return tile;
}

const PipelineConfig& toy() {
    static const PipelineConfig config = load_config(FABSEG_SOURCE_DIR "/configs/toy.ini");
    return config;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
    const auto c = static_cast<std::int64_t>(state.range(0));
    const auto hw = static_cast<std::int64_t>(state.range(1));
    Tensor x = random_tensor({1, c, hw, hw}, 1);
    Tensor w = random_tensor({c, c, 3, 3}, 2);
    Tensor b = random_tensor({c}, 3);
    for (auto _ : state) {
        auto xv = ag::leaf(x);
        auto y = ag::conv2d(xv, ag::leaf(w), ag::leaf(b), {.stride = 1, .padding = 1});
        ag::backward(y, Tensor(y.shape(), 1.0));
        benchmark::DoNotOptimize(xv.grad());
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({16, 32})->Args({32, 64})->Unit(benchmark::kMillisecond);

void BM_PrompterForward(benchmark::State& state) {
    const auto& config = toy();
    ParamStore params = init_prompter_params(config.prompter, config.prompter_seed);
    ByteRaster tile = random_tile(config.data.tile, 4);
    for (auto _ : state) benchmark::DoNotOptimize(prompter_mask_logits(config.prompter, params, tile));
}
BENCHMARK(BM_PrompterForward)->Unit(benchmark::kMillisecond);

void BM_SamImageEncoder(benchmark::State& state) {
    const auto& config = toy();
    ParamStore params = init_sam_params(config.sam, config.sam_seed);
    ByteRaster tile = random_tile(config.data.tile, 5);
    for (auto _ : state) benchmark::DoNotOptimize(image_embedding(config.sam, params, tile));
}
BENCHMARK(BM_SamImageEncoder)->Unit(benchmark::kMillisecond);

void BM_SamDecodeWithPrompts(benchmark::State& state) {
    const auto& config = toy();
    ParamStore params = init_sam_params(config.sam, config.sam_seed);
    ByteRaster tile = random_tile(config.data.tile, 6);
    Tensor embedding = image_embedding(config.sam, params, tile);
    RealRaster mask(config.data.tile, config.data.tile, 1, Domain::Logits);
    Rng rng(7);
    for (auto& v : mask.pixels()) v = rng.uniform(-6.0, 6.0);
    PointPromptSet points = sample_points(mask, config.prompts, 8);
    for (auto _ : state)
        benchmark::DoNotOptimize(decode_tile(config.sam, params, embedding, &mask, &points, Head::Region));
}
BENCHMARK(BM_SamDecodeWithPrompts)->Unit(benchmark::kMillisecond);

void BM_ExtractParcels(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    ByteRaster region(size, size, 1, Domain::Binary);
    ByteRaster boundary(size, size, 1, Domain::Binary);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const bool edge = r % 32 == 0 || c % 32 == 0;
            boundary.at(r, c) = edge ? 1 : 0;
            region.at(r, c) = edge ? 0 : 1;
        }
    for (auto _ : state) benchmark::DoNotOptimize(extract_parcels(region, boundary));
}
BENCHMARK(BM_ExtractParcels)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
