#include <benchmark/benchmark.h>

#include "ssar/models.hpp"
#include "ssar/ops.hpp"
#include "ssar/training.hpp"

using namespace ssar;

namespace {

const BackboneConfig kSmall{1, 8, 3, 1, false, {8, 16}, 1};

Tensor<float> ones(Shape shape) { return Tensor<float>::full(std::move(shape), 0.5f); }

void BM_SliceSeqForward(benchmark::State& state) {
  SliceSeqConfig cfg;
  cfg.backbone = kSmall;
  cfg.seq_len = 12;
  cfg.slice_height = cfg.slice_width = 16;
  cfg.hidden = 16;
  SliceSeqAgeNet<float> net(cfg, 0);
  auto x = ones({12, 1, 16, 16});
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_SliceSeqForward)->Unit(benchmark::kMillisecond);

void BM_SliceSeqTrainStep(benchmark::State& state) {
  SliceSeqConfig cfg;
  cfg.backbone = kSmall;
  cfg.seq_len = 12;
  cfg.slice_height = cfg.slice_width = 16;
  cfg.hidden = 16;
  SliceSeqAgeNet<float> net(cfg, 0);
  auto x = ones({12, 1, 16, 16});
  for (auto _ : state) {
    for (auto& p : net.parameters()) p.tensor.zero_grad();
    auto loss = sub(net.forward(x), Tensor<float>({1}, {3.0f}));
    mul(loss, loss).backward();
  }
}
BENCHMARK(BM_SliceSeqTrainStep)->Unit(benchmark::kMillisecond);

void BM_Vol3dForward(benchmark::State& state) {
  Vol3DConfig cfg;
  cfg.backbone = kSmall;
  Volumetric3DNet<float> net(cfg, 0);
  auto x = ones({1, 12, 16, 16});
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_Vol3dForward)->Unit(benchmark::kMillisecond);

// Full-size slice model (ResNet18 trunk, 36 slices of 50x50), single forward.
void BM_SliceSeqForwardFullSize(benchmark::State& state) {
  SliceSeqAgeNet<float> net(SliceSeqConfig{}, 0);
  auto x = ones({36, 1, 50, 50});
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_SliceSeqForwardFullSize)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace
