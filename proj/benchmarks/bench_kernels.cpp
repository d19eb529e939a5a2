#include <benchmark/benchmark.h>

#include <random>

#include "ssar/ops.hpp"
#include "ssar/parallel.hpp"

using namespace ssar;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<float>(std::move(shape), std::move(v));
}

// Args: channels, spatial size, threads.
void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  set_num_threads(static_cast<std::size_t>(state.range(2)));
  auto x = random_tensor({c, s, s}, 1);
  auto w = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, 1, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(c * c * 9 * s * s));
  set_num_threads(1);
}
BENCHMARK(BM_Conv2d)->Args({16, 50, 1})->Args({64, 25, 1})->Args({64, 25, 4})->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_Conv3d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  set_num_threads(static_cast<std::size_t>(state.range(2)));
  auto x = random_tensor({c, s, s, s}, 3);
  auto w = random_tensor({c, c, 3, 3, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, 1, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(c * c * 27 * s * s * s));
  set_num_threads(1);
}
BENCHMARK(BM_Conv3d)->Args({8, 16, 1})->Args({16, 16, 1})->Args({16, 16, 4})->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_Conv2dBackward(benchmark::State& state) {
  auto x = random_tensor({16, 50, 50}, 5);
  auto w = random_tensor({16, 16, 3, 3}, 6);
  w.set_requires_grad(true);
  for (auto _ : state) {
    w.zero_grad();
    sum(conv2d(x, w, 1, 1)).backward();
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace
