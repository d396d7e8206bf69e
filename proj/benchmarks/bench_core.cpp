#include <benchmark/benchmark.h>

#include "pneumo/metrics.hpp"
#include "pneumo/models.hpp"
#include "pneumo/ops.hpp"
#include "pneumo/patching.hpp"
#include "pneumo/rng.hpp"

using namespace pneumo;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_double();
  return t;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor in = random_tensor({channels, 32, 32}, rng);
  Tensor w = random_tensor({channels, channels, 3, 3}, rng);
  Tensor b = random_tensor({channels}, rng);
  for (auto _ : state) {
    Tensor out = ops::conv2d(in, w, b, 1, 1);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(channels) * channels * 9 * 32 * 32);
}
BENCHMARK(BM_Conv3x3Forward)->Arg(4)->Arg(8)->Arg(16);

void BM_ConvBackward(benchmark::State& state) {
  Rng rng(2);
  Tensor in = random_tensor({8, 16, 16}, rng);
  Tensor w = random_tensor({8, 8, 3, 3}, rng);
  Tensor gout = random_tensor({8, 16, 16}, rng);
  for (auto _ : state) {
    auto g = ops::conv2d_backward(in, w, 1, 1, gout);
    benchmark::DoNotOptimize(g.weights.data());
  }
}
BENCHMARK(BM_ConvBackward);

void BM_MaxPool(benchmark::State& state) {
  Rng rng(3);
  Tensor in = random_tensor({8, 32, 32}, rng);
  for (auto _ : state) {
    auto out = ops::maxpool2(in);
    benchmark::DoNotOptimize(out.output.data());
  }
}
BENCHMARK(BM_MaxPool);

void BM_PatchNetForward(benchmark::State& state) {
  PatchNetConfig cfg{32, 4, 3, true, 0.2, 3, 256};
  Rng init(4);
  PatchNet net(cfg, init);
  Rng rng(5);
  Tensor patch = random_tensor({1, 32, 32}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(patch));
}
BENCHMARK(BM_PatchNetForward);

void BM_BuildHeatmap(benchmark::State& state) {
  PatchNetConfig cfg{32, 4, 3, true, 0.2, 3, 256};
  Rng init(6);
  PatchNet net(cfg, init);
  Rng rng(7);
  Tensor image = random_tensor({1, 64, 64}, rng);
  const auto grid = window_grid(64, 32, 2);  // 17x17 windows
  const auto scorer = [&](const Tensor& p) { return net.forward(p); };
  for (auto _ : state) {
    auto map = build_heatmap(scorer, image, grid, 0.5);
    benchmark::DoNotOptimize(map.probs.data());
  }
}
BENCHMARK(BM_BuildHeatmap)->Unit(benchmark::kMillisecond);

void BM_OverlapFraction(benchmark::State& state) {
  std::vector<BBox> boxes{{10, 12, 20, 18}, {30, 40, 12, 9}, {5, 50, 8, 8}};
  const PatchRect rect{8, 8, 32};
  for (auto _ : state) benchmark::DoNotOptimize(overlap_fraction(boxes, rect));
}
BENCHMARK(BM_OverlapFraction);

void BM_Auroc(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(8);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) {
    scores.push_back(rng.uniform_int(0, 999) / 1000.0);
    labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
  }
  labels[0] = 0;
  labels[1] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(auroc(scores, labels));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
