#include <benchmark/benchmark.h>

#include "enlfcn/cost.hpp"
#include "enlfcn/network.hpp"
#include "enlfcn/nonlocal.hpp"
#include "enlfcn/ops.hpp"

using namespace enlfcn;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const auto x = random_tensor({c, s, s}, 1);
  Rng rng(2);
  const auto w = glorot_conv<float>(c, c, 5, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Activation::sigmoid));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * c * c * 25 * s * s));
}
BENCHMARK(BM_Conv2d)->Args({32, 32})->Args({64, 32})->Unit(benchmark::kMillisecond);

// One attention module's affinity + softmax + aggregation; items are counted multiplications.
void BM_Attention(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const bool efficient = state.range(1) == 0;
  const std::size_t n = 32;
  const auto q = random_tensor({n, s, s}, 3), k = random_tensor({n, s, s}, 4), v = random_tensor({n, s, s}, 5);
  for (auto _ : state) {
    if (efficient) {
      Tensor<float> e = v;
      for (int r = 0; r < 2; ++r) e = cc_aggregate(softmax_axis(cc_affinity(q, k), 0), v, e);
      benchmark::DoNotOptimize(e);
    } else {
      benchmark::DoNotOptimize(full_aggregate(softmax_axis(full_affinity(q, k), 0), v, v));
    }
  }
  const CostGeometry g{s, s, n, n, 2};
  const auto flops = attention_flops(g, efficient ? AttentionKind::efficient : AttentionKind::original);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * flops));
  state.SetLabel(efficient ? "criss-cross R=2" : "full");
}
BENCHMARK(BM_Attention)
    ->ArgsProduct({{16, 32, 48}, {0, 1}})
    ->ArgNames({"size", "full"})
    ->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  NetworkConfig c;
  c.bands = 8;
  c.classes = 4;
  c.backbone_channels = 32;
  c.enl_channels = 32;
  const auto model = EnlFcnModel<float>::init(c, 1);
  const auto x = random_tensor({8, 32, 32}, 6);
  for (auto _ : state) {
    Tape<float> tape;
    const auto nodes = forward(tape, model, tape.constant(x));
    benchmark::DoNotOptimize(tape.backward(nodes.probabilities, Tensor<float>({4, 32, 32}, 1.0f)));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
