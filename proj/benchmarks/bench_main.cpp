#include <benchmark/benchmark.h>

#include "cadgd/config.hpp"
#include "cadgd/kernels.hpp"
#include "cadgd/losses.hpp"
#include "cadgd/model.hpp"
#include "cadgd/random.hpp"
#include "cadgd/scene.hpp"

namespace {

using namespace cadgd;

void BM_Conv2d(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = rng.normal_tensor({side, side, 16}, 1.0);
  const Tensor w = rng.normal_tensor({3, 3, 16, 16}, 0.1);
  const Tensor b = rng.normal_tensor({16}, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d(x, w, b, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = rng.normal_tensor({16, 16, 16}, 1.0);
  const Tensor w = rng.normal_tensor({3, 3, 16, 16}, 0.1);
  const Tensor go = rng.normal_tensor({16, 16, 16}, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d_backward(x, w, go, 1));
}
BENCHMARK(BM_Conv2dBackward);

void BM_Hungarian(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto g = static_cast<std::size_t>(state.range(1));
  Rng rng(3);
  const Tensor cost = rng.uniform_tensor({k, g}, 0.0, 10.0);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian_match(cost));
}
BENCHMARK(BM_Hungarian)->Args({8, 8})->Args({100, 10})->Args({100, 20})->Args({100, 100});

void BM_Forward(benchmark::State& state) {
  Config c;
  c.model.ablation = ablation_row(static_cast<int>(state.range(0)));
  ParamStore store;
  init_model(store, c.model, 1);
  const Vocab vocab = make_vocab(c.scene);
  const Scene s = generate_scene(c.scene, vocab, 4);
  const FeaturePyramid pyr = render_features(s, vocab, c.scene, s.seed);
  const TextFeatures text = embed_expression(s.expressions.front(), vocab);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(forward(g, store, c.model, pyr, text).logits.value());
  }
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(6)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  Config c;
  ParamStore store;
  init_model(store, c.model, 1);
  const Vocab vocab = make_vocab(c.scene);
  const Scene s = generate_scene(c.scene, vocab, 4);
  const FeaturePyramid pyr = render_features(s, vocab, c.scene, s.seed);
  const TextFeatures text = embed_expression(s.expressions.front(), vocab);
  const PairTarget target = make_target(s, s.expressions.front(), vocab, c.scene.kernel_size);
  for (auto _ : state) {
    Graph g;
    const ForwardResult fwd = forward(g, store, c.model, pyr, text);
    const PairLoss loss = pair_loss(g, store, c.model, fwd, text, target, c.loss);
    g.backward(loss.total);
    benchmark::DoNotOptimize(loss.report.total);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
