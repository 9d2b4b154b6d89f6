#include <benchmark/benchmark.h>

#include "sfit/losses.hpp"
#include "sfit/models.hpp"

using namespace sfit;
using namespace sfit::models;

namespace {

Tensor random_images(int n, int c, int side, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, c, side, side});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

void BM_ClassifierForwardEval(benchmark::State& state) {
  Classifier model;
  model.init(1);
  const auto x = random_images(static_cast<int>(state.range(0)), 1, 28, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, Mode::Eval));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ClassifierForwardEval)->Arg(16)->Arg(256);

void BM_ClassifierTrainStep(benchmark::State& state) {
  Classifier model;
  model.init(1);
  const auto x = random_images(16, 1, 28, 3);
  const std::vector<int> labels(16, 3);
  for (auto _ : state) {
    model.zero_grad();
    auto out = model.forward(x, Mode::Train, {.cache = true});
    const auto ce = losses::cross_entropy(out.probs, labels);
    benchmark::DoNotOptimize(model.backward({.logits = nn::softmax_backward(out.probs, ce.grad)}, true));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_ClassifierTrainStep);

void BM_GeneratorForward(benchmark::State& state) {
  Generator g;
  g.init(4);
  const auto x = random_images(16, 1, 28, 5);
  for (auto _ : state) benchmark::DoNotOptimize(g.forward(x, false));
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_GeneratorForward);

void BM_GeneratorTrainStep(benchmark::State& state) {
  Generator g;
  g.init(4);
  const auto x = random_images(16, 1, 28, 5);
  const auto dy = random_images(16, 1, 28, 6);
  for (auto _ : state) {
    g.zero_grad();
    g.forward(x, true);
    benchmark::DoNotOptimize(g.backward(dy, true));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_GeneratorTrainStep);

}  // namespace
