#include <benchmark/benchmark.h>

#include "sfit/losses.hpp"

using namespace sfit;
using namespace sfit::losses;

namespace {

Tensor random_features(std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({16, 50, 7, 7});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0, 2));
  return t;
}

template <class Loss>
void run(benchmark::State& state, Loss loss) {
  const auto ft = random_features(1), fs = random_features(2);
  for (auto _ : state) benchmark::DoNotOptimize(loss(ft, fs));
  state.SetItemsProcessed(state.iterations() * 16);
}

void BM_RpLoss(benchmark::State& s) { run(s, [](auto& a, auto& b) { return rp_loss(a, b); }); }
void BM_StyleLoss(benchmark::State& s) { run(s, [](auto& a, auto& b) { return style_loss(a, b); }); }
void BM_PixelSimilarity(benchmark::State& s) { run(s, [](auto& a, auto& b) { return pixel_similarity_loss(a, b); }); }
void BM_KdLoss(benchmark::State& state) {
  Rng rng(3);
  Tensor pt({16, 10}), ps({16, 10});
  for (int r = 0; r < 16; ++r) {
    double st = 0, ss = 0;
    for (int k = 0; k < 10; ++k) {
      st += pt[r * 10 + k] = static_cast<float>(rng.uniform(0.01, 1));
      ss += ps[r * 10 + k] = static_cast<float>(rng.uniform(0.01, 1));
    }
    for (int k = 0; k < 10; ++k) {
      pt[r * 10 + k] /= static_cast<float>(st);
      ps[r * 10 + k] /= static_cast<float>(ss);
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(kd_loss(pt, ps));
}

BENCHMARK(BM_RpLoss);
BENCHMARK(BM_StyleLoss);
BENCHMARK(BM_PixelSimilarity);
BENCHMARK(BM_KdLoss);

}  // namespace
