#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "sfit/eval.hpp"
#include "test_util.hpp"

using namespace sfit;
using namespace sfit::eval;

namespace {

Tensor filled(Shape shape, float v) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = v;
  return t;
}

models::Checkpoint classifier_ckpt(std::uint64_t seed) {
  models::Classifier m;
  m.init(seed);
  return m.to_checkpoint();
}

}  // namespace

TEST(Grid, DimensionsAndBorders) {
  const auto r = render_grid({filled({8, 1, 28, 28}, -1.0f), filled({8, 1, 28, 28}, 1.0f)});
  EXPECT_EQ(r.width, 8 * 28 + 9 * 2);
  EXPECT_EQ(r.height, 2 * 28 + 3 * 2);
  ASSERT_EQ(r.rgb.size(), static_cast<std::size_t>(r.width * r.height * 3));
  auto px = [&](int x, int y, int c) { return r.rgb[(static_cast<std::size_t>(y) * r.width + x) * 3 + c]; };
  EXPECT_EQ(px(0, 0, 0), 255);
  EXPECT_EQ(px(2, 2, 0), 0);
  EXPECT_EQ(px(2, 2 + 28 + 2, 1), 255);
  EXPECT_EQ(px(30, 10, 2), 255);  // border column between tiles
  for (int y = 2; y < 30; ++y) {
    for (int x = 2; x < 30; ++x) ASSERT_EQ(px(x, y, 0), 0);
  }
}

TEST(Grid, GrayIsReplicatedAndValuesRound) {
  Tensor x({1, 1, 1, 3}, std::vector<float>{-1.0f, 0.0f, 0.5f});
  const auto r = render_grid({x});
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(r.rgb[(2 * r.width + 2) * 3 + c], 0);
    EXPECT_EQ(r.rgb[(2 * r.width + 3) * 3 + c], 128);  // 127.5 rounds up
    EXPECT_EQ(r.rgb[(2 * r.width + 4) * 3 + c], 191);
  }
  Tensor rgb({1, 3, 1, 1}, std::vector<float>{1.0f, -1.0f, 0.0f});
  const auto rc = render_grid({rgb});
  const auto* p = &rc.rgb[(2 * rc.width + 2) * 3];
  EXPECT_EQ(p[0], 255);
  EXPECT_EQ(p[1], 0);
  EXPECT_EQ(p[2], 128);
}

TEST(Grid, MismatchedRowsThrow) {
  EXPECT_THROW(render_grid({filled({8, 1, 28, 28}, 0), filled({7, 1, 28, 28}, 0)}), Error);
  EXPECT_THROW(render_grid({filled({2, 1, 28, 28}, 0), filled({2, 1, 32, 32}, 0)}), Error);
  EXPECT_THROW(render_grid({}), Error);
}

TEST(Png, RoundTripsThroughLibpng) {
  test::TempDir dir;
  const auto r = render_grid({test::random_set(3, 1, 28, 28, 4).images, test::random_set(3, 3, 28, 28, 5).images});
  export_grid({test::random_set(3, 1, 28, 28, 4).images, test::random_set(3, 3, 28, 28, 5).images}, dir / "g.png");
  const auto back = read_png(dir / "g.png");
  EXPECT_EQ(back.width, r.width);
  EXPECT_EQ(back.height, r.height);
  EXPECT_EQ(back.rgb, r.rgb);
  EXPECT_THROW(read_png(dir / "missing.png"), Error);
}

TEST(Heatmap, ColorRampIsMonotoneInLuminance) {
  EXPECT_EQ(heat_color(0.0), (std::array<std::uint8_t, 3>{0, 0, 0}));
  EXPECT_EQ(heat_color(1.0), (std::array<std::uint8_t, 3>{255, 255, 255}));
  double prev = -1;
  for (int i = 0; i <= 100; ++i) {
    const auto c = heat_color(i / 100.0);
    const double lum = 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2];
    EXPECT_GE(lum, prev);
    prev = lum;
  }
}

TEST(Heatmap, IdenticalFeaturesGiveZeroMap) {
  Rng rng(3);
  const auto f = oracle::random<float>({6, 4, 4}, rng, -1, 1);
  const auto h = gram_heatmap(f, f, true, 3);
  EXPECT_EQ(h.dim, 6);
  EXPECT_EQ(h.raster.width, 18);
  EXPECT_EQ(h.raster.height, 18);
  EXPECT_EQ(h.max, 0.0);
  for (auto b : h.raster.rgb) ASSERT_EQ(b, 0);
}

TEST(Heatmap, NormalizedIgnoresScaleRawDoesNot) {
  Rng rng(9);
  const auto ft = oracle::random<float>({4, 3, 3}, rng, 0.1, 1);
  Tensor fs = ft;
  for (auto& v : fs.values()) v *= 2.0f;
  const auto norm = gram_heatmap(ft, fs, true, 1);
  const auto raw = gram_heatmap(ft, fs, false, 1);
  EXPECT_LT(norm.max, 1e-6);
  // Raw Gram scales by 4, so |G_S - G_T| = 3 G_T.
  const auto g = oracle::gram(oracle::per_image(ft.cast<double>())[0]);
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const double want = 3.0 * g[i / 4][i % 4];
    EXPECT_NEAR(raw.values[i], want, 1e-4 * (1 + want));
  }
  EXPECT_GT(raw.max, 0.1);
}

TEST(Heatmap, MatchesOracleAndWritesSidecar) {
  Rng rng(10);
  const auto ft = oracle::random<float>({5, 2, 3}, rng, -1, 1);
  const auto fs = oracle::random<float>({5, 2, 3}, rng, -1, 1);
  const auto a = oracle::normalize_rows(oracle::gram(oracle::per_image(ft.cast<double>())[0]));
  const auto b = oracle::normalize_rows(oracle::gram(oracle::per_image(fs.cast<double>())[0]));
  test::TempDir dir;
  const auto h = export_gram_heatmap(ft, fs, true, dir / "h.png", 4);
  ASSERT_EQ(h.values.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(h.values[i], std::abs(a[i / 5][i % 5] - b[i / 5][i % 5]), 1e-6);
  const auto png = read_png(dir / "h.png");
  EXPECT_EQ(png.width, 20);
  EXPECT_EQ(png.rgb, h.raster.rgb);
  std::ifstream side(dir / "h.png.txt");
  std::string text((std::istreambuf_iterator<char>(side)), {});
  EXPECT_NE(text.find("normalized"), std::string::npos);
  EXPECT_THROW(gram_heatmap(ft, oracle::random<float>({5, 3, 3}, rng, -1, 1), true), Error);
  EXPECT_THROW(gram_heatmap(oracle::random<float>({1, 5, 2, 3}, rng, -1, 1),
                            oracle::random<float>({1, 5, 2, 3}, rng, -1, 1), true),
               Error);
}

TEST(Branches, IdentityGeneratorMatchesSourceBranch) {
  const auto test_set = test::random_set(40, 1, 28, 28, 12);
  const auto src = classifier_ckpt(1);
  const auto tgt = classifier_ckpt(2);
  const auto r = evaluate_branches(src, tgt, nullptr, test_set);
  EXPECT_EQ(r.count, 40);
  EXPECT_EQ(r.acc_source_on_generated, r.acc_source_on_target);
  EXPECT_EQ(r.per_class_source_on_generated, r.per_class_source_on_target);
  int total = 0;
  for (int c : r.class_counts) total += c;
  EXPECT_EQ(total, 40);

  models::Classifier m = models::Classifier::from_checkpoint(src);
  int correct = 0;
  const auto p = m.forward(test_set.images, models::Mode::Eval).probs;
  for (int i = 0; i < 40; ++i) {
    int best = 0;
    for (int k = 1; k < 10; ++k) {
      if (p[i * 10 + k] > p[i * 10 + best]) best = k;
    }
    correct += best == (*test_set.labels)[static_cast<std::size_t>(i)];
  }
  EXPECT_DOUBLE_EQ(r.acc_source_on_target, correct / 40.0);

  auto unlabeled = test_set;
  unlabeled.labels.reset();
  try {
    evaluate_branches(src, tgt, nullptr, unlabeled);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnlabeledData);
  }
}

TEST(Branches, GapClosureOnlyForMeaningfulGaps) {
  BranchReport r;
  r.acc_source_on_target = 0.2;
  r.acc_target_on_target = 0.9;
  r.acc_source_on_generated = 0.76;
  finalize_gap(r);
  EXPECT_NEAR(r.gap, 0.7, 1e-12);
  ASSERT_TRUE(r.gap_closure);
  EXPECT_NEAR(*r.gap_closure, 0.8, 1e-12);
  r.acc_target_on_target = 0.205;
  finalize_gap(r);
  EXPECT_FALSE(r.gap_closure);
  r.acc_target_on_target = 0.1;
  finalize_gap(r);
  EXPECT_FALSE(r.gap_closure);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_TRUE(j["gap_closure"].is_null());
}

TEST(Branches, JsonAndCsvCarryPerClassResults) {
  BranchReport r;
  r.count = 4;
  r.num_classes = 2;
  r.acc_source_on_target = 0.25;
  r.acc_target_on_target = 0.75;
  r.acc_source_on_generated = 0.5;
  r.per_class_source_on_target = {0.0, 0.5};
  r.per_class_target_on_target = {1.0, 0.5};
  r.per_class_source_on_generated = {0.5, 0.5};
  r.class_counts = {2, 2};
  finalize_gap(r);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_DOUBLE_EQ(j["gap_closure"].get<double>(), 0.5);
  EXPECT_EQ(r.to_csv(), "class,acc\n0,0.500000\n1,0.500000\n");
}
