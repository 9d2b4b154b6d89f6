#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfit/losses.hpp"
#include "sfit/models.hpp"
#include "test_util.hpp"

using namespace sfit;
using namespace sfit::models;

namespace {

Tensor random_images(int n, int c, std::uint64_t seed, int side = 28) {
  Rng rng(seed);
  return oracle::random<float>({n, c, side, side}, rng);
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

/// Scalar probe r(x) = <wl, logits> + <wf, feature_map>; returns the relative
/// finite-difference error over a sample of input coordinates.
double classifier_input_gradient_error(Classifier& model, Mode mode, const Tensor& x) {
  Rng rng(77);
  auto out = model.forward(x, mode, {.cache = true});
  const auto wl = oracle::random<float>(out.logits.shape(), rng);
  const auto wf = oracle::random<float>(out.feature_map.shape(), rng);
  const auto dx = model.backward({.logits = wl, .feature_map = wf}, false);
  auto probe = [&](const Tensor& in) {
    const auto o = model.forward(in, mode);
    return dot(wl, o.logits) + dot(wf, o.feature_map);
  };
  std::vector<double> analytic, fd;
  const float h = 1e-3f;
  for (int k = 0; k < 40; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(x.size()));
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    fd.push_back((probe(xp) - probe(xm)) / (2 * h));
    analytic.push_back(dx[i]);
  }
  return oracle::relative_l2(analytic, fd, 1e-2);
}

}  // namespace

TEST(Classifier, ShapesAndDistributions) {
  Classifier model;
  model.init(1);
  const auto out = model.forward(random_images(3, 1, 2), Mode::Eval);
  EXPECT_EQ(out.feature_map.shape(), (Shape{3, 50, 7, 7}));
  EXPECT_EQ(out.pooled.shape(), (Shape{3, 500}));
  EXPECT_EQ(out.logits.shape(), (Shape{3, 10}));
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto o = model.forward(random_images(2, 1, 100 + trial), Mode::Eval);
    for (int r = 0; r < 2; ++r) {
      double s = 0;
      for (int k = 0; k < 10; ++k) s += o.probs[r * 10 + k];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Classifier, ZeroWeightsGiveUniformProbs) {
  Classifier model;
  for (auto* p : model.parameters()) p->value.fill(0.0f);
  const auto out = model.forward(random_images(2, 1, 4), Mode::Eval);
  for (float p : out.probs.values()) EXPECT_NEAR(p, 0.1f, 1e-7);
}

TEST(Classifier, EvalIsDeterministicAndStateless) {
  Classifier model;
  model.init(5);
  const auto x = random_images(4, 1, 6);
  const auto before = model.to_checkpoint();
  const auto a = model.forward(x, Mode::Eval), b = model.forward(x, Mode::Eval);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.feature_map, b.feature_map);
  EXPECT_EQ(model.to_checkpoint(), before);
  model.forward(x, Mode::Train);
  EXPECT_NE(model.to_checkpoint(), before) << "train mode updates BN running statistics";
}

TEST(Classifier, RejectsWrongInputShape) {
  Classifier model;
  EXPECT_THROW(model.forward(random_images(2, 3, 7), Mode::Eval), Error);
  EXPECT_THROW(model.forward(random_images(2, 1, 7, 32), Mode::Eval), Error);
  EXPECT_THROW(Classifier({1, 10, 10, 10}), Error);
}

TEST(Classifier, InitIsSeededAndKaimingBounded) {
  Classifier a, b, c;
  a.init(9);
  b.init(9);
  c.init(10);
  EXPECT_EQ(a.to_checkpoint(), b.to_checkpoint());
  EXPECT_NE(a.to_checkpoint(), c.to_checkpoint());
  const auto ckpt = a.to_checkpoint();
  const auto* w = ckpt.find("f.conv2.weight");
  ASSERT_NE(w, nullptr);
  const double bound = std::sqrt(6.0 / (20 * 25));
  double max_abs = 0;
  for (float v : w->values()) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
  EXPECT_LE(max_abs, bound);
  EXPECT_GT(max_abs, 0.9 * bound);
  for (float v : ckpt.find("f.bn1.weight")->values()) EXPECT_EQ(v, 1.0f);
  for (float v : ckpt.find("f.bn1.bias")->values()) EXPECT_EQ(v, 0.0f);
  for (float v : ckpt.find("f.conv1.bias")->values()) EXPECT_EQ(v, 0.0f);
}

TEST(Classifier, InputGradientsMatchFiniteDifferences) {
  Classifier model;
  model.init(11);
  // Warm the running statistics so eval mode sees realistic activations.
  model.forward(random_images(8, 1, 12), Mode::Train);
  const auto x = random_images(3, 1, 13);
  EXPECT_LT(classifier_input_gradient_error(model, Mode::Eval, x), 5e-2);
  EXPECT_LT(classifier_input_gradient_error(model, Mode::Train, x), 5e-2);
}

TEST(Classifier, ParameterGradientsMatchFiniteDifferences) {
  Classifier model;
  model.init(14);
  const auto x = random_images(4, 1, 15);
  const std::vector<int> labels{1, 4, 7, 9};
  auto loss = [&] {
    const auto o = model.forward(x, Mode::Train);
    return static_cast<double>(losses::cross_entropy(o.probs, labels).value);
  };
  const Checkpoint start = model.to_checkpoint();
  model.zero_grad();
  auto out = model.forward(x, Mode::Train, {.cache = true});
  const auto ce = losses::cross_entropy(out.probs, labels);
  model.backward({.logits = nn::softmax_backward(out.probs, ce.grad)}, true);
  model.load(start);

  Rng rng(16);
  for (auto* p : model.parameters()) {
    const auto grad = p->grad;
    std::vector<double> analytic, fd;
    for (int k = 0; k < 8; ++k) {
      const auto i = static_cast<std::size_t>(rng.below(p->value.size()));
      const float keep = p->value[i];
      const float h = 1e-3f;
      p->value[i] = keep + h;
      const double up = loss();
      model.load(start);
      p->value[i] = keep - h;
      const double down = loss();
      model.load(start);
      fd.push_back((up - down) / (2 * h));
      analytic.push_back(grad[i]);
    }
    EXPECT_LT(oracle::relative_l2(analytic, fd, 1e-2), 0.1) << p->name;
  }
}

TEST(Classifier, BnInputTrackingAndGradient) {
  Classifier model;
  model.init(17);
  model.forward(random_images(8, 1, 18), Mode::Train);
  const auto x = random_images(4, 1, 19);
  auto out = model.forward(x, Mode::Eval, {.cache = true, .track_bn_inputs = true});
  const auto stats = model.bn_input_stats();
  ASSERT_EQ(stats.size(), 2u);
  EXPECT_EQ(stats[0].mean.size(), 20u);
  EXPECT_EQ(stats[1].mean.size(), 50u);
  const auto inputs = model.bn_inputs();
  const auto direct = losses::activation_stats(*inputs[1]);
  for (int c = 0; c < 50; ++c) EXPECT_NEAR(direct.mean[c], stats[1].mean[c], 1e-5);

  ClassifierGrads grads;
  grads.feature_map = Tensor(out.feature_map.shape());
  grads.bn_inputs = {Tensor(inputs[0]->shape()), Tensor(inputs[1]->shape())};
  grads.bn_inputs.pop_back();
  EXPECT_THROW(model.backward(grads, false), Error);
}

TEST(Classifier, HeadAndFeatureParameterSplit) {
  Classifier model;
  for (auto* p : model.head_parameters()) EXPECT_TRUE(is_head_tensor(p->name));
  for (auto* p : model.feature_parameters()) EXPECT_FALSE(is_head_tensor(p->name));
  EXPECT_EQ(model.parameters().size(), model.head_parameters().size() + model.feature_parameters().size());
}

TEST(Classifier, CheckpointNamesAndStrictLoad) {
  Classifier model;
  model.init(20);
  auto ckpt = model.to_checkpoint();
  std::vector<std::string> names;
  for (const auto& e : ckpt.entries) names.push_back(e.name);
  const std::vector<std::string> expected{
      "f.conv1.weight", "f.conv1.bias", "f.bn1.weight", "f.bn1.bias", "f.bn1.running_mean", "f.bn1.running_var",
      "f.conv2.weight", "f.conv2.bias", "f.bn2.weight", "f.bn2.bias", "f.bn2.running_mean", "f.bn2.running_var",
      "f.fc1.weight",   "f.fc1.bias",   "p.fc.weight",  "p.fc.bias"};
  EXPECT_EQ(names, expected);

  const auto restored = Classifier::from_checkpoint(ckpt);
  EXPECT_EQ(restored.spec(), model.spec());
  EXPECT_EQ(restored.to_checkpoint(), ckpt);

  auto missing = ckpt;
  missing.entries.erase(missing.entries.begin() + 4);
  try {
    model.load(missing);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingTensor);
  }
  auto extra = ckpt;
  extra.entries.push_back({"f.extra", Tensor({1})});
  try {
    model.load(extra);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownTensor);
  }
  auto wrong = ckpt;
  wrong.entries[1].value = Tensor({21});
  try {
    model.load(wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Classifier, ThreeChannelAndOtherSizes) {
  Classifier model({3, 32, 32, 5});
  model.init(21);
  const auto out = model.forward(random_images(2, 3, 22, 32), Mode::Eval);
  EXPECT_EQ(out.feature_map.shape(), (Shape{2, 50, 8, 8}));
  EXPECT_EQ(out.logits.shape(), (Shape{2, 5}));
  EXPECT_EQ(Classifier::from_checkpoint(model.to_checkpoint()).spec(), model.spec());
}

TEST(HeadFingerprint, IgnoresFeatureTensors) {
  Classifier a;
  a.init(23);
  auto ckpt = a.to_checkpoint();
  const auto fp = head_fingerprint(ckpt);
  ckpt.entries[0].value[0] += 1.0f;
  EXPECT_EQ(head_fingerprint(ckpt), fp);
  ckpt.entries.back().value[0] += 1.0f;
  EXPECT_NE(head_fingerprint(ckpt), fp);
}

// ---------------------------------------------------------------------------

TEST(Generator, ShapeAndRange) {
  Generator g;
  g.init(30);
  const auto x = random_images(16, 1, 31);
  const auto y = g.forward(x, false);
  EXPECT_EQ(y.shape(), x.shape());
  for (float v : y.values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  Generator rgb({.channels = 3});
  rgb.init(32);
  EXPECT_EQ(rgb.forward(random_images(2, 3, 33, 32), false).shape(), (Shape{2, 3, 32, 32}));
  EXPECT_THROW(g.forward(random_images(2, 3, 34), false), Error);
}

TEST(Generator, RandomInitIsFarFromIdentity) {
  Generator g;
  g.init(35);
  const auto x = random_images(4, 1, 36);
  const auto y = g.forward(x, false);
  double err = 0;
  for (std::size_t i = 0; i < x.size(); ++i) err += std::abs(y[i] - x[i]);
  EXPECT_GT(err / static_cast<double>(x.size()), 0.2);
}

TEST(Generator, CheckpointRoundTripAndNames) {
  Generator g;
  g.init(37);
  const auto ckpt = g.to_checkpoint();
  for (const auto& e : ckpt.entries) EXPECT_TRUE(e.name.starts_with("g.")) << e.name;
  EXPECT_EQ(ckpt.entries.size(), 2u * (3 + 2 * 3 + 2 + 1));
  auto restored = Generator::from_checkpoint(ckpt);
  EXPECT_EQ(restored.to_checkpoint(), ckpt);
  const auto x = random_images(2, 1, 38);
  EXPECT_EQ(restored.forward(x, false), g.forward(x, false));
}

TEST(Generator, InputGradientMatchesFiniteDifferences) {
  Generator g({.channels = 1, .base_width = 8, .residual_blocks = 1});
  g.init(39);
  const auto x = random_images(2, 1, 40, 32);
  Rng rng(41);
  const auto w = oracle::random<float>(x.shape(), rng);
  const auto y = g.forward(x, true);
  const auto dx = g.backward(w, true);
  std::vector<double> analytic, fd;
  for (int k = 0; k < 40; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(x.size()));
    auto xp = x, xm = x;
    xp[i] += 1e-3f;
    xm[i] -= 1e-3f;
    fd.push_back((dot(w, g.forward(xp, false)) - dot(w, g.forward(xm, false))) / 2e-3);
    analytic.push_back(dx[i]);
  }
  EXPECT_LT(oracle::relative_l2(analytic, fd, 1e-2), 5e-2);
  EXPECT_EQ(y.shape(), x.shape());
}

TEST(Generator, ParameterGradientsMatchFiniteDifferences) {
  Generator g({.channels = 1, .base_width = 4, .residual_blocks = 1});
  g.init(42);
  const auto x = random_images(2, 1, 43, 16);
  Rng rng(44);
  const auto w = oracle::random<float>(x.shape(), rng);
  g.zero_grad();
  g.forward(x, true);
  g.backward(w, true);
  const auto start = g.to_checkpoint();
  // Biases feeding instance norm have zero true gradient, hence the absolute floor.
  for (auto* p : g.parameters()) {
    const auto grad = p->grad;
    std::vector<double> analytic, fd;
    for (int k = 0; k < 6; ++k) {
      const auto i = static_cast<std::size_t>(rng.below(p->value.size()));
      const float keep = p->value[i];
      p->value[i] = keep + 1e-3f;
      const double up = dot(w, g.forward(x, false));
      p->value[i] = keep - 1e-3f;
      const double down = dot(w, g.forward(x, false));
      p->value[i] = keep;
      fd.push_back((up - down) / 2e-3);
      analytic.push_back(grad[i]);
    }
    EXPECT_LT(oracle::relative_l2(analytic, fd, 0.5), 0.1) << p->name;
  }
  EXPECT_EQ(g.to_checkpoint(), start);
}
