#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "sfit/data.hpp"
#include "test_util.hpp"

using namespace sfit;
using namespace sfit::data;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t h, std::uint32_t w,
                                     std::size_t payload) {
  std::vector<std::uint8_t> b;
  put_u32(b, magic);
  put_u32(b, n);
  put_u32(b, h);
  put_u32(b, w);
  for (std::size_t i = 0; i < payload; ++i) b.push_back(static_cast<std::uint8_t>(i * 37 % 256));
  return b;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t n) {
  std::vector<std::uint8_t> b;
  put_u32(b, 0x801);
  put_u32(b, n);
  for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(i % 10));
  return b;
}

template <class F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::IoError;  // unreachable in passing tests; flagged by the comparison
}

}  // namespace

TEST(Idx, LoadsWellFormedFiles) {
  test::TempDir dir;
  write_bytes(dir / "img", idx_images(0x803, 4, 28, 28, 4 * 784));
  write_bytes(dir / "lbl", idx_labels(4));
  const auto set = load_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(set.count(), 4);
  EXPECT_EQ(set.channels(), 1);
  EXPECT_EQ(set.height(), 28);
  EXPECT_EQ(set.width(), 28);
  ASSERT_TRUE(set.labeled());
  EXPECT_EQ((*set.labels)[3], 3);
  EXPECT_FLOAT_EQ(set.images[0], -1.0f);
  EXPECT_FLOAT_EQ(set.images[1], byte_to_unit(37));
}

TEST(Idx, ByteEndpoints) {
  EXPECT_FLOAT_EQ(byte_to_unit(255), 1.0f);
  EXPECT_FLOAT_EQ(byte_to_unit(0), -1.0f);
  for (int b = 0; b < 256; ++b) EXPECT_EQ(unit_to_byte(byte_to_unit(static_cast<std::uint8_t>(b))), b);
}

TEST(Idx, RejectsCorruptFiles) {
  test::TempDir dir;
  write_bytes(dir / "wrong_magic", idx_images(0x801, 4, 28, 28, 4 * 784));
  EXPECT_EQ(error_of([&] { load_idx(dir / "wrong_magic"); }), Errc::BadMagic);

  write_bytes(dir / "short", idx_images(0x803, 4, 28, 28, 3 * 784));
  EXPECT_EQ(error_of([&] { load_idx(dir / "short"); }), Errc::TruncatedFile);

  write_bytes(dir / "img", idx_images(0x803, 4, 28, 28, 4 * 784));
  write_bytes(dir / "lbl", idx_labels(5));
  EXPECT_EQ(error_of([&] { load_idx(dir / "img", dir / "lbl"); }), Errc::CountMismatch);
  EXPECT_EQ(error_of([&] { load_idx(dir / "lbl"); }), Errc::BadMagic);
  EXPECT_EQ(error_of([&] { load_idx(dir / "missing"); }), Errc::IoError);
}

TEST(Idx, RoundTripReproducesPixelPayload) {
  test::TempDir dir;
  const auto original = idx_images(0x803, 3, 16, 20, 3 * 320);
  write_bytes(dir / "img", original);
  write_bytes(dir / "lbl", idx_labels(3));
  const auto set = load_idx(dir / "img", dir / "lbl");
  save_idx(set, dir / "img2", dir / "lbl2");
  EXPECT_EQ(read_bytes(dir / "img2"), original);
  EXPECT_EQ(read_bytes(dir / "lbl2"), read_bytes(dir / "lbl"));
}

TEST(Transforms, InvertAndIdentity) {
  const auto set = test::random_set(5, 1, 16, 16, 1);
  const auto inv = apply_transform(set, {.kind = TransformKind::Invert});
  for (std::size_t i = 0; i < set.images.size(); ++i) EXPECT_EQ(inv.images[i], -set.images[i]);
  EXPECT_EQ(*inv.labels, *set.labels);
  EXPECT_EQ(apply_transform(set, {}).images, set.images);
}

TEST(Transforms, ColorizeIsDeterministicAndThreeChannel) {
  const auto set = test::random_set(6, 1, 16, 16, 2);
  const DomainTransform t{.kind = TransformKind::Colorize, .seed = 7};
  const auto a = apply_transform(set, t), b = apply_transform(set, t);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.channels(), 3);
  for (float v : a.images.values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  const auto c = apply_transform(set, {.kind = TransformKind::Colorize, .seed = 8});
  EXPECT_NE(a.images, c.images);
}

TEST(Transforms, ChannelRequirements) {
  const auto gray = test::random_set(2, 1, 16, 16, 3);
  EXPECT_EQ(error_of([&] { apply_transform(gray, {.kind = TransformKind::ChannelPermute}); }),
            Errc::IncompatibleChannels);
  EXPECT_EQ(error_of([&] { apply_transform(gray, {.kind = TransformKind::SaturationScale, .amount = 0.5}); }),
            Errc::IncompatibleChannels);
  const auto rgb = test::random_set(2, 3, 16, 16, 4);
  EXPECT_EQ(error_of([&] { apply_transform(rgb, {.kind = TransformKind::Colorize}); }), Errc::IncompatibleChannels);

  const auto perm = apply_transform(rgb, {.kind = TransformKind::ChannelPermute});
  const std::size_t plane = 256;
  EXPECT_EQ(perm.images[0], rgb.images[2 * plane]);
  EXPECT_EQ(perm.images[2 * plane + 5], rgb.images[5]);

  const auto gray_out = apply_transform(rgb, {.kind = TransformKind::SaturationScale, .amount = 0.0});
  EXPECT_NEAR(gray_out.images[0], gray_out.images[plane], 1e-6);
}

TEST(Transforms, BackgroundShiftMovesDarkPixelsOnly) {
  ImageSet set;
  set.images = Tensor({1, 1, 16, 16}, -1.0f);
  set.images[0] = 1.0f;
  const auto out = apply_transform(set, {.kind = TransformKind::BackgroundShift, .amount = 0.5});
  EXPECT_FLOAT_EQ(out.images[0], 1.0f);
  EXPECT_FLOAT_EQ(out.images[1], -0.5f);
}

TEST(Transforms, NamesRoundTrip) {
  for (auto k : {TransformKind::Identity, TransformKind::Invert, TransformKind::ChannelPermute,
                 TransformKind::Colorize, TransformKind::SaturationScale, TransformKind::BackgroundShift}) {
    EXPECT_EQ(transform_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(transform_kind_from_string("sepia"), Error);
}

TEST(DomainPair, DisjointSeededSplit) {
  const auto base = test::random_set(1000, 1, 16, 16, 5);
  const auto a = make_domain_pair(base, {}, {.kind = TransformKind::Invert}, 42);
  EXPECT_EQ(a.source.count(), 500);
  EXPECT_EQ(a.target.count(), 500);
  std::set<std::size_t> all(a.source_indices.begin(), a.source_indices.end());
  for (auto i : a.target_indices) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 1000u);
  const auto b = make_domain_pair(base, {}, {.kind = TransformKind::Invert}, 42);
  EXPECT_EQ(a.source_indices, b.source_indices);
  EXPECT_EQ(a.target.images, b.target.images);
  const auto c = make_domain_pair(base, {}, {.kind = TransformKind::Invert}, 43);
  EXPECT_NE(a.source_indices, c.source_indices);
  // Target images are the inverted base images at the target indices.
  EXPECT_EQ(a.target.images[0], -base.images[a.target_indices[0] * 256]);
  EXPECT_EQ((*a.target.labels)[0], (*base.labels)[a.target_indices[0]]);
}

TEST(DomainPair, Errors) {
  EXPECT_EQ(error_of([] { make_domain_pair(test::random_set(1, 1, 16, 16, 6), {}, {}, 0); }), Errc::EmptySplit);
  auto unlabeled = test::random_set(10, 1, 16, 16, 6);
  unlabeled.labels.reset();
  EXPECT_EQ(error_of([&] { make_domain_pair(unlabeled, {}, {}, 0); }), Errc::UnlabeledData);
}

TEST(Batches, ArithmeticAndOrder) {
  EXPECT_EQ(batch_indices(100, {16, 0, true, true}).size(), 6u);
  const auto keep = batch_indices(100, {16, 0, true, false});
  ASSERT_EQ(keep.size(), 7u);
  EXPECT_EQ(keep.back().size(), 4u);
  const auto ordered = batch_indices(10, {4, 0, false, false});
  EXPECT_EQ(ordered[0], (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(ordered[2], (std::vector<std::size_t>{8, 9}));
  EXPECT_EQ(error_of([] { batch_indices(10, {11, 0, true, false}); }), Errc::BatchTooLarge);
}

TEST(Batches, DeterministicCoverage) {
  const BatchPlan plan{16, 99, true, true};
  const auto a = batch_indices(100, plan), b = batch_indices(100, plan);
  EXPECT_EQ(a, b);
  std::set<std::size_t> seen;
  for (const auto& batch : a)
    for (auto i : batch) EXPECT_TRUE(seen.insert(i).second);
  EXPECT_EQ(seen.size(), 96u);
  EXPECT_NE(a, batch_indices(100, {16, 100, true, true}));

  const auto set = test::random_set(20, 1, 16, 16, 7);
  const auto batches_a = batches(set, {8, 3, true, false});
  ASSERT_EQ(batches_a.size(), 3u);
  EXPECT_EQ(batches_a[0].labels[0], (*set.labels)[batches_a[0].indices[0]]);
}

TEST(Resize, ConstantImagesStayConstant) {
  ImageSet set;
  set.images = Tensor({2, 1, 16, 16}, 0.25f);
  set.labels = std::vector<int>{1, 2};
  const auto out = resize_bilinear(set, 28, 28);
  EXPECT_EQ(out.height(), 28);
  for (float v : out.images.values()) EXPECT_NEAR(v, 0.25f, 1e-6);
  EXPECT_EQ(*out.labels, *set.labels);
}

TEST(ImageSetValidation, Invariants) {
  auto set = test::random_set(4, 1, 16, 16, 8);
  EXPECT_NO_THROW(set.validate());
  set.labels->push_back(0);
  EXPECT_EQ(error_of([&] { set.validate(); }), Errc::CountMismatch);
  set.labels->pop_back();
  (*set.labels)[0] = 10;
  EXPECT_EQ(error_of([&] { set.validate(); }), Errc::IndexOutOfRange);
}

TEST(Manifest, RoundTripAndMaterialize) {
  test::TempDir dir;
  const auto base = test::random_set(40, 1, 16, 16, 9);
  const auto test_base = test::random_set(20, 1, 16, 16, 10);
  save_idx(base, dir / "train-images", dir / "train-labels");
  save_idx(test_base, dir / "test-images", dir / "test-labels");

  SyntheticManifest m;
  m.train_images = "train-images";  // relative to the manifest directory
  m.train_labels = "train-labels";
  m.test_images = dir / "test-images";
  m.test_labels = dir / "test-labels";
  m.target_transform.kind = TransformKind::Invert;
  m.split_seed = 5;
  m.train_per_domain = 15;
  m.test_per_domain = 8;
  write_manifest(m, dir / "pair.manifest");
  const auto read = read_manifest(dir / "pair.manifest");
  EXPECT_EQ(read.target_transform.kind, TransformKind::Invert);
  EXPECT_EQ(read.train_per_domain, 15);

  const auto a = materialize(read), b = materialize(read_manifest(dir / "pair.manifest"));
  EXPECT_EQ(a.source_train.count(), 15);
  EXPECT_EQ(a.target_train.count(), 15);
  EXPECT_EQ(a.source_test.count(), 8);
  EXPECT_EQ(a.target_test.count(), 8);
  EXPECT_EQ(a.target_train.images, b.target_train.images);
  EXPECT_EQ(*a.target_test.labels, *b.target_test.labels);

  std::ofstream(dir / "pair.manifest", std::ios::app) << "colour = red\n";
  EXPECT_EQ(error_of([&] { read_manifest(dir / "pair.manifest"); }), Errc::InvalidConfig);
}
