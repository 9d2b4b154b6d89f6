#include <gtest/gtest.h>

#include <fstream>

#include "sfit/checkpoint.hpp"
#include "sfit/models.hpp"
#include "test_util.hpp"

using namespace sfit;
using namespace sfit::models;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.entries.push_back({"a.weight", Tensor({2, 3}, std::vector<float>{1, -2, 3.5f, 0, 1e-30f, -0.0f})});
  c.entries.push_back({"a.bias", Tensor({1}, std::vector<float>{42})});
  c.entries.push_back({"scalar", Tensor(Shape{}, std::vector<float>{7})});
  return c;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Errc decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::IoError;
}

}  // namespace

TEST(Checkpoint, LayoutIsLittleEndianAndDocumented) {
  const auto bytes = encode_checkpoint(sample());
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "SFITCKPT");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9] | bytes[10] | bytes[11], 0);
  EXPECT_EQ(bytes[12], 3);
  // First entry: u16 name length 8, name, ndim 2, dims 2 and 3, then 6 floats.
  EXPECT_EQ(bytes[16], 8);
  EXPECT_EQ(bytes[17], 0);
  EXPECT_EQ(std::string(bytes.begin() + 18, bytes.begin() + 26), "a.weight");
  EXPECT_EQ(bytes[26], 2);
  EXPECT_EQ(bytes[27], 2);
  EXPECT_EQ(bytes[31], 3);
  // 1.0f = 0x3f800000 stored little-endian.
  EXPECT_EQ(bytes[35], 0x00);
  EXPECT_EQ(bytes[38], 0x3f);
  EXPECT_EQ(bytes[37], 0x80);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  test::TempDir dir;
  const auto c = sample();
  save_checkpoint(c, dir / "a.ckpt");
  const auto loaded = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(loaded, c);
  save_checkpoint(loaded, dir / "b.ckpt");
  EXPECT_EQ(file_bytes(dir / "a.ckpt"), file_bytes(dir / "b.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));

  Classifier model;
  model.init(3);
  save_checkpoint(model.to_checkpoint(), dir / "model.ckpt");
  save_checkpoint(load_checkpoint(dir / "model.ckpt"), dir / "model2.ckpt");
  EXPECT_EQ(file_bytes(dir / "model.ckpt"), file_bytes(dir / "model2.ckpt"));
}

TEST(Checkpoint, RejectsCorruption) {
  const auto good = encode_checkpoint(sample());
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_error(magic), Errc::BadMagic);
  auto version = good;
  version[8] = 2;
  EXPECT_EQ(decode_error(version), Errc::VersionUnsupported);
  for (std::size_t cut : {std::size_t{4}, std::size_t{14}, good.size() / 2, good.size() - 1}) {
    EXPECT_EQ(decode_error(std::vector<std::uint8_t>(good.begin(), good.begin() + cut)), Errc::TruncatedFile)
        << "cut at " << cut;
  }
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(decode_error(trailing), Errc::SizeMismatch);
}

TEST(Checkpoint, MissingFileNamesThePath) {
  try {
    load_checkpoint("/nonexistent/dir/model.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IoError);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/model.ckpt"), std::string::npos);
  }
}

TEST(Checkpoint, FingerprintTracksContent) {
  auto c = sample();
  const auto fp = fingerprint(c);
  EXPECT_EQ(fingerprint(sample()), fp);
  c.entries[0].value[0] = 1.0000001f;
  EXPECT_NE(fingerprint(c), fp);
  auto renamed = sample();
  renamed.entries[1].name = "a.bias2";
  EXPECT_NE(fingerprint(renamed), fp);
  EXPECT_NE(sample().find("a.bias"), nullptr);
  EXPECT_EQ(sample().find("nope"), nullptr);
}
