#include <gtest/gtest.h>

#include <bit>
#include <random>

#include "labelprop/formats.hpp"
#include "support.hpp"

using namespace labelprop;

namespace {

Bytes le32(std::uint32_t v) {
  return {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16), std::uint8_t(v >> 24)};
}

Bytes concat(std::initializer_list<Bytes> parts) {
  Bytes out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Bytes f32(float v) { return le32(std::bit_cast<std::uint32_t>(v)); }

}  // namespace

TEST(Flo, MagicIsTheAsciiTag) {
  // The tag reads "PIEH" and, as a little-endian float, 202021.25.
  const Bytes tag{'P', 'I', 'E', 'H'};
  EXPECT_EQ(f32(202021.25f), tag);
}

TEST(Flo, ByteLayoutOfATwoByOneField) {
  FlowField f(2, 1);
  f.fx.at(0, 0) = 0.5f;
  f.fy.at(0, 0) = -1.f;
  f.fx.at(1, 0) = 2.f;
  f.fy.at(1, 0) = 3.f;
  // 0.5 = 0x3F000000, -1 = 0xBF800000, 2 = 0x40000000, 3 = 0x40400000.
  const Bytes expected = concat({Bytes{'P', 'I', 'E', 'H'}, le32(2), le32(1), le32(0x3F000000),
                                 le32(0xBF800000), le32(0x40000000), le32(0x40400000)});
  EXPECT_EQ(encode_flo(f), expected);
}

TEST(Flo, RoundTripIsBitExact) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> d(-40, 40);
  FlowField f(17, 9);
  for (auto& v : f.fx.data) v = d(rng);
  for (auto& v : f.fy.data) v = d(rng);
  const FlowField g = decode_flo(encode_flo(f));
  EXPECT_EQ(g.fx.data, f.fx.data);
  EXPECT_EQ(g.fy.data, f.fy.data);

  const auto dir = testsupport::scratch_dir("flo");
  write_flo(dir / "a.flo", f);
  EXPECT_EQ(read_flo(dir / "a.flo").fx.data, f.fx.data);
  EXPECT_EQ(peek_flo_size(dir / "a.flo"), std::make_pair(17, 9));
}

TEST(Flo, RejectsMalformedInput) {
  FlowField f(3, 2);
  const Bytes good = encode_flo(f);

  Bytes bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_flo(bad_magic), FormatError);

  const Bytes truncated(good.begin(), good.end() - 1);
  EXPECT_THROW(decode_flo(truncated), FormatError);
  EXPECT_THROW(decode_flo(Bytes(good.begin(), good.begin() + 6)), FormatError);

  Bytes trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_flo(trailing), FormatError);

  Bytes zero_width = concat({f32(202021.25f), le32(0), le32(2)});
  EXPECT_THROW(decode_flo(zero_width), FormatError);

  Bytes nan_value = good;
  const Bytes nan = f32(std::numeric_limits<float>::quiet_NaN());
  std::copy(nan.begin(), nan.end(), nan_value.begin() + 12);
  EXPECT_THROW(decode_flo(nan_value), FormatError);
}

TEST(Flo, ErrorNamesTheFile) {
  const auto dir = testsupport::scratch_dir("flo_err");
  write_file(dir / "broken.flo", Bytes{1, 2, 3});
  try {
    read_flo(dir / "broken.flo");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.flo"), std::string::npos);
  }
}

TEST(MaskPng, RoundTripKeepsEveryId) {
  LabelMask m(13, 7);
  std::mt19937 rng(5);
  for (auto& v : m.ids.data) v = rng() % 5 == 0 ? kVoidId : LabelId(rng() % 254);
  const auto dir = testsupport::scratch_dir("mask");
  write_mask_png(dir / "m.png", m);
  EXPECT_EQ(read_mask_png(dir / "m.png").ids, m.ids);
  EXPECT_EQ(peek_png_size(dir / "m.png"), std::make_pair(13, 7));
}

TEST(MaskPng, ColourPngIsRejectedAsMask) {
  RgbImage img(4, 3);
  const auto dir = testsupport::scratch_dir("mask_rgb");
  write_rgb_png(dir / "c.png", img);
  EXPECT_THROW(read_mask_png(dir / "c.png"), FormatError);
  EXPECT_THROW(read_mask_png(dir / "absent.png"), ValidationError);
  write_file(dir / "junk.png", Bytes{'n', 'o', 't'});
  EXPECT_THROW(read_mask_png(dir / "junk.png"), FormatError);
}

TEST(ProbFile, RoundTripAndLayout) {
  ProbMap m(2, 1, 2);
  m.at(0, 0, 0) = 0.25f;
  m.at(1, 0, 0) = 0.75f;
  m.at(0, 1, 0) = 1.f;
  m.at(1, 1, 0) = 0.f;
  // Header is tag, height, width, planes; then plane-major values.
  const Bytes expected = concat({Bytes{'P', 'R', 'B', '1'}, le32(1), le32(2), le32(2),
                                 f32(0.25f), f32(1.f), f32(0.75f), f32(0.f)});
  EXPECT_EQ(encode_prob_map(m), expected);
  EXPECT_EQ(decode_prob_map(expected), m);

  Bytes trailing = expected;
  trailing.push_back(9);
  EXPECT_THROW(decode_prob_map(trailing), FormatError);
  EXPECT_THROW(decode_prob_map(Bytes(expected.begin(), expected.end() - 2)), FormatError);
  EXPECT_THROW(decode_prob_map(Bytes{'P', 'R', 'B', '2'}), FormatError);
}

TEST(ConfidenceFile, RoundTrip) {
  ConfidenceMap c(5, 4, 0.5f);
  c.at(2, 3) = 0.125f;
  EXPECT_EQ(decode_confidence(encode_confidence(c)), c);
  ProbMap two(5, 4, 2);
  Bytes as_cnf = encode_prob_map(two);
  std::copy_n("CNF1", 4, as_cnf.begin());
  EXPECT_THROW(decode_confidence(as_cnf), FormatError);
}

TEST(Digest, KnownSha256Vectors) {
  EXPECT_EQ(sha256_hex(Bytes{'a', 'b', 'c'}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(Bytes{}),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
