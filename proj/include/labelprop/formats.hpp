#pragma once

#include <png.h>
#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "labelprop/core.hpp"
#include "labelprop/fuse.hpp"

namespace labelprop {

namespace fs = std::filesystem;

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& p, const Bytes& data) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("failed writing " + p.string());
}

inline void write_text(const fs::path& p, std::string_view text) {
  write_file(p, Bytes(text.begin(), text.end()));
}

// Lower-case hex SHA-256 of a byte buffer.
inline std::string sha256_hex(const Bytes& data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Little-endian primitives.

namespace le {

inline void put_u32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_i32(Bytes& b, std::int32_t v) { put_u32(b, static_cast<std::uint32_t>(v)); }
inline void put_f32(Bytes& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(const Bytes& b, std::string what) : b_(b), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError(what_ + ": truncated data");
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const Bytes& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace le

// ---------------------------------------------------------------------------
// Middlebury .flo: float magic 202021.25, int32 width and height, then
// interleaved (fx, fy) float32 pairs in row-major order.

inline constexpr float kFloMagic = 202021.25f;
inline constexpr std::int32_t kMaxRasterSide = 1 << 15;

inline Bytes encode_flo(const FlowField& f) {
  validate_flow(f);
  Bytes b;
  b.reserve(12 + f.fx.size() * 8);
  le::put_f32(b, kFloMagic);
  le::put_i32(b, f.width());
  le::put_i32(b, f.height());
  for (std::size_t i = 0; i < f.fx.size(); ++i) {
    le::put_f32(b, f.fx.data[i]);
    le::put_f32(b, f.fy.data[i]);
  }
  return b;
}

inline void check_side(std::int64_t v, const std::string& what) {
  if (v <= 0 || v > kMaxRasterSide)
    throw FormatError(what + ": implausible dimension " + std::to_string(v));
}

// The direction is not stored in the file; callers assign it.
inline FlowField decode_flo(const Bytes& b, const std::string& what = "flow file") {
  le::Reader r(b, what);
  if (r.remaining() < 4 || r.f32() != kFloMagic) throw FormatError(what + ": bad magic");
  const std::int32_t w = r.i32(), h = r.i32();
  check_side(w, what);
  check_side(h, what);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  r.need(n * 8);
  if (r.remaining() != n * 8) throw FormatError(what + ": trailing bytes");
  FlowField f(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    f.fx.data[i] = r.f32();
    f.fy.data[i] = r.f32();
  }
  if (!f.all_finite()) throw FormatError(what + ": non-finite displacement");
  return f;
}

inline void write_flo(const fs::path& p, const FlowField& f) { write_file(p, encode_flo(f)); }
inline FlowField read_flo(const fs::path& p) { return decode_flo(read_file(p), p.string()); }

// Dimensions from the header only.
inline std::pair<int, int> peek_flo_size(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  Bytes head(12);
  in.read(reinterpret_cast<char*>(head.data()), 12);
  if (in.gcount() != 12) throw FormatError(p.string() + ": truncated data");
  le::Reader r(head, p.string());
  if (r.f32() != kFloMagic) throw FormatError(p.string() + ": bad magic");
  const int w = r.i32(), h = r.i32();
  check_side(w, p.string());
  check_side(h, p.string());
  return {w, h};
}

// ---------------------------------------------------------------------------
// Planar float rasters with a 4-byte tag, u32 height, width and plane count.
// "PRB1" holds class probabilities, "CNF1" a single confidence plane.

inline Bytes encode_planes(const char (&tag)[5], int w, int h, int planes,
                           const std::vector<float>& data) {
  Bytes b(tag, tag + 4);
  le::put_u32(b, static_cast<std::uint32_t>(h));
  le::put_u32(b, static_cast<std::uint32_t>(w));
  le::put_u32(b, static_cast<std::uint32_t>(planes));
  for (float v : data) le::put_f32(b, v);
  return b;
}

struct Planes {
  int width = 0, height = 0, count = 0;
  std::vector<float> data;
};

inline Planes decode_planes(const char (&tag)[5], const Bytes& b, const std::string& what) {
  if (b.size() < 4 || std::memcmp(b.data(), tag, 4) != 0)
    throw FormatError(what + ": bad magic");
  const Bytes body(b.begin() + 4, b.end());
  le::Reader r(body, what);
  Planes p;
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  check_side(w, what);
  check_side(h, what);
  if (c == 0 || c > 255) throw FormatError(what + ": implausible plane count");
  p.width = static_cast<int>(w);
  p.height = static_cast<int>(h);
  p.count = static_cast<int>(c);
  const std::size_t n = std::size_t(w) * h * c;
  r.need(n * 4);
  if (r.remaining() != n * 4) throw FormatError(what + ": trailing bytes");
  p.data.resize(n);
  for (auto& v : p.data) v = r.f32();
  return p;
}

inline Bytes encode_prob_map(const ProbMap& m) {
  return encode_planes("PRB1", m.width, m.height, m.classes, m.p);
}

// Decodes without checking normalization; see validate_prob_map.
inline ProbMap decode_prob_map(const Bytes& b, const std::string& what = "prob map") {
  auto pl = decode_planes("PRB1", b, what);
  ProbMap m;
  m.width = pl.width;
  m.height = pl.height;
  m.classes = pl.count;
  m.p = std::move(pl.data);
  return m;
}

inline void write_prob_map(const fs::path& p, const ProbMap& m) {
  write_file(p, encode_prob_map(m));
}
inline ProbMap read_prob_map(const fs::path& p) {
  return decode_prob_map(read_file(p), p.string());
}

inline Bytes encode_confidence(const ConfidenceMap& c) {
  return encode_planes("CNF1", c.width(), c.height(), 1, c.c.data);
}

inline ConfidenceMap decode_confidence(const Bytes& b,
                                       const std::string& what = "confidence file") {
  auto pl = decode_planes("CNF1", b, what);
  if (pl.count != 1) throw FormatError(what + ": expected one plane");
  ConfidenceMap c(pl.width, pl.height);
  c.c.data = std::move(pl.data);
  return c;
}

// ---------------------------------------------------------------------------
// PNG through libpng's simplified API. Images are 8-bit gray or RGB.

namespace detail {

struct PngImage {
  png_image img{};
  PngImage() {
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

inline Bytes png_decode(const Bytes& data, png_uint_32 format, int& w, int& h,
                        const std::string& what) {
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, data.data(), data.size()))
    throw FormatError(what + ": " + p.img.message);
  p.img.format = format;
  w = static_cast<int>(p.img.width);
  h = static_cast<int>(p.img.height);
  Bytes buf(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr))
    throw FormatError(what + ": " + p.img.message);
  return buf;
}

inline Bytes png_encode(const std::uint8_t* pixels, int w, int h, png_uint_32 format) {
  PngImage p;
  p.img.width = static_cast<png_uint_32>(w);
  p.img.height = static_cast<png_uint_32>(h);
  p.img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p.img, nullptr, &size, 0, pixels, 0, nullptr))
    throw Error(std::string("PNG encoding failed: ") + p.img.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&p.img, out.data(), &size, 0, pixels, 0, nullptr))
    throw Error(std::string("PNG encoding failed: ") + p.img.message);
  out.resize(size);
  return out;
}

inline bool png_is_gray(const Bytes& data, const std::string& what) {
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, data.data(), data.size()))
    throw FormatError(what + ": " + p.img.message);
  return (p.img.format & PNG_FORMAT_FLAG_COLOR) == 0;
}

}  // namespace detail

inline Bytes encode_png_gray(const Raster<std::uint8_t>& r) {
  return detail::png_encode(r.data.data(), r.width, r.height, PNG_FORMAT_GRAY);
}

inline Bytes encode_png_rgb(const RgbImage& r) {
  static_assert(sizeof(Rgb) == 3);
  return detail::png_encode(reinterpret_cast<const std::uint8_t*>(r.data.data()),
                            r.width, r.height, PNG_FORMAT_RGB);
}

// Label ids must be stored in a single-channel file; colour files are
// rejected rather than converted.
inline Raster<std::uint8_t> decode_png_gray8(const Bytes& data, const std::string& what) {
  if (!detail::png_is_gray(data, what))
    throw FormatError(what + ": expected a single-channel image");
  int w = 0, h = 0;
  Bytes px = detail::png_decode(data, PNG_FORMAT_GRAY, w, h, what);
  Raster<std::uint8_t> r(w, h);
  r.data = std::move(px);
  return r;
}

inline RgbImage decode_png_rgb(const Bytes& data, const std::string& what) {
  int w = 0, h = 0;
  Bytes px = detail::png_decode(data, PNG_FORMAT_RGB, w, h, what);
  RgbImage r(w, h);
  std::memcpy(r.data.data(), px.data(), px.size());
  return r;
}

inline LabelMask read_mask_png(const fs::path& p) {
  LabelMask m;
  m.ids = decode_png_gray8(read_file(p), p.string());
  return m;
}

inline void write_mask_png(const fs::path& p, const LabelMask& m) {
  write_file(p, encode_png_gray(m.ids));
}

// Gray files load as stored; colour files are converted to luma.
inline GrayImage read_gray_png(const fs::path& p) {
  const Bytes data = read_file(p);
  if (detail::png_is_gray(data, p.string())) {
    const auto r = decode_png_gray8(data, p.string());
    GrayImage g(r.width, r.height);
    for (std::size_t i = 0; i < r.size(); ++i) g.data[i] = r.data[i];
    return g;
  }
  return to_gray(decode_png_rgb(data, p.string()));
}

inline RgbImage read_rgb_png(const fs::path& p) {
  return decode_png_rgb(read_file(p), p.string());
}

inline void write_rgb_png(const fs::path& p, const RgbImage& img) {
  write_file(p, encode_png_rgb(img));
}

// Width and height from the header without decoding pixels.
inline std::pair<int, int> peek_png_size(const fs::path& p) {
  const Bytes data = read_file(p);
  detail::PngImage img;
  if (!png_image_begin_read_from_memory(&img.img, data.data(), data.size()))
    throw FormatError(p.string() + ": " + img.img.message);
  return {static_cast<int>(img.img.width), static_cast<int>(img.img.height)};
}

// Rounds and clamps to 8 bits.
inline Raster<std::uint8_t> quantize(const GrayImage& g) {
  Raster<std::uint8_t> r(g.width, g.height);
  for (std::size_t i = 0; i < g.size(); ++i)
    r.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(g.data[i]), 0L, 255L));
  return r;
}

}  // namespace labelprop
