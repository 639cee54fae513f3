#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace labelprop {

// Base error for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a documented precondition (bad dimensions, missing
// files, inconsistent timelines, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A serialized file could not be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

using FrameIndex = std::int64_t;
using LabelId = std::uint8_t;

inline constexpr LabelId kVoidId = 255;

// Loss weights for downstream training: annotated key frames vs. propagated
// frames.
inline constexpr double kKeyFrameLossWeight = 1.0;
inline constexpr double kDefaultPseudoLossWeight = 0.03;

// Anticipation horizons in seconds.
inline constexpr double kMisawHorizonSeconds = 25.0;
inline constexpr double kCholec80HorizonSeconds = 300.0;

// Dense row-major grid. Pixel (x, y) is (column, row), origin top-left.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{})
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
    if (w < 0 || h < 0) throw ValidationError("negative raster dimensions");
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width + x;
  }
  T& at(int x, int y) { return data[index(x, y)]; }
  const T& at(int x, int y) const { return data[index(x, y)]; }
  bool same_shape(int w, int h) const { return width == w && height == h; }
  template <typename U>
  bool same_shape(const Raster<U>& o) const {
    return width == o.width && height == o.height;
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

using GrayImage = Raster<float>;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};
using RgbImage = Raster<Rgb>;

// Luma with fixed 0.299/0.587/0.114 weights, output in [0, 255].
inline GrayImage to_gray(const RgbImage& rgb) {
  GrayImage out(rgb.width, rgb.height);
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const Rgb& p = rgb.data[i];
    out.data[i] = static_cast<float>(0.299 * p.r + 0.587 * p.g + 0.114 * p.b);
  }
  return out;
}

enum class MaskKind { kSemantic, kInstance };

struct LabelMask {
  Raster<LabelId> ids;
  MaskKind kind = MaskKind::kSemantic;
  // Instance id -> class id; only meaningful for kInstance.
  std::map<LabelId, LabelId> class_of_instance;

  LabelMask() = default;
  LabelMask(int w, int h, LabelId fill = kVoidId) : ids(w, h, fill) {}

  int width() const { return ids.width; }
  int height() const { return ids.height; }
  LabelId at(int x, int y) const { return ids.at(x, y); }
  LabelId& at(int x, int y) { return ids.at(x, y); }

  // Class of the label at a raw id (identity for semantic masks).
  LabelId class_of(LabelId id) const {
    if (id == kVoidId || kind == MaskKind::kSemantic) return id;
    auto it = class_of_instance.find(id);
    return it == class_of_instance.end() ? kVoidId : it->second;
  }

  std::set<LabelId> labels_present() const {
    std::set<LabelId> out;
    for (LabelId v : ids.data)
      if (v != kVoidId) out.insert(v);
    return out;
  }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

// Throws ValidationError when an instance mask references an undeclared id.
inline void validate_mask(const LabelMask& m) {
  if (m.ids.size() != static_cast<std::size_t>(m.width()) * m.height())
    throw ValidationError("mask data size does not match width*height");
  if (m.kind != MaskKind::kInstance) return;
  for (LabelId v : m.labels_present()) {
    if (!m.class_of_instance.contains(v))
      throw ValidationError("instance id " + std::to_string(v) +
                            " has no class mapping");
  }
}

struct FlowDirection {
  FrameIndex source = 0;
  FrameIndex target = 0;
  friend bool operator==(const FlowDirection&, const FlowDirection&) = default;
};

// Dense displacement field: a pixel q in the source frame corresponds to
// q + (fx(q), fy(q)) in the target frame.
struct FlowField {
  Raster<float> fx;
  Raster<float> fy;
  FlowDirection direction;

  FlowField() = default;
  FlowField(int w, int h, FlowDirection dir = {})
      : fx(w, h, 0.f), fy(w, h, 0.f), direction(dir) {}

  int width() const { return fx.width; }
  int height() const { return fx.height; }

  static FlowField constant(int w, int h, float dx, float dy,
                            FlowDirection dir = {0, 1}) {
    FlowField f(w, h, dir);
    std::fill(f.fx.data.begin(), f.fx.data.end(), dx);
    std::fill(f.fy.data.begin(), f.fy.data.end(), dy);
    return f;
  }

  bool all_finite() const {
    for (std::size_t i = 0; i < fx.size(); ++i)
      if (!std::isfinite(fx.data[i]) || !std::isfinite(fy.data[i]))
        return false;
    return true;
  }

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

inline void validate_flow(const FlowField& f) {
  if (!f.fx.same_shape(f.fy))
    throw ValidationError("flow components have different dimensions");
  if (!f.all_finite()) throw ValidationError("flow contains non-finite values");
}

struct ConfidenceMap {
  Raster<float> c;

  ConfidenceMap() = default;
  ConfidenceMap(int w, int h, float fill = 1.f) : c(w, h, fill) {}

  int width() const { return c.width; }
  int height() const { return c.height; }
  float at(int x, int y) const { return c.at(x, y); }
  float& at(int x, int y) { return c.at(x, y); }

  double mean() const {
    if (c.empty()) return 0.0;
    double s = 0;
    for (float v : c.data) s += v;
    return s / static_cast<double>(c.size());
  }

  friend bool operator==(const ConfidenceMap&, const ConfidenceMap&) = default;
};

struct PseudoLabel {
  FrameIndex frame = 0;
  LabelMask mask;
  ConfidenceMap confidence;
  double loss_weight = kKeyFrameLossWeight;
  FrameIndex source_key_frame = 0;
  FrameIndex hop_distance = 0;
  bool covered = true;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double area() const {
    return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min);
  }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  Box clamped(int width, int height) const {
    return {std::clamp(x_min, 0.0, double(width)),
            std::clamp(y_min, 0.0, double(height)),
            std::clamp(x_max, 0.0, double(width)),
            std::clamp(y_max, 0.0, double(height))};
  }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  FrameIndex frame = 0;
  Box box;
  int class_id = 0;
  double score = 1.0;
  // Optional region for mask-IoU matching; pixels != 0 and != void belong to
  // the instance.
  std::optional<LabelMask> mask;
};

// Frame bookkeeping for one video. Phase and step ids exist for every frame;
// only key frames carry spatial annotations.
struct FrameTimeline {
  std::string video_id;
  double fps = 30.0;
  std::vector<FrameIndex> frames;
  std::set<FrameIndex> key_frames;
  std::map<FrameIndex, int> phase_of;
  std::map<FrameIndex, int> step_of;

  bool has_frame(FrameIndex f) const {
    return std::binary_search(frames.begin(), frames.end(), f);
  }
  bool is_key(FrameIndex f) const { return key_frames.contains(f); }
  double seconds(FrameIndex f) const { return static_cast<double>(f) / fps; }
};

struct TimelineViolation {
  std::optional<FrameIndex> frame;
  std::string rule;
  friend bool operator==(const TimelineViolation&,
                         const TimelineViolation&) = default;
};

inline std::vector<TimelineViolation> validate_timeline(const FrameTimeline& t) {
  std::vector<TimelineViolation> out;
  if (!(t.fps > 0) || !std::isfinite(t.fps))
    out.push_back({std::nullopt, "fps must be positive"});
  for (std::size_t i = 0; i < t.frames.size(); ++i) {
    if (t.frames[i] < 0) out.push_back({t.frames[i], "negative frame index"});
    if (i > 0 && t.frames[i] <= t.frames[i - 1])
      out.push_back({t.frames[i], "frames not strictly increasing"});
  }
  for (FrameIndex k : t.key_frames) {
    if (!t.has_frame(k)) out.push_back({k, "key frame not in frames"});
  }
  for (FrameIndex f : t.frames) {
    if (!t.phase_of.contains(f)) out.push_back({f, "missing phase"});
    if (!t.step_of.contains(f)) out.push_back({f, "missing step"});
  }
  return out;
}

struct NearestKey {
  FrameIndex key = 0;
  // frame - key; positive when the key frame precedes the frame.
  FrameIndex distance = 0;
  friend bool operator==(const NearestKey&, const NearestKey&) = default;
};

// Equidistant key frames resolve to the earlier one.
inline NearestKey nearest_key_frame(const FrameTimeline& t, FrameIndex f) {
  if (t.key_frames.empty()) throw ValidationError("timeline has no key frames");
  auto after = t.key_frames.lower_bound(f);
  std::optional<FrameIndex> best;
  if (after != t.key_frames.begin()) best = *std::prev(after);
  if (after != t.key_frames.end()) {
    if (!best || (*after - f) < (f - *best)) best = *after;
  }
  return {*best, f - *best};
}

}  // namespace labelprop
