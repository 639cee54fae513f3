#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "labelprop/core.hpp"

namespace labelprop::synth {

// Deterministic uniform [0, 1) from the raw mt19937_64 stream; the standard
// distributions are implementation-defined.
inline double unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Smooth procedural texture: a constant level plus a handful of plane waves.
class Texture {
 public:
  Texture() = default;
  Texture(std::uint64_t seed, double level, double amplitude, int waves = 6) {
    std::mt19937_64 rng(seed);
    level_ = level;
    for (int i = 0; i < waves; ++i) {
      const double wavelength = 6.0 + 10.0 * unit(rng);
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      const double k = 2.0 * std::numbers::pi / wavelength;
      waves_.push_back({k * std::cos(angle), k * std::sin(angle),
                        2.0 * std::numbers::pi * unit(rng),
                        amplitude * (0.5 + 0.5 * unit(rng)) / std::sqrt(waves)});
    }
  }

  double operator()(double x, double y) const {
    double v = level_;
    for (const auto& w : waves_) v += w[3] * std::sin(w[0] * x + w[1] * y + w[2]);
    return v;
  }

 private:
  double level_ = 128.0;
  std::vector<std::array<double, 4>> waves_;  // kx, ky, phase, amplitude
};

enum class ShapeKind { kDisk, kRect };

struct Vec2 {
  double x = 0, y = 0;
};

// Rigid shape: at frame t its center is center + velocity * t and it is
// rotated by spin_deg * t about that center.
struct Shape {
  ShapeKind kind = ShapeKind::kDisk;
  LabelId class_id = 1;
  Vec2 center;
  Vec2 velocity;
  double spin_deg = 0.0;
  double radius = 10.0;      // disk
  double half_w = 8.0;       // rect
  double half_h = 5.0;       // rect
  double intensity = 200.0;  // texture level

  Vec2 center_at(FrameIndex t) const {
    return {center.x + velocity.x * t, center.y + velocity.y * t};
  }
  double angle_at(FrameIndex t) const {
    return spin_deg * std::numbers::pi / 180.0 * t;
  }
  Vec2 to_local(Vec2 p, FrameIndex t) const {
    const Vec2 c = center_at(t);
    const double a = angle_at(t), dx = p.x - c.x, dy = p.y - c.y;
    return {std::cos(a) * dx + std::sin(a) * dy,
            -std::sin(a) * dx + std::cos(a) * dy};
  }
  Vec2 to_world(Vec2 l, FrameIndex t) const {
    const Vec2 c = center_at(t);
    const double a = angle_at(t);
    return {c.x + std::cos(a) * l.x - std::sin(a) * l.y,
            c.y + std::sin(a) * l.x + std::cos(a) * l.y};
  }
  bool contains_local(Vec2 l) const {
    if (kind == ShapeKind::kDisk) return l.x * l.x + l.y * l.y <= radius * radius;
    return std::abs(l.x) <= half_w && std::abs(l.y) <= half_h;
  }
  bool contains(Vec2 p, FrameIndex t) const {
    return contains_local(to_local(p, t));
  }
};

struct SceneFrame {
  GrayImage image;
  LabelMask mask;
};

// Moving textured shapes over a static textured background, with exact
// per-pixel correspondences between any two frames. Shapes later in the list
// are drawn on top. Background pixels carry class 0.
class SynthScene {
 public:
  struct Config {
    int width = 64;
    int height = 64;
    int frame_count = 31;
    int key_period = 30;
    double fps = 30.0;
    std::uint64_t seed = 7;
    std::vector<Shape> shapes;
  };

  explicit SynthScene(Config cfg) : cfg_(std::move(cfg)) {
    if (cfg_.width < 8 || cfg_.height < 8)
      throw ValidationError("synthetic canvas must be at least 8x8");
    if (cfg_.frame_count < 1 || cfg_.key_period < 1)
      throw ValidationError("frame_count and key_period must be positive");
    background_ = Texture(cfg_.seed, 110.0, 60.0);
    for (std::size_t i = 0; i < cfg_.shapes.size(); ++i) {
      const Shape& s = cfg_.shapes[i];
      if (s.class_id == 0 || s.class_id == kVoidId)
        throw ValidationError("shape class id must be in 1..254");
      textures_.emplace_back(cfg_.seed * 1000003ULL + 17 * (i + 1), s.intensity,
                             50.0);
      for (FrameIndex t = 0; t < cfg_.frame_count; ++t) check_in_canvas(s, t);
    }
  }

  const Config& config() const { return cfg_; }
  int width() const { return cfg_.width; }
  int height() const { return cfg_.height; }
  int frame_count() const { return cfg_.frame_count; }

  int class_count() const {
    int c = 1;
    for (const auto& s : cfg_.shapes) c = std::max(c, int(s.class_id) + 1);
    return c;
  }

  // Index of the topmost shape covering p at frame t, -1 for background.
  int surface_at(Vec2 p, FrameIndex t) const {
    for (int i = static_cast<int>(cfg_.shapes.size()) - 1; i >= 0; --i)
      if (cfg_.shapes[i].contains(p, t)) return i;
    return -1;
  }

  SceneFrame render(FrameIndex t) const {
    SceneFrame f{GrayImage(cfg_.width, cfg_.height),
                 LabelMask(cfg_.width, cfg_.height, 0)};
    for (int y = 0; y < cfg_.height; ++y)
      for (int x = 0; x < cfg_.width; ++x) {
        const Vec2 p{double(x), double(y)};
        const int s = surface_at(p, t);
        double v;
        if (s < 0) {
          v = background_(p.x, p.y);
        } else {
          const Vec2 l = cfg_.shapes[s].to_local(p, t);
          v = textures_[s](l.x, l.y);
          f.mask.at(x, y) = cfg_.shapes[s].class_id;
        }
        f.image.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 255.0));
      }
    return f;
  }

  // Where the surface visible at (p, from) sits in frame `to`.
  Vec2 correspondence(Vec2 p, FrameIndex from, FrameIndex to) const {
    const int s = surface_at(p, from);
    if (s < 0) return p;
    return cfg_.shapes[s].to_world(cfg_.shapes[s].to_local(p, from), to);
  }

  // Exact displacement of each pixel's visible surface from `from` to `to`.
  FlowField analytic_flow(FrameIndex from, FrameIndex to) const {
    FlowField f(cfg_.width, cfg_.height, {from, to});
    for (int y = 0; y < cfg_.height; ++y)
      for (int x = 0; x < cfg_.width; ++x) {
        const Vec2 q = correspondence({double(x), double(y)}, from, to);
        f.fx.at(x, y) = static_cast<float>(q.x - x);
        f.fy.at(x, y) = static_cast<float>(q.y - y);
      }
    return f;
  }

  // 1 where the surface seen at pixel q in `from` is also the visible surface
  // at its corresponding location in `to` (and that location is on-canvas).
  Raster<std::uint8_t> visibility(FrameIndex from, FrameIndex to) const {
    Raster<std::uint8_t> v(cfg_.width, cfg_.height, 0);
    for (int y = 0; y < cfg_.height; ++y)
      for (int x = 0; x < cfg_.width; ++x) {
        const Vec2 p{double(x), double(y)};
        const Vec2 q = correspondence(p, from, to);
        const Vec2 r{std::floor(q.x + 0.5), std::floor(q.y + 0.5)};
        if (r.x < 0 || r.y < 0 || r.x > cfg_.width - 1 || r.y > cfg_.height - 1)
          continue;
        v.at(x, y) = surface_at(p, from) == surface_at(r, to);
      }
    return v;
  }

  FrameTimeline timeline(const std::string& video_id = "synth") const {
    FrameTimeline t;
    t.video_id = video_id;
    t.fps = cfg_.fps;
    for (FrameIndex f = 0; f < cfg_.frame_count; ++f) {
      t.frames.push_back(f);
      if (f % cfg_.key_period == 0) t.key_frames.insert(f);
      t.phase_of[f] = f < cfg_.frame_count / 2 ? 0 : 1;
      t.step_of[f] = static_cast<int>((f / 10) % 3);
    }
    return t;
  }

 private:
  void check_in_canvas(const Shape& s, FrameIndex t) const {
    std::vector<Vec2> extent;
    if (s.kind == ShapeKind::kDisk) {
      extent = {{-s.radius, 0}, {s.radius, 0}, {0, -s.radius}, {0, s.radius}};
    } else {
      extent = {{-s.half_w, -s.half_h}, {s.half_w, -s.half_h},
                {-s.half_w, s.half_h}, {s.half_w, s.half_h}};
    }
    for (Vec2 l : extent) {
      if (s.kind == ShapeKind::kDisk) {
        const Vec2 c = s.center_at(t);
        l = {c.x + l.x, c.y + l.y};
      } else {
        l = s.to_world(l, t);
      }
      if (l.x < 0 || l.y < 0 || l.x > cfg_.width - 1 || l.y > cfg_.height - 1)
        throw ValidationError("shape leaves the canvas at frame " +
                              std::to_string(t));
    }
  }

  Config cfg_;
  Texture background_;
  std::vector<Texture> textures_;
};

// Disk and rectangle translating by whole pixels in opposite directions,
// never overlapping.
inline SynthScene::Config translation_scene(std::uint64_t seed = 7) {
  SynthScene::Config c;
  c.seed = seed;
  Shape disk;
  disk.kind = ShapeKind::kDisk;
  disk.class_id = 1;
  disk.center = {16, 44};
  disk.velocity = {1, 0};
  disk.radius = 10;
  disk.intensity = 190;
  Shape rect;
  rect.kind = ShapeKind::kRect;
  rect.class_id = 2;
  rect.center = {46, 12};
  rect.velocity = {-1, 0};
  rect.half_w = 8;
  rect.half_h = 6;
  rect.intensity = 60;
  c.shapes = {disk, rect};
  return c;
}

inline SynthScene::Config static_scene(std::uint64_t seed = 7) {
  auto c = translation_scene(seed);
  for (auto& s : c.shapes) s.velocity = {0, 0};
  return c;
}

// Two bars crossing: the horizontal one slides right underneath the vertical
// one sliding down, so parts of each are hidden in some frames.
inline SynthScene::Config crossing_scene(std::uint64_t seed = 11) {
  SynthScene::Config c;
  c.seed = seed;
  c.frame_count = 21;
  c.key_period = 20;
  Shape under;
  under.kind = ShapeKind::kRect;
  under.class_id = 1;
  under.center = {14, 32};
  under.velocity = {1, 0};
  under.half_w = 11;
  under.half_h = 4;
  under.intensity = 190;
  Shape over;
  over.kind = ShapeKind::kRect;
  over.class_id = 2;
  over.center = {34, 14};
  over.velocity = {0, 1};
  over.half_w = 4;
  over.half_h = 11;
  over.intensity = 50;
  c.shapes = {under, over};
  return c;
}

}  // namespace labelprop::synth
