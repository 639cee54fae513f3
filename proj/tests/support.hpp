#pragma once

// Independent helpers shared by the unit tests and the acceptance binary.
// Nothing here calls into the metric code under test.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "labelprop/core.hpp"
#include "labelprop/synth.hpp"
#include "labelprop/warp.hpp"

namespace testsupport {

using namespace labelprop;

// Pixels whose 8-neighbourhood (clipped to the raster) carries a single gt
// label. Boundary pixels are where backward warping through an estimated
// field legitimately disagrees by a pixel.
inline Raster<std::uint8_t> interior_pixels(const LabelMask& gt) {
  Raster<std::uint8_t> in(gt.width(), gt.height(), 1);
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (gt.ids.contains(x + dx, y + dy) && gt.at(x + dx, y + dy) != gt.at(x, y))
            in.at(x, y) = 0;
  return in;
}

// IoU of class c counted over pixels where `region` is set (all when null).
// Returns 1 for a class absent from both masks in the region.
inline double class_iou(const LabelMask& pred, const LabelMask& gt, LabelId c,
                        const Raster<std::uint8_t>* region = nullptr) {
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.ids.size(); ++i) {
    if (region && !region->data[i]) continue;
    const bool p = pred.ids.data[i] == c, g = gt.ids.data[i] == c;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline FlowProvider analytic_flows(const synth::SynthScene& s) {
  return [&s](FrameIndex a, FrameIndex b) { return s.analytic_flow(a, b); };
}

inline FrameProvider rendered_frames(const synth::SynthScene& s) {
  return [&s](FrameIndex f) { return s.render(f).image; };
}

// Pixels of frame `t` whose surface is hidden (or leaves the canvas) in at
// least one frame between `t` and `key`, walking frame by frame.
inline Raster<std::uint8_t> occlusion_band(const synth::SynthScene& s, FrameIndex key,
                                           FrameIndex t) {
  Raster<std::uint8_t> band(s.width(), s.height(), 0);
  const FrameIndex step = t > key ? -1 : 1;
  std::map<FrameIndex, Raster<std::uint8_t>> vis;
  for (FrameIndex i = t; i != key; i += step) vis[i] = s.visibility(i, i + step);
  for (int y = 0; y < s.height(); ++y)
    for (int x = 0; x < s.width(); ++x) {
      synth::Vec2 p{double(x), double(y)};
      for (FrameIndex i = t; i != key; i += step) {
        const int rx = static_cast<int>(std::floor(p.x + 0.5));
        const int ry = static_cast<int>(std::floor(p.y + 0.5));
        if (!vis[i].contains(rx, ry) || !vis[i].at(rx, ry)) {
          band.at(x, y) = 1;
          break;
        }
        p = s.correspondence({double(rx), double(ry)}, i, i + step);
      }
    }
  return band;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("labelprop_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
