#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "labelprop/core.hpp"
#include "labelprop/flow.hpp"
#include "labelprop/parallel.hpp"
#include "labelprop/sampling.hpp"

namespace labelprop {

struct WarpResult {
  LabelMask mask;
  ConfidenceMap confidence;
};

// Backward warp: out(q) = key_mask(round(q + F(q))) where F runs from the
// target frame to `key_frame`. Lookups that leave the raster yield void with
// zero confidence.
inline WarpResult warp_mask(const LabelMask& key_mask, FrameIndex key_frame,
                            const FlowField& flow_tk, const ConfidenceMap& conf) {
  const int w = key_mask.width(), h = key_mask.height();
  if (!flow_tk.fx.same_shape(w, h) || !conf.c.same_shape(w, h))
    throw ValidationError("warp inputs have mismatched dimensions");
  if (flow_tk.direction.target != key_frame)
    throw ValidationError("warp flow must point from the target frame to key frame " +
                          std::to_string(key_frame));
  WarpResult out{LabelMask(w, h, kVoidId), ConfidenceMap(w, h, 0.f)};
  out.mask.kind = key_mask.kind;
  out.mask.class_of_instance = key_mask.class_of_instance;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = round_half_up(x + double(flow_tk.fx.at(x, y)));
      const int sy = round_half_up(y + double(flow_tk.fy.at(x, y)));
      if (!key_mask.ids.contains(sx, sy)) continue;
      out.mask.at(x, y) = key_mask.at(sx, sy);
      out.confidence.at(x, y) = conf.at(x, y);
    }
  return out;
}

// Supplies the displacement field from frame `from` to frame `to`; throws
// when the pair is unavailable. Must be safe to call concurrently.
using FlowProvider = std::function<FlowField(FrameIndex from, FrameIndex to)>;

// Supplies the grayscale image of a frame. Must be safe to call concurrently.
using FrameProvider = std::function<GrayImage(FrameIndex frame)>;

enum class FlowRoute {
  kDirect,   // one field straight from the target to its key frame
  kChained,  // labels carried frame by frame along adjacent-frame fields
};

inline std::string to_string(FlowRoute r) {
  return r == FlowRoute::kDirect ? "direct" : "chained";
}

inline FlowRoute parse_flow_route(const std::string& s) {
  if (s == "direct") return FlowRoute::kDirect;
  if (s == "chained") return FlowRoute::kChained;
  throw ValidationError("unknown flow route '" + s + "'");
}

struct PropagationConfig {
  FrameIndex max_hop = 15;
  FlowRoute route = FlowRoute::kChained;
  ConsistencyParams consistency;
  // Void pixels flagged as occluded instead of only zeroing their confidence.
  bool gate_inconsistent = true;
  // Pixels whose intensity differs from the intensity they are warped from by
  // more than this many gray levels count as occluded. Needs `frames`;
  // values <= 0 switch the check off.
  double photometric_tolerance = 6.0;
  FrameProvider frames;
  int jobs = 1;
};

struct PropagatedLabel {
  LabelMask mask;
  ConfidenceMap confidence;
  FrameIndex source_key_frame = 0;
  FrameIndex hop_distance = 0;
  bool covered = true;
};

namespace detail {

struct HopInput {
  const LabelMask* mask;
  const ConfidenceMap* confidence;
  FrameIndex source;
  FlowField to_source;    // target -> source
  FlowField from_source;  // source -> target
  std::optional<GrayImage> target_image, source_image;
};

// Moves a labelled frame one hop. A pixel is treated as occluded when any of
// three cues fires: the forward-backward test fails; no source pixel carrying
// the same label lands on it under the source -> target field; or its
// intensity does not match the intensity it is read from.
inline WarpResult warp_hop(const HopInput& in, const PropagationConfig& cfg) {
  const int w = in.mask->width(), h = in.mask->height();
  const auto fb =
      forward_backward_confidence(in.to_source, in.from_source, cfg.consistency);
  auto out = warp_mask(*in.mask, in.source, in.to_source, fb.confidence);

  Raster<std::uint8_t> supported(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const LabelId l = in.mask->at(x, y);
      if (l == kVoidId) continue;
      const int tx = round_half_up(x + double(in.from_source.fx.at(x, y)));
      const int ty = round_half_up(y + double(in.from_source.fy.at(x, y)));
      if (supported.contains(tx, ty) && out.mask.at(tx, ty) == l)
        supported.at(tx, ty) = 1;
    }

  const bool photometric = cfg.photometric_tolerance > 0 && in.target_image &&
                           in.source_image;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (out.mask.at(x, y) == kVoidId) {
        out.confidence.at(x, y) = 0.f;
        continue;
      }
      const double sx = x + double(in.to_source.fx.at(x, y));
      const double sy = y + double(in.to_source.fy.at(x, y));
      bool occluded = !fb.valid.at(x, y) || !supported.at(x, y);
      if (!occluded && photometric) {
        const double r = in.target_image->at(x, y) -
                         sample_bilinear(*in.source_image, sx, sy);
        occluded = std::abs(r) > cfg.photometric_tolerance;
      }
      if (occluded) {
        out.confidence.at(x, y) = 0.f;
        if (cfg.gate_inconsistent) out.mask.at(x, y) = kVoidId;
        continue;
      }
      out.confidence.at(x, y) *=
          in.confidence->at(round_half_up(sx), round_half_up(sy));
    }
  return out;
}

}  // namespace detail

// Sequences of frames labelled one after another: the key frame first, then
// each target in order. On the chained route a key frame seeds one run
// forward and one backward through the timeline, continuing while visited
// frames keep that key as their nearest and lie within max_hop. The direct
// route has one two-frame run per covered target. Consecutive entries are the
// frame pairs whose fields are needed in both directions.
inline std::vector<std::vector<FrameIndex>> propagation_runs(const FrameTimeline& t,
                                                             FrameIndex max_hop,
                                                             FlowRoute route) {
  std::vector<std::vector<FrameIndex>> runs;
  if (route == FlowRoute::kDirect) {
    for (FrameIndex f : t.frames) {
      const NearestKey nk = nearest_key_frame(t, f);
      if (nk.distance != 0 && std::abs(nk.distance) <= max_hop)
        runs.push_back({nk.key, f});
    }
    return runs;
  }
  const auto n = static_cast<std::ptrdiff_t>(t.frames.size());
  for (FrameIndex k : t.key_frames) {
    const auto pos =
        std::lower_bound(t.frames.begin(), t.frames.end(), k) - t.frames.begin();
    for (const std::ptrdiff_t step : {std::ptrdiff_t{1}, std::ptrdiff_t{-1}}) {
      std::vector<FrameIndex> run{k};
      for (auto i = pos + step; i >= 0 && i < n; i += step) {
        const NearestKey nk = nearest_key_frame(t, t.frames[i]);
        if (nk.key != k || std::abs(nk.distance) > max_hop) break;
        run.push_back(t.frames[i]);
      }
      if (run.size() > 1) runs.push_back(std::move(run));
    }
  }
  return runs;
}

// Carries key-frame masks to every frame within max_hop of its nearest key
// frame. Frames further away come back all-void with covered = false.
// Every frame of a run is labelled from its predecessor, so confidence
// multiplies hop by hop. Runs share no state and execute in parallel; each
// one is sequential, which keeps results independent of scheduling.
inline std::map<FrameIndex, PropagatedLabel> propagate_labels(
    const FrameTimeline& t, const std::map<FrameIndex, LabelMask>& key_masks,
    const FlowProvider& flows, const PropagationConfig& cfg) {
  if (cfg.max_hop < 1) throw ValidationError("max_hop must be >= 1");
  cfg.consistency.validate();
  if (t.key_frames.empty()) throw ValidationError("timeline has no key frames");
  for (const auto& v : validate_timeline(t)) {
    // Phase and step annotations do not matter for propagation.
    if (v.rule == "missing phase" || v.rule == "missing step") continue;
    throw ValidationError("invalid timeline: " + v.rule +
                          (v.frame ? " at frame " + std::to_string(*v.frame) : ""));
  }
  int w = -1, h = -1;
  for (FrameIndex k : t.key_frames) {
    auto it = key_masks.find(k);
    if (it == key_masks.end())
      throw ValidationError("missing mask for key frame " + std::to_string(k));
    validate_mask(it->second);
    if (w < 0) {
      w = it->second.width();
      h = it->second.height();
    } else if (it->second.width() != w || it->second.height() != h) {
      throw ValidationError("key frame masks differ in size");
    }
  }

  std::map<FrameIndex, PropagatedLabel> out;
  for (FrameIndex f : t.frames) {
    const NearestKey nk = nearest_key_frame(t, f);
    PropagatedLabel& p = out[f];
    p.source_key_frame = nk.key;
    p.hop_distance = std::abs(nk.distance);
    p.covered = p.hop_distance <= cfg.max_hop;
    const LabelMask& key_mask = key_masks.at(nk.key);
    if (nk.distance == 0) {
      p.mask = key_mask;
      p.confidence = ConfidenceMap(w, h, 1.f);
    } else if (!p.covered) {
      p.mask = LabelMask(w, h, kVoidId);
      p.mask.kind = key_mask.kind;
      p.mask.class_of_instance = key_mask.class_of_instance;
      p.confidence = ConfidenceMap(w, h, 0.f);
    }
  }
  const auto runs = propagation_runs(t, cfg.max_hop, cfg.route);

  auto fetch_flow = [&](FrameIndex a, FrameIndex b) {
    FlowField f = flows(a, b);
    if (!f.fx.same_shape(w, h))
      throw ValidationError("flow " + std::to_string(a) + "->" + std::to_string(b) +
                            " does not match mask size");
    validate_flow(f);
    f.direction = {a, b};
    return f;
  };
  const bool photometric = cfg.photometric_tolerance > 0 && bool(cfg.frames);
  auto fetch_image = [&](FrameIndex f) -> std::optional<GrayImage> {
    if (!photometric) return std::nullopt;
    GrayImage img = cfg.frames(f);
    if (!img.same_shape(w, h))
      throw ValidationError("frame " + std::to_string(f) +
                            " does not match mask size");
    return img;
  };

  // Each run writes only to its own targets, which were all inserted above,
  // so the map structure is not modified concurrently.
  parallel_for(runs.size(), cfg.jobs, [&](std::size_t r) {
    const auto& run = runs[r];
    const LabelMask* mask = &key_masks.at(run[0]);
    const ConfidenceMap key_conf(w, h, 1.f);
    const ConfidenceMap* conf = &key_conf;
    std::optional<GrayImage> source_image = fetch_image(run[0]);
    for (std::size_t i = 1; i < run.size(); ++i) {
      const FrameIndex source = run[i - 1];
      detail::HopInput in{mask,
                          conf,
                          source,
                          fetch_flow(run[i], source),
                          fetch_flow(source, run[i]),
                          fetch_image(run[i]),
                          std::move(source_image)};
      auto hop = detail::warp_hop(in, cfg);
      PropagatedLabel& p = out.at(run[i]);
      p.mask = std::move(hop.mask);
      p.confidence = std::move(hop.confidence);
      mask = &p.mask;
      conf = &p.confidence;
      source_image = std::move(in.target_image);
    }
  });
  return out;
}

}  // namespace labelprop
