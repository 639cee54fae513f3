#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "labelprop/core.hpp"

namespace labelprop {

// Per-pixel class distribution from an external segmentation model, stored
// as C planes of width*height values.
struct ProbMap {
  int width = 0;
  int height = 0;
  int classes = 0;
  std::vector<float> p;

  ProbMap() = default;
  ProbMap(int w, int h, int c, float fill = 0.f)
      : width(w), height(h), classes(c),
        p(static_cast<std::size_t>(w) * h * c, fill) {
    if (w < 0 || h < 0 || c < 0) throw ValidationError("negative ProbMap shape");
  }

  float& at(int c, int x, int y) {
    return p[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int x, int y) const {
    return p[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  // Most probable class; ties resolve to the lowest class index.
  int argmax(int x, int y) const {
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (at(c, x, y) > at(best, x, y)) best = c;
    return best;
  }

  friend bool operator==(const ProbMap&, const ProbMap&) = default;
};

inline constexpr double kProbSumTolerance = 1e-4;

inline void validate_prob_map(const ProbMap& m) {
  if (m.classes < 1 || m.classes > kVoidId)
    throw ValidationError("ProbMap class count must be in 1..254");
  if (m.p.size() != static_cast<std::size_t>(m.width) * m.height * m.classes)
    throw ValidationError("ProbMap data size does not match its shape");
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      double sum = 0;
      for (int c = 0; c < m.classes; ++c) {
        const float v = m.at(c, x, y);
        if (!std::isfinite(v) || v < 0.f)
          throw ValidationError("ProbMap entry at (" + std::to_string(x) + "," +
                                std::to_string(y) + ") is negative or non-finite");
        sum += v;
      }
      if (std::abs(sum - 1.0) > kProbSumTolerance)
        throw ValidationError("ProbMap is not normalized at (" + std::to_string(x) +
                              "," + std::to_string(y) + ")");
    }
}

struct FusionParams {
  double tau_flow = 0.7;
  double tau_seg = 0.9;
  int min_component_px = 64;
  int morph_radius = 1;

  void validate() const {
    if (!(tau_flow >= 0.0 && tau_flow <= 1.0))
      throw ValidationError("tau_flow must be in [0, 1]");
    if (!(tau_seg >= 0.0 && tau_seg <= 1.0))
      throw ValidationError("tau_seg must be in [0, 1]");
    if (min_component_px < 0) throw ValidationError("min_component_px must be >= 0");
    if (morph_radius < 0) throw ValidationError("morph_radius must be >= 0");
  }
};

struct FusedLabel {
  LabelMask mask;
  ConfidenceMap confidence;
};

// Which of the four fusion rules decided a pixel.
enum class FusionRule : std::uint8_t { kAgreement, kFlowTrust, kSegTrust, kVoid };

// Decides one pixel. `a` is the warped class (void allowed), `s` the
// predicted class with probability `m`.
inline FusionRule fusion_rule(LabelId a, int s, double c_flow, double m,
                              const FusionParams& p) {
  if (a != kVoidId && a == s) return FusionRule::kAgreement;
  if (a != kVoidId && c_flow >= p.tau_flow) return FusionRule::kFlowTrust;
  if (m >= p.tau_seg) return FusionRule::kSegTrust;
  return FusionRule::kVoid;
}

// Merges a warped mask with a prediction. Instance masks are compared at the
// class level; a pixel taken from the prediction receives an instance id
// only when the warped mask holds exactly one instance of that class,
// otherwise it becomes void.
inline FusedLabel fuse(const LabelMask& warped, const ConfidenceMap& c_flow,
                       const ProbMap& prob, const FusionParams& params) {
  params.validate();
  validate_mask(warped);
  validate_prob_map(prob);
  const int w = warped.width(), h = warped.height();
  if (!c_flow.c.same_shape(w, h) || prob.width != w || prob.height != h)
    throw ValidationError("fusion inputs have mismatched dimensions");
  for (LabelId id : warped.labels_present()) {
    const LabelId cls = warped.class_of(id);
    if (cls >= prob.classes)
      throw ValidationError("label class " + std::to_string(cls) +
                            " is outside the probability map's " +
                            std::to_string(prob.classes) + " classes");
  }

  const bool instance = warped.kind == MaskKind::kInstance;
  std::map<LabelId, int> instances_per_class;
  std::map<LabelId, LabelId> sole_instance;
  if (instance) {
    for (LabelId id : warped.labels_present()) {
      const LabelId cls = warped.class_of(id);
      ++instances_per_class[cls];
      sole_instance[cls] = id;
    }
  }
  auto id_for_class = [&](int cls) -> LabelId {
    if (!instance) return static_cast<LabelId>(cls);
    auto it = instances_per_class.find(static_cast<LabelId>(cls));
    if (it == instances_per_class.end() || it->second != 1) return kVoidId;
    return sole_instance.at(static_cast<LabelId>(cls));
  };

  FusedLabel out{LabelMask(w, h, kVoidId), ConfidenceMap(w, h, 0.f)};
  out.mask.kind = warped.kind;
  out.mask.class_of_instance = warped.class_of_instance;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const LabelId raw = warped.at(x, y);
      const LabelId a = warped.class_of(raw);
      const int s = prob.argmax(x, y);
      const double m = prob.at(s, x, y);
      const double c = c_flow.at(x, y);
      switch (fusion_rule(a, s, c, m, params)) {
        case FusionRule::kAgreement:
          out.mask.at(x, y) = raw;
          out.confidence.at(x, y) = static_cast<float>(std::max(c, m));
          break;
        case FusionRule::kFlowTrust:
          out.mask.at(x, y) = raw;
          out.confidence.at(x, y) = static_cast<float>(c);
          break;
        case FusionRule::kSegTrust: {
          const LabelId id = id_for_class(s);
          out.mask.at(x, y) = id;
          out.confidence.at(x, y) = id == kVoidId ? 0.f : static_cast<float>(m);
          break;
        }
        case FusionRule::kVoid:
          break;
      }
    }
  return out;
}

namespace detail {

using Binary = Raster<std::uint8_t>;

// Offsets of the digital disk dx^2 + dy^2 <= (r + 0.5)^2; radius 1 is the
// full 3x3 square.
inline std::vector<std::pair<int, int>> disk_offsets(int r) {
  std::vector<std::pair<int, int>> out;
  const double lim = (r + 0.5) * (r + 0.5);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= lim) out.emplace_back(dx, dy);
  return out;
}

// Neighbours outside the raster are ignored by both operators, so borders
// neither erode nor grow.
inline Binary erode(const Binary& in, const std::vector<std::pair<int, int>>& se) {
  Binary out(in.width, in.height, 0);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      if (!in.at(x, y)) continue;
      bool keep = true;
      for (auto [dx, dy] : se) {
        const int X = x + dx, Y = y + dy;
        if (in.contains(X, Y) && !in.at(X, Y)) {
          keep = false;
          break;
        }
      }
      out.at(x, y) = keep;
    }
  return out;
}

inline Binary dilate(const Binary& in, const std::vector<std::pair<int, int>>& se) {
  Binary out(in.width, in.height, 0);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      if (!in.at(x, y)) continue;
      for (auto [dx, dy] : se) {
        const int X = x + dx, Y = y + dy;
        if (in.contains(X, Y)) out.at(X, Y) = 1;
      }
    }
  return out;
}

// 8-connected component labelling of `mask` == id. Returns per-pixel
// component index (-1 outside) and component sizes.
inline std::pair<Raster<int>, std::vector<int>> components(const Raster<LabelId>& m,
                                                           LabelId id) {
  Raster<int> comp(m.width, m.height, -1);
  std::vector<int> sizes;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (m.at(x, y) != id || comp.at(x, y) >= 0) continue;
      const int c = static_cast<int>(sizes.size());
      sizes.push_back(0);
      stack.push_back({x, y});
      comp.at(x, y) = c;
      while (!stack.empty()) {
        auto [px, py] = stack.back();
        stack.pop_back();
        ++sizes[c];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int X = px + dx, Y = py + dy;
            if (m.contains(X, Y) && m.at(X, Y) == id && comp.at(X, Y) < 0) {
              comp.at(X, Y) = c;
              stack.push_back({X, Y});
            }
          }
      }
    }
  return {std::move(comp), std::move(sizes)};
}

inline LabelMask refine_pass(const LabelMask& in, const FusionParams& p,
                             const ConfidenceMap* conf) {
  const int w = in.width(), h = in.height();
  const auto se = disk_offsets(p.morph_radius);
  const auto labels = in.labels_present();

  // Per-label priority used where several filtered labels overlap: mean
  // confidence over the label's pixels when available, else its area.
  std::map<LabelId, double> priority;
  {
    std::map<LabelId, std::pair<double, long>> acc;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const LabelId l = in.at(x, y);
        if (l == kVoidId) continue;
        acc[l].first += conf ? conf->at(x, y) : 1.0;
        ++acc[l].second;
      }
    for (auto& [l, a] : acc) priority[l] = conf ? a.first / a.second : a.first;
  }

  Raster<LabelId> winner(w, h, kVoidId);
  for (LabelId l : labels) {
    Binary b(w, h, 0);
    for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = in.ids.data[i] == l;
    b = dilate(erode(b, se), se);
    b = erode(dilate(b, se), se);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!b.at(x, y)) continue;
        LabelId& cur = winner.at(x, y);
        const LabelId own = in.at(x, y);
        if (l == own || cur == kVoidId) {
          cur = l;
        } else if (cur != own && priority[l] > priority[cur]) {
          cur = l;  // equal priority keeps the lower id seen first
        }
      }
  }

  LabelMask out = in;
  out.ids = winner;
  for (LabelId l : labels) {
    auto [comp, sizes] = components(out.ids, l);
    for (std::size_t i = 0; i < comp.size(); ++i)
      if (comp.data[i] >= 0 && sizes[comp.data[i]] < p.min_component_px)
        out.ids.data[i] = kVoidId;
  }
  return out;
}

}  // namespace detail

inline constexpr int kMaxRefinePasses = 32;

// Opening then closing per label, winner selection where filtered labels
// overlap (a pixel's own label first, then higher priority, then lower id),
// and removal of small 8-connected components. The pass repeats until the
// mask stops changing, which makes refine idempotent. `conf`, when given,
// sets label priority by mean confidence; otherwise larger labels win.
inline LabelMask refine(const LabelMask& mask, const FusionParams& params,
                        const ConfidenceMap* conf = nullptr) {
  params.validate();
  validate_mask(mask);
  if (conf && !conf->c.same_shape(mask.width(), mask.height()))
    throw ValidationError("refine confidence has mismatched dimensions");
  LabelMask cur = mask;
  for (int i = 0; i < kMaxRefinePasses; ++i) {
    LabelMask next = detail::refine_pass(cur, params, conf);
    if (next == cur) return cur;
    cur = std::move(next);
  }
  return cur;
}

inline PseudoLabel emit_pseudo_label(const LabelMask& fused, const ConfidenceMap& conf,
                                     const FrameTimeline& t, FrameIndex frame,
                                     FrameIndex source_key, FrameIndex hop,
                                     double pseudo_weight = kDefaultPseudoLossWeight,
                                     bool covered = true) {
  if (!t.has_frame(frame))
    throw ValidationError("frame " + std::to_string(frame) + " is not in the timeline");
  if (!conf.c.same_shape(fused.width(), fused.height()))
    throw ValidationError("pseudo-label confidence has mismatched dimensions");
  if (!(pseudo_weight >= 0.0) || !std::isfinite(pseudo_weight))
    throw ValidationError("pseudo-label weight must be finite and >= 0");
  PseudoLabel out;
  out.frame = frame;
  out.mask = fused;
  out.confidence = conf;
  out.loss_weight = t.is_key(frame) ? kKeyFrameLossWeight : pseudo_weight;
  out.source_key_frame = source_key;
  out.hop_distance = hop;
  out.covered = covered;
  return out;
}

}  // namespace labelprop
