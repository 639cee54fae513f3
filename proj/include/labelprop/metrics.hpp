#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "labelprop/core.hpp"

namespace labelprop {

// ---------------------------------------------------------------------------
// Segmentation overlap. Ground-truth void pixels are ignored; a void
// prediction on a labelled pixel counts as a miss.

struct OverlapCounts {
  long long intersection = 0;
  long long union_ = 0;
};

inline void check_same_shape(const LabelMask& a, const LabelMask& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw ValidationError("prediction and ground truth differ in size");
}

inline OverlapCounts overlap_counts(const LabelMask& pred, const LabelMask& gt,
                                    LabelId class_id) {
  check_same_shape(pred, gt);
  OverlapCounts c;
  for (std::size_t i = 0; i < gt.ids.size(); ++i) {
    const LabelId g = gt.class_of(gt.ids.data[i]);
    if (g == kVoidId) continue;
    const bool p_in = pred.class_of(pred.ids.data[i]) == class_id;
    const bool g_in = g == class_id;
    c.intersection += p_in && g_in;
    c.union_ += p_in || g_in;
  }
  return c;
}

// Empty when the class is absent from both masks.
inline std::optional<double> iou_semantic(const LabelMask& pred, const LabelMask& gt,
                                          LabelId class_id) {
  const auto c = overlap_counts(pred, gt, class_id);
  if (c.union_ == 0) return std::nullopt;
  return static_cast<double>(c.intersection) / static_cast<double>(c.union_);
}

inline void check_pairs(const std::vector<LabelMask>& preds,
                        const std::vector<LabelMask>& gts) {
  if (preds.size() != gts.size())
    throw ValidationError("prediction and ground-truth counts differ");
}

// Mean over images of the mean IoU over `classes` present in that image's
// ground truth. Images without any such class are skipped.
inline std::optional<double> miou(const std::vector<LabelMask>& preds,
                                  const std::vector<LabelMask>& gts,
                                  const std::set<LabelId>& classes) {
  check_pairs(preds, gts);
  double total = 0;
  std::size_t images = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    std::set<LabelId> present;
    for (LabelId v : gts[i].ids.data) {
      const LabelId c = gts[i].class_of(v);
      if (classes.contains(c)) present.insert(c);
    }
    if (present.empty()) {
      check_same_shape(preds[i], gts[i]);
      continue;
    }
    double sum = 0;
    for (LabelId c : present) sum += *iou_semantic(preds[i], gts[i], c);
    total += sum / static_cast<double>(present.size());
    ++images;
  }
  if (images == 0) return std::nullopt;
  return total / static_cast<double>(images);
}

// Per-class IoU with intersections and unions pooled over the whole set.
inline std::map<LabelId, double> pooled_class_iou(const std::vector<LabelMask>& preds,
                                                  const std::vector<LabelMask>& gts,
                                                  const std::set<LabelId>& classes) {
  check_pairs(preds, gts);
  std::map<LabelId, OverlapCounts> acc;
  for (std::size_t i = 0; i < gts.size(); ++i)
    for (LabelId c : classes) {
      const auto o = overlap_counts(preds[i], gts[i], c);
      acc[c].intersection += o.intersection;
      acc[c].union_ += o.union_;
    }
  std::map<LabelId, double> out;
  for (const auto& [c, o] : acc)
    if (o.union_ > 0)
      out[c] = static_cast<double>(o.intersection) / static_cast<double>(o.union_);
  return out;
}

inline std::optional<double> mciou(const std::vector<LabelMask>& preds,
                                   const std::vector<LabelMask>& gts,
                                   const std::set<LabelId>& classes) {
  const auto per_class = pooled_class_iou(preds, gts, classes);
  if (per_class.empty()) return std::nullopt;
  double sum = 0;
  for (const auto& [c, v] : per_class) sum += v;
  return sum / static_cast<double>(per_class.size());
}

// ---------------------------------------------------------------------------
// Ranking metrics.

struct PRPoint {
  double recall = 0;
  double precision = 0;
  double score = 0;  // lowest score admitted at this operating point
  friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

struct RankedItem {
  double score = 0;
  bool positive = false;
};

// Precision/recall after each group of equal scores, highest score first.
// Items must already be sorted by descending score.
inline std::vector<PRPoint> pr_curve(const std::vector<RankedItem>& sorted,
                                     std::size_t total_positives) {
  std::vector<PRPoint> curve;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      tp += sorted[j].positive;
      ++j;
    }
    seen = j;
    curve.push_back({total_positives ? double(tp) / double(total_positives) : 0.0,
                     double(tp) / double(seen), sorted[i].score});
    i = j;
  }
  return curve;
}

// Area under the all-points precision envelope.
inline double average_precision(const std::vector<PRPoint>& curve) {
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    double envelope = 0;
    for (std::size_t j = i; j < curve.size(); ++j)
      envelope = std::max(envelope, curve[j].precision);
    ap += (curve[i].recall - prev_recall) * envelope;
    prev_recall = curve[i].recall;
  }
  return ap;
}

// ---------------------------------------------------------------------------
// Instance detection.

inline constexpr double kDefaultDetectionIoU = 0.5;

enum class MatchKernel { kBox, kMask };

struct GroundTruthInstance {
  FrameIndex frame = 0;
  Box box;
  int class_id = 0;
  std::optional<LabelMask> mask;
};

inline double box_iou(const Box& a, const Box& b) {
  const Box i{std::max(a.x_min, b.x_min), std::max(a.y_min, b.y_min),
              std::min(a.x_max, b.x_max), std::min(a.y_max, b.y_max)};
  const double inter = i.valid() ? i.area() : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline bool instance_pixel(LabelId v) { return v != 0 && v != kVoidId; }

inline double mask_iou(const LabelMask& a, const LabelMask& b) {
  check_same_shape(a, b);
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    const bool p = instance_pixel(a.ids.data[i]), q = instance_pixel(b.ids.data[i]);
    inter += p && q;
    uni += p || q;
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

struct ClassAP {
  int gt_count = 0;
  int detection_count = 0;
  std::optional<double> ap;  // empty when the class has no ground truth
  std::vector<PRPoint> curve;
};

struct DetectionReport {
  double iou_threshold = kDefaultDetectionIoU;
  std::map<int, ClassAP> per_class;
  std::optional<double> map;
};

// Detections are visited by descending score (input order breaks ties) and
// each claims the still-unmatched ground truth of its class and frame with
// the highest overlap, provided that overlap reaches the threshold.
inline DetectionReport detection_ap(const std::vector<Detection>& dets,
                                    const std::vector<GroundTruthInstance>& gts,
                                    double iou_threshold = kDefaultDetectionIoU,
                                    MatchKernel kernel = MatchKernel::kBox) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw ValidationError("IoU threshold must be in (0, 1]");
  for (const auto& d : dets)
    if (!std::isfinite(d.score)) throw ValidationError("detection score is not finite");
  auto overlap = [&](const Detection& d, const GroundTruthInstance& g) {
    if (kernel == MatchKernel::kBox) return box_iou(d.box, g.box);
    if (!d.mask || !g.mask)
      throw ValidationError("mask matching requires masks on every instance");
    return mask_iou(*d.mask, *g.mask);
  };

  DetectionReport report;
  report.iou_threshold = iou_threshold;
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  for (const auto& d : dets) classes.insert(d.class_id);

  double ap_sum = 0;
  int ap_classes = 0;
  for (int c : classes) {
    std::vector<std::size_t> order, gt_idx;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (dets[i].class_id == c) order.push_back(i);
    for (std::size_t i = 0; i < gts.size(); ++i)
      if (gts[i].class_id == c) gt_idx.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dets[a].score > dets[b].score;
    });
    std::vector<bool> matched(gt_idx.size(), false);
    std::vector<RankedItem> ranked;
    for (std::size_t i : order) {
      const Detection& d = dets[i];
      double best = -1;
      std::size_t best_k = gt_idx.size();
      for (std::size_t k = 0; k < gt_idx.size(); ++k) {
        const auto& g = gts[gt_idx[k]];
        if (matched[k] || g.frame != d.frame) continue;
        const double o = overlap(d, g);
        if (o > best) {
          best = o;
          best_k = k;
        }
      }
      const bool tp = best_k < gt_idx.size() && best >= iou_threshold;
      if (tp) matched[best_k] = true;
      ranked.push_back({d.score, tp});
    }
    ClassAP& out = report.per_class[c];
    out.gt_count = static_cast<int>(gt_idx.size());
    out.detection_count = static_cast<int>(order.size());
    out.curve = pr_curve(ranked, gt_idx.size());
    if (!gt_idx.empty()) {
      out.ap = average_precision(out.curve);
      ap_sum += *out.ap;
      ++ap_classes;
    }
  }
  if (ap_classes) report.map = ap_sum / ap_classes;
  return report;
}

// ---------------------------------------------------------------------------
// Frame classification (phase / step recognition).

struct ClassificationReport {
  std::map<int, std::optional<double>> ap;  // per class, empty without gt frames
  std::map<int, std::optional<double>> f1;
  std::optional<double> map;
  std::optional<double> macro_f1;
  double accuracy = 0;
};

// First maximum wins, so ties go to the lowest class index.
inline int argmax_index(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline ClassificationReport classification_scores(
    const std::vector<std::vector<double>>& scores, const std::vector<int>& gt) {
  if (scores.size() != gt.size())
    throw ValidationError("score and ground-truth frame counts differ");
  if (scores.empty()) throw ValidationError("no frames to score");
  const std::size_t classes = scores.front().size();
  if (classes == 0) throw ValidationError("score vectors are empty");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != classes)
      throw ValidationError("frame " + std::to_string(i) +
                            " has a score vector of different length");
    for (double s : scores[i])
      if (!std::isfinite(s))
        throw ValidationError("frame " + std::to_string(i) + " has a non-finite score");
    if (gt[i] < 0 || static_cast<std::size_t>(gt[i]) >= classes)
      throw ValidationError("frame " + std::to_string(i) + " has class " +
                            std::to_string(gt[i]) + " outside the score vector");
  }

  ClassificationReport r;
  std::vector<int> pred(gt.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    pred[i] = argmax_index(scores[i]);
    correct += pred[i] == gt[i];
  }
  r.accuracy = double(correct) / double(gt.size());

  double ap_sum = 0, f1_sum = 0;
  int counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const int ci = static_cast<int>(c);
    std::size_t positives = 0, tp = 0, fp = 0, fn = 0;
    std::vector<RankedItem> items;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const bool pos = gt[i] == ci;
      positives += pos;
      items.push_back({scores[i][c], pos});
      tp += pos && pred[i] == ci;
      fp += !pos && pred[i] == ci;
      fn += pos && pred[i] != ci;
    }
    if (positives == 0) {
      r.ap[ci] = std::nullopt;
      r.f1[ci] = std::nullopt;
      continue;
    }
    std::stable_sort(items.begin(), items.end(),
                     [](const RankedItem& a, const RankedItem& b) { return a.score > b.score; });
    const double ap = average_precision(pr_curve(items, positives));
    const double f1 = 2.0 * tp / double(2 * tp + fp + fn);
    r.ap[ci] = ap;
    r.f1[ci] = f1;
    ap_sum += ap;
    f1_sum += f1;
    ++counted;
  }
  if (counted) {
    r.map = ap_sum / counted;
    r.macro_f1 = f1_sum / counted;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Anticipation: remaining time until a surgical step next begins, clipped to
// a horizon h.

struct AnticipationSeries {
  double horizon = 0;
  std::vector<FrameIndex> frames;
  std::vector<double> remaining;  // seconds, in [0, horizon]
};

// `vocabulary` lists the valid step ids; when empty, the ids occurring in the
// timeline are used.
inline AnticipationSeries anticipation_targets(const FrameTimeline& t, int step_class,
                                               double horizon,
                                               const std::set<int>& vocabulary = {}) {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw ValidationError("horizon must be a positive number of seconds");
  if (!(t.fps > 0.0)) throw ValidationError("fps must be positive");
  std::set<int> vocab = vocabulary;
  if (vocab.empty())
    for (const auto& [f, s] : t.step_of) vocab.insert(s);
  if (!vocab.contains(step_class))
    throw ValidationError("unknown step class " + std::to_string(step_class));
  for (FrameIndex f : t.frames)
    if (!t.step_of.contains(f))
      throw ValidationError("frame " + std::to_string(f) + " has no step id");

  std::vector<double> onsets;
  for (std::size_t i = 0; i < t.frames.size(); ++i) {
    const bool active = t.step_of.at(t.frames[i]) == step_class;
    const bool was_active = i > 0 && t.step_of.at(t.frames[i - 1]) == step_class;
    if (active && !was_active) onsets.push_back(t.seconds(t.frames[i]));
  }

  AnticipationSeries out;
  out.horizon = horizon;
  for (FrameIndex f : t.frames) {
    const double tau = t.seconds(f);
    double r = horizon;
    if (t.step_of.at(f) == step_class) {
      r = 0.0;
    } else {
      auto next = std::upper_bound(onsets.begin(), onsets.end(), tau);
      if (next != onsets.end()) r = std::min(horizon, *next - tau);
    }
    out.frames.push_back(f);
    out.remaining.push_back(r);
  }
  return out;
}

struct AnticipationEval {
  double horizon = 0;
  std::vector<double> predicted;     // f_i, seconds
  std::vector<double> ground_truth;  // r_i, seconds

  void validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw ValidationError("horizon must be a positive number of seconds");
    if (predicted.size() != ground_truth.size())
      throw ValidationError("prediction and ground-truth lengths differ");
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      if (!std::isfinite(predicted[i]) || predicted[i] < 0.0)
        throw ValidationError("prediction " + std::to_string(i) +
                              " must be finite and >= 0");
      const double r = ground_truth[i];
      if (!std::isfinite(r) || r < 0.0 || r > horizon)
        throw ValidationError("ground truth " + std::to_string(i) +
                              " must lie in [0, horizon]");
    }
  }
};

namespace detail {

inline std::optional<double> windowed_mae(const AnticipationEval& e, double upper) {
  e.validate();
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < e.ground_truth.size(); ++i) {
    const double r = e.ground_truth[i];
    if (r > 0.0 && r < upper) {
      sum += std::abs(e.predicted[i] - r);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

// Mean absolute error over frames with 0 < r < h; empty when no frame
// qualifies.
inline std::optional<double> mae_in(const AnticipationEval& e) {
  return detail::windowed_mae(e, e.horizon);
}

// Same over the final stretch 0 < r < 0.1 h.
inline std::optional<double> mae_e(const AnticipationEval& e) {
  return detail::windowed_mae(e, 0.1 * e.horizon);
}

}  // namespace labelprop
