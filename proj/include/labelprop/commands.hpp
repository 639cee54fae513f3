#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "labelprop/core.hpp"
#include "labelprop/dataset.hpp"
#include "labelprop/flow.hpp"
#include "labelprop/formats.hpp"
#include "labelprop/fuse.hpp"
#include "labelprop/metrics.hpp"
#include "labelprop/parallel.hpp"
#include "labelprop/synth.hpp"
#include "labelprop/warp.hpp"

namespace labelprop {

// Bad command line or configuration file (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitValidation = 2, kExitInternal = 3 };

// ---------------------------------------------------------------------------
// Interpolation configuration. The file is JSON with optional sections
// "flow", "propagation" and "fusion"; unknown keys are rejected.

struct InterpolateConfig {
  std::string dataset;
  std::string out;
  std::string flow_source = "builtin";  // builtin | files
  FlowParams flow;
  PropagationConfig propagation;
  bool fuse = true;
  bool refine = true;
  FusionParams fusion;
  double pseudo_weight = kDefaultPseudoLossWeight;
  int jobs = 1;
};

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const Json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("'" + name("") + "' must be an object");
    for (auto& [k, v] : j_.items()) unseen_.insert(k);
  }

  template <typename T>
  void get(const std::string& key, T& dst) {
    if (!j_.contains(key)) return;
    unseen_.erase(key);
    try {
      dst = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
  }

  std::optional<ConfigReader> section(const std::string& key) {
    if (!j_.contains(key)) return std::nullopt;
    unseen_.erase(key);
    return ConfigReader(j_.at(key), name(key));
  }

  void finish() const {
    if (!unseen_.empty())
      throw ConfigError("unknown config key '" + name(*unseen_.begin()) + "'");
  }

  std::string name(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  const Json& j_;
  std::string prefix_;
  std::set<std::string> unseen_;
};

}  // namespace detail

inline void apply_config_json(const Json& j, InterpolateConfig& c) {
  detail::ConfigReader root(j, "");
  root.get("dataset", c.dataset);
  root.get("out", c.out);
  root.get("jobs", c.jobs);
  root.get("pseudo_weight", c.pseudo_weight);
  if (auto f = root.section("flow")) {
    f->get("source", c.flow_source);
    std::string method = to_string(c.flow.method);
    f->get("method", method);
    try {
      c.flow.method = parse_flow_method(method);
    } catch (const ValidationError& e) {
      throw ConfigError("config key 'flow.method': " + std::string(e.what()));
    }
    f->get("smoothness_alpha", c.flow.smoothness_alpha);
    f->get("iterations", c.flow.iterations);
    f->get("pyramid_levels", c.flow.pyramid_levels);
    f->get("pyramid_scale", c.flow.pyramid_scale);
    f->get("window", c.flow.window);
    f->get("warps", c.flow.warps);
    f->get("robust", c.flow.robust);
    f->get("charbonnier_data", c.flow.charbonnier_data);
    f->get("charbonnier_smooth", c.flow.charbonnier_smooth);
    f->get("edge_kappa", c.flow.edge_kappa);
    f->get("presmooth_sigma", c.flow.presmooth_sigma);
    f->get("median_radius", c.flow.median_radius);
    f->finish();
  }
  if (auto p = root.section("propagation")) {
    p->get("max_hop", c.propagation.max_hop);
    std::string route = to_string(c.propagation.route);
    p->get("route", route);
    try {
      c.propagation.route = parse_flow_route(route);
    } catch (const ValidationError& e) {
      throw ConfigError("config key 'propagation.route': " + std::string(e.what()));
    }
    p->get("fb_alpha", c.propagation.consistency.alpha);
    p->get("fb_beta", c.propagation.consistency.beta);
    p->get("fb_sigma", c.propagation.consistency.sigma);
    p->get("photometric_tolerance", c.propagation.photometric_tolerance);
    p->get("gate_inconsistent", c.propagation.gate_inconsistent);
    p->finish();
  }
  if (auto f = root.section("fusion")) {
    f->get("enabled", c.fuse);
    f->get("refine", c.refine);
    f->get("tau_flow", c.fusion.tau_flow);
    f->get("tau_seg", c.fusion.tau_seg);
    f->get("min_component_px", c.fusion.min_component_px);
    f->get("morph_radius", c.fusion.morph_radius);
    f->finish();
  }
  root.finish();
}

inline InterpolateConfig load_config_file(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("config file " + p.string() + " does not exist");
  Json j;
  try {
    j = Json::parse(read_text(p));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + p.string() + ": " + e.what());
  }
  InterpolateConfig c;
  apply_config_json(j, c);
  return c;
}

// Checks that every value is usable; names the offending key.
inline void validate_config(const InterpolateConfig& c) {
  if (c.dataset.empty()) throw ConfigError("missing required config key 'dataset'");
  if (c.out.empty()) throw ConfigError("missing required config key 'out'");
  if (c.flow_source != "builtin" && c.flow_source != "files")
    throw ConfigError("config key 'flow.source' must be 'builtin' or 'files'");
  if (c.jobs < 1) throw ConfigError("config key 'jobs' must be >= 1");
  if (c.propagation.max_hop < 1)
    throw ConfigError("config key 'propagation.max_hop' must be >= 1");
  if (!(c.pseudo_weight >= 0.0) || !std::isfinite(c.pseudo_weight))
    throw ConfigError("config key 'pseudo_weight' must be finite and >= 0");
  try {
    c.flow.validate();
    c.propagation.consistency.validate();
    c.fusion.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

inline Json fusion_echo(const InterpolateConfig& c) {
  return {{"enabled", c.fuse},
          {"refine", c.refine},
          {"tau_flow", c.fusion.tau_flow},
          {"tau_seg", c.fusion.tau_seg},
          {"min_component_px", c.fusion.min_component_px},
          {"morph_radius", c.fusion.morph_radius}};
}

inline Json config_to_json(const InterpolateConfig& c) {
  const FlowParams& f = c.flow;
  const PropagationConfig& p = c.propagation;
  return {{"dataset", c.dataset},
          {"out", c.out},
          {"jobs", c.jobs},
          {"pseudo_weight", c.pseudo_weight},
          {"flow",
           {{"source", c.flow_source},
            {"method", to_string(f.method)},
            {"smoothness_alpha", f.smoothness_alpha},
            {"iterations", f.iterations},
            {"pyramid_levels", f.pyramid_levels},
            {"pyramid_scale", f.pyramid_scale},
            {"window", f.window},
            {"warps", f.warps},
            {"robust", f.robust},
            {"charbonnier_data", f.charbonnier_data},
            {"charbonnier_smooth", f.charbonnier_smooth},
            {"edge_kappa", f.edge_kappa},
            {"presmooth_sigma", f.presmooth_sigma},
            {"median_radius", f.median_radius}}},
          {"propagation",
           {{"max_hop", p.max_hop},
            {"route", to_string(p.route)},
            {"fb_alpha", p.consistency.alpha},
            {"fb_beta", p.consistency.beta},
            {"fb_sigma", p.consistency.sigma},
            {"photometric_tolerance", p.photometric_tolerance},
            {"gate_inconsistent", p.gate_inconsistent}}},
          {"fusion", fusion_echo(c)}};
}

// ---------------------------------------------------------------------------
// Shared helpers.

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Flattens a JSON object into "key = value" lines, nested keys dotted.
inline void json_to_text(const Json& j, const std::string& prefix, std::string& out) {
  if (j.is_object()) {
    for (auto& [k, v] : j.items()) json_to_text(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  std::string value;
  if (j.is_null()) {
    value = "undefined";
  } else if (j.is_number_float()) {
    value = format_number(j.get<double>());
  } else if (j.is_string()) {
    value = j.get<std::string>();
  } else {
    value = j.dump();
  }
  out += prefix + " = " + value + "\n";
}

inline std::string report_text(const Json& j) {
  std::string s;
  json_to_text(j, "", s);
  return s;
}

inline void write_report(const fs::path& dir, const std::string& stem, const Json& j) {
  write_text(dir / (stem + ".json"), j.dump(2) + "\n");
  write_text(dir / (stem + ".txt"), report_text(j));
}

template <typename T>
Json optional_json(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

// ---------------------------------------------------------------------------
// interpolate

struct VideoResult {
  std::vector<PseudoLabel> labels;
  Json report;
};

namespace detail {

// Reads and checks every input a video run will touch, so that nothing is
// written when any of them is broken.
inline void prevalidate_video(const VideoData& v, const InterpolateConfig& c) {
  const auto runs = propagation_runs(v.timeline, c.propagation.max_hop, c.propagation.route);
  std::vector<std::pair<FrameIndex, FrameIndex>> pairs;
  std::set<FrameIndex> targets;
  for (const auto& r : runs)
    for (std::size_t i = 1; i < r.size(); ++i) {
      pairs.push_back({r[i], r[i - 1]});
      pairs.push_back({r[i - 1], r[i]});
      targets.insert(r[i]);
    }
  if (c.flow_source == "files") {
    for (const auto& [a, b] : pairs)
      if (!fs::exists(v.flow_path(a, b)))
        throw ValidationError("missing flow file " + v.flow_path(a, b).string());
    parallel_for(pairs.size(), c.jobs, [&](std::size_t i) {
      const FlowField f = read_flo(v.flow_path(pairs[i].first, pairs[i].second));
      if (!f.fx.same_shape(v.width, v.height))
        throw ValidationError("flow/image size mismatch: " +
                              v.flow_path(pairs[i].first, pairs[i].second).string());
    });
  }
  if (c.fuse) {
    const std::vector<FrameIndex> list(targets.begin(), targets.end());
    for (FrameIndex f : list)
      if (!fs::exists(v.prob_path(f)))
        throw ValidationError("missing probability map " + v.prob_path(f).string() +
                              " (disable fusion to run without one)");
    parallel_for(list.size(), c.jobs, [&](std::size_t i) {
      const fs::path p = v.prob_path(list[i]);
      const ProbMap m = read_prob_map(p);
      if (m.width != v.width || m.height != v.height)
        throw ValidationError("probability map/image size mismatch: " + p.string());
      try {
        validate_prob_map(m);
      } catch (const ValidationError& e) {
        throw ValidationError(p.string() + ": " + e.what());
      }
      for (const auto& [k, mask] : v.key_masks)
        for (LabelId id : mask.labels_present())
          if (mask.class_of(id) >= m.classes)
            throw ValidationError(p.string() + ": class " +
                                  std::to_string(mask.class_of(id)) +
                                  " of the key masks is outside its class space");
    });
  }
}

}  // namespace detail

inline VideoResult interpolate_video(const VideoData& v, const InterpolateConfig& c) {
  PropagationConfig pc = c.propagation;
  pc.jobs = c.jobs;
  pc.frames = [&v](FrameIndex f) { return v.frame(f); };
  const FlowProvider flows =
      c.flow_source == "files" ? file_flow_provider(v) : estimated_flow_provider(v, c.flow);
  const auto propagated = propagate_labels(v.timeline, v.key_masks, flows, pc);

  const auto& frames = v.timeline.frames;
  std::vector<PseudoLabel> labels(frames.size());
  parallel_for(frames.size(), c.jobs, [&](std::size_t i) {
    const FrameIndex f = frames[i];
    const PropagatedLabel& p = propagated.at(f);
    LabelMask mask = p.mask;
    ConfidenceMap conf = p.confidence;
    if (p.covered && !v.timeline.is_key(f)) {
      if (c.fuse) {
        auto fused = fuse(mask, conf, read_prob_map(v.prob_path(f)), c.fusion);
        mask = std::move(fused.mask);
        conf = std::move(fused.confidence);
      }
      if (c.refine) mask = refine(mask, c.fusion, &conf);
      for (std::size_t j = 0; j < conf.c.size(); ++j)
        if (mask.ids.data[j] == kVoidId) conf.c.data[j] = 0.f;
    }
    labels[i] = emit_pseudo_label(mask, conf, v.timeline, f, p.source_key_frame,
                                  p.hop_distance, c.pseudo_weight, p.covered);
  });

  std::size_t covered = 0, pseudo = 0;
  long long void_px = 0, total_px = 0;
  double conf_sum = 0;
  Json uncovered = Json::array();
  for (const auto& l : labels) {
    if (!l.covered) {
      uncovered.push_back(l.frame);
      continue;
    }
    ++covered;
    if (v.timeline.is_key(l.frame)) continue;
    ++pseudo;
    conf_sum += l.confidence.mean();
    for (LabelId id : l.mask.ids.data) void_px += id == kVoidId;
    total_px += static_cast<long long>(l.mask.ids.size());
  }
  VideoResult r;
  r.report = {{"frames", frames.size()},
              {"key_frames", v.timeline.key_frames.size()},
              {"pseudo_labelled_frames", pseudo},
              {"coverage_percent", 100.0 * double(covered) / double(frames.size())},
              {"mean_confidence", pseudo ? Json(conf_sum / double(pseudo)) : Json(nullptr)},
              {"void_fraction", total_px ? Json(double(void_px) / double(total_px)) : Json(nullptr)},
              {"uncovered_frames", uncovered}};
  r.labels = std::move(labels);
  return r;
}

// Runs the full pipeline over a dataset. Every input is validated before the
// output directory is touched.
inline int cmd_interpolate(const InterpolateConfig& c, std::ostream& out) {
  validate_config(c);
  const Dataset d = load_dataset(c.dataset);
  for (const auto& v : d.videos) detail::prevalidate_video(v, c);

  std::vector<VideoResult> results;
  for (const auto& v : d.videos) results.push_back(interpolate_video(v, c));

  const fs::path out_dir = c.out;
  std::vector<ManifestEntry> entries;
  Json report;
  report["config"] = config_to_json(c);
  report["videos"] = Json::object();
  for (std::size_t i = 0; i < d.videos.size(); ++i) {
    const auto& v = d.videos[i];
    auto e = write_pseudo_labels(out_dir, v.meta.video_id, v.timeline, results[i].labels,
                                 fusion_echo(c), c.jobs);
    entries.insert(entries.end(), e.begin(), e.end());
    report["videos"][v.meta.video_id] = results[i].report;
  }
  write_manifest(out_dir, entries);
  write_report(out_dir, "run_report", report);
  out << report_text(report["videos"]);
  for (const auto& [id, r] : report["videos"].items())
    if (!r["uncovered_frames"].empty())
      out << "warning: " << id << " has " << r["uncovered_frames"].size()
          << " uncovered frame(s) beyond max_hop\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

namespace detail {

inline std::map<std::string, fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError(dir.string() + " is not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      out[e.path().stem().string()] = e.path();
  return out;
}

template <typename K>
void check_same_keys(const std::vector<K>& pred, const std::vector<K>& gt,
                     const std::string& what) {
  const std::set<K> p(pred.begin(), pred.end()), g(gt.begin(), gt.end());
  if (p.size() != pred.size()) throw ValidationError(what + ": duplicate prediction frames");
  if (g.size() != gt.size()) throw ValidationError(what + ": duplicate ground-truth frames");
  std::vector<K> missing, extra;
  std::set_difference(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(missing));
  std::set_difference(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(extra));
  if (missing.empty() && extra.empty()) return;
  std::ostringstream msg;
  msg << what << ": frame sets differ;";
  if (!missing.empty()) {
    msg << " missing predictions for";
    for (const auto& k : missing) msg << " " << k;
    msg << ";";
  }
  if (!extra.empty()) {
    msg << " predictions without ground truth for";
    for (const auto& k : extra) msg << " " << k;
  }
  throw ValidationError(msg.str());
}

inline Json read_json_input(const fs::path& p) {
  if (!fs::exists(p)) throw ValidationError("cannot open " + p.string());
  return read_json(p);
}

template <typename T>
T json_field(const Json& j, const char* key, const std::string& what) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ValidationError(what + ": missing or malformed field '" + key + "'");
  }
}

inline Box json_box(const Json& j, const std::string& what) {
  const auto v = json_field<std::vector<double>>(j, "box", what);
  if (v.size() != 4) throw ValidationError(what + ": box needs 4 numbers");
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace detail

struct SegEvalOptions {
  fs::path pred, gt;
  std::vector<int> classes;  // empty: every class seen in either set
};

inline Json evaluate_segmentation(const SegEvalOptions& o) {
  const auto pred_files = detail::png_files(o.pred);
  const auto gt_files = detail::png_files(o.gt);
  std::vector<std::string> pk, gk;
  for (auto& [k, v] : pred_files) pk.push_back(k);
  for (auto& [k, v] : gt_files) gk.push_back(k);
  detail::check_same_keys(pk, gk, "segmentation");
  std::vector<LabelMask> preds, gts;
  std::set<LabelId> classes;
  for (const auto& k : gk) {
    preds.push_back(read_mask_png(pred_files.at(k)));
    gts.push_back(read_mask_png(gt_files.at(k)));
    if (preds.back().width() != gts.back().width() ||
        preds.back().height() != gts.back().height())
      throw ValidationError("segmentation: size mismatch for frame " + k);
    if (o.classes.empty()) {
      for (LabelId id : preds.back().labels_present()) classes.insert(id);
      for (LabelId id : gts.back().labels_present()) classes.insert(id);
    }
  }
  for (int c : o.classes) {
    if (c < 0 || c >= kVoidId) throw ConfigError("class ids must be in 0..254");
    classes.insert(static_cast<LabelId>(c));
  }
  Json per_class = Json::object();
  for (auto [c, v] : pooled_class_iou(preds, gts, classes)) per_class[std::to_string(c)] = v;
  return {{"kind", "seg"},
          {"frames", gk.size()},
          {"miou", optional_json(miou(preds, gts, classes))},
          {"mciou", optional_json(mciou(preds, gts, classes))},
          {"class_iou", per_class}};
}

struct DetEvalOptions {
  fs::path pred, gt;
  double iou_threshold = kDefaultDetectionIoU;
};

// Predictions: {"detections": [{"frame", "class_id", "score", "box": [x0, y0,
// x1, y1]}]}. Ground truth: {"instances": [{"frame", "class_id", "box"}],
// optional "frames": [...]} where "frames" lists every evaluated frame.
inline Json evaluate_detection(const DetEvalOptions& o) {
  const Json pj = detail::read_json_input(o.pred), gj = detail::read_json_input(o.gt);
  std::vector<Detection> dets;
  std::vector<GroundTruthInstance> gts;
  const auto pd = detail::json_field<std::vector<Json>>(pj, "detections", o.pred.string());
  const auto gi = detail::json_field<std::vector<Json>>(gj, "instances", o.gt.string());
  for (const auto& d : pd) {
    Detection x;
    x.frame = detail::json_field<FrameIndex>(d, "frame", o.pred.string());
    x.class_id = detail::json_field<int>(d, "class_id", o.pred.string());
    x.score = detail::json_field<double>(d, "score", o.pred.string());
    x.box = detail::json_box(d, o.pred.string());
    dets.push_back(std::move(x));
  }
  for (const auto& g : gi) {
    GroundTruthInstance x;
    x.frame = detail::json_field<FrameIndex>(g, "frame", o.gt.string());
    x.class_id = detail::json_field<int>(g, "class_id", o.gt.string());
    x.box = detail::json_box(g, o.gt.string());
    gts.push_back(std::move(x));
  }
  if (gj.contains("frames")) {
    const auto frames = detail::json_field<std::set<FrameIndex>>(gj, "frames", o.gt.string());
    std::set<FrameIndex> outside;
    for (const auto& d : dets)
      if (!frames.contains(d.frame)) outside.insert(d.frame);
    if (!outside.empty()) {
      std::string list;
      for (FrameIndex f : outside) list += " " + std::to_string(f);
      throw ValidationError("detection: predictions on frames outside the ground truth:" + list);
    }
  }
  const auto r = detection_ap(dets, gts, o.iou_threshold);
  Json per_class = Json::object();
  for (const auto& [c, a] : r.per_class)
    per_class[std::to_string(c)] = {{"ap", optional_json(a.ap)},
                                    {"gt_count", a.gt_count},
                                    {"detection_count", a.detection_count}};
  return {{"kind", "det"},
          {"iou_threshold", r.iou_threshold},
          {"map", optional_json(r.map)},
          {"classes", per_class}};
}

struct ClsEvalOptions {
  fs::path pred, gt;
};

// Predictions: {"frames": [...], "scores": [[...], ...]}. Ground truth:
// {"frames": [...], "labels": [...]}. Frames are expected at 1 fps.
inline Json evaluate_classification(const ClsEvalOptions& o) {
  const Json pj = detail::read_json_input(o.pred), gj = detail::read_json_input(o.gt);
  const auto pf = detail::json_field<std::vector<FrameIndex>>(pj, "frames", o.pred.string());
  const auto ps =
      detail::json_field<std::vector<std::vector<double>>>(pj, "scores", o.pred.string());
  const auto gf = detail::json_field<std::vector<FrameIndex>>(gj, "frames", o.gt.string());
  const auto gl = detail::json_field<std::vector<int>>(gj, "labels", o.gt.string());
  if (pf.size() != ps.size()) throw ValidationError(o.pred.string() + ": frames/scores length mismatch");
  if (gf.size() != gl.size()) throw ValidationError(o.gt.string() + ": frames/labels length mismatch");
  detail::check_same_keys(pf, gf, "classification");
  std::map<FrameIndex, std::size_t> at;
  for (std::size_t i = 0; i < pf.size(); ++i) at[pf[i]] = i;
  std::vector<std::vector<double>> scores;
  for (FrameIndex f : gf) scores.push_back(ps[at.at(f)]);
  const auto r = classification_scores(scores, gl);
  Json ap = Json::object(), f1 = Json::object();
  for (auto& [c, v] : r.ap) ap[std::to_string(c)] = optional_json(v);
  for (auto& [c, v] : r.f1) f1[std::to_string(c)] = optional_json(v);
  return {{"kind", "cls"},
          {"frames", gf.size()},
          {"map", optional_json(r.map)},
          {"macro_f1", optional_json(r.macro_f1)},
          {"accuracy", r.accuracy},
          {"class_ap", ap},
          {"class_f1", f1}};
}

struct AnticipationEvalOptions {
  fs::path pred;
  std::optional<fs::path> gt;           // {"frames", "remaining"} JSON
  std::optional<fs::path> gt_timeline;  // video directory, used with `step`
  std::optional<int> step;
  std::optional<double> horizon;
};

// Predictions: {"frames": [...], "remaining": [...]} in seconds. Ground-truth
// values above the horizon are clipped to it.
inline Json evaluate_anticipation(const AnticipationEvalOptions& o) {
  if (!o.horizon) throw ConfigError("anticipation evaluation requires --horizon");
  if (!(*o.horizon > 0.0) || !std::isfinite(*o.horizon))
    throw ConfigError("--horizon must be a positive number of seconds");
  const double h = *o.horizon;
  const Json pj = detail::read_json_input(o.pred);
  const auto pf = detail::json_field<std::vector<FrameIndex>>(pj, "frames", o.pred.string());
  const auto pr = detail::json_field<std::vector<double>>(pj, "remaining", o.pred.string());
  if (pf.size() != pr.size())
    throw ValidationError(o.pred.string() + ": frames/remaining length mismatch");

  std::vector<FrameIndex> gf;
  std::vector<double> gr;
  if (o.gt_timeline) {
    if (o.gt) throw ConfigError("give either --gt or --gt-timeline, not both");
    if (!o.step) throw ConfigError("--gt-timeline requires --step");
    const VideoData v = load_video(*o.gt_timeline);
    std::set<int> vocab = v.meta.steps;
    const auto series = anticipation_targets(v.timeline, *o.step, h, vocab);
    gf = series.frames;
    gr = series.remaining;
  } else {
    if (!o.gt) throw ConfigError("anticipation evaluation requires --gt or --gt-timeline");
    const Json gj = detail::read_json_input(*o.gt);
    gf = detail::json_field<std::vector<FrameIndex>>(gj, "frames", o.gt->string());
    gr = detail::json_field<std::vector<double>>(gj, "remaining", o.gt->string());
    if (gf.size() != gr.size())
      throw ValidationError(o.gt->string() + ": frames/remaining length mismatch");
    for (double& r : gr) {
      if (!std::isfinite(r) || r < 0)
        throw ValidationError(o.gt->string() + ": remaining times must be finite and >= 0");
      r = std::min(r, h);
    }
  }
  detail::check_same_keys(pf, gf, "anticipation");
  std::map<FrameIndex, double> pred_at;
  for (std::size_t i = 0; i < pf.size(); ++i) pred_at[pf[i]] = pr[i];
  AnticipationEval e;
  e.horizon = h;
  e.ground_truth = gr;
  for (FrameIndex f : gf) e.predicted.push_back(pred_at.at(f));
  return {{"kind", "anticipation"},
          {"horizon", h},
          {"frames", gf.size()},
          {"mae_in", optional_json(mae_in(e))},
          {"mae_e", optional_json(mae_e(e))}};
}

inline int emit_evaluation(const Json& report, const std::optional<fs::path>& out_dir,
                           std::ostream& out) {
  if (out_dir) write_report(*out_dir, "evaluation", report);
  out << report_text(report);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// flow estimate / check

// Border excluded from the reported median, where flow is extrapolated.
inline constexpr int kInteriorMargin = 8;

inline int cmd_flow_estimate(const fs::path& a, const fs::path& b, const fs::path& out_path,
                             const FlowParams& params, std::ostream& out) {
  params.validate();
  const GrayImage ia = read_gray_png(a), ib = read_gray_png(b);
  if (!ia.same_shape(ib)) throw ValidationError("flow estimate: images differ in size");
  const auto est = estimate_flow(ia, ib, params);
  write_flo(out_path, est.flow);
  auto median = [](std::vector<float> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return double(v[v.size() / 2]);
  };
  const int m = kInteriorMargin;
  std::vector<float> fx, fy;
  for (int y = m; y < ia.height - m; ++y)
    for (int x = m; x < ia.width - m; ++x) {
      fx.push_back(est.flow.fx.at(x, y));
      fy.push_back(est.flow.fy.at(x, y));
    }
  if (fx.empty()) {
    fx = est.flow.fx.data;
    fy = est.flow.fy.data;
  }
  out << "width = " << ia.width << "\nheight = " << ia.height
      << "\ninterior_median_fx = " << format_number(median(fx))
      << "\ninterior_median_fy = " << format_number(median(fy))
      << "\nunder_constrained = " << (est.under_constrained ? "true" : "false") << "\n";
  return kExitOk;
}

inline Json flow_check_report(const FlowField& fwd, const FlowField& bwd,
                              const ConsistencyParams& cp) {
  FlowField f = fwd, b = bwd;
  f.direction = {0, 1};
  b.direction = {1, 0};
  if (!f.fx.same_shape(b.fx)) throw ValidationError("flow check: fields differ in size");
  const auto r = forward_backward_confidence(f, b, cp);
  std::vector<float> d;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < r.discrepancy.size(); ++i) {
    if (std::isfinite(r.discrepancy.data[i])) d.push_back(r.discrepancy.data[i]);
    valid += r.valid.data[i] != 0;
  }
  std::sort(d.begin(), d.end());
  auto pct = [&](double q) -> Json {
    if (d.empty()) return nullptr;
    const auto k = static_cast<std::size_t>(std::ceil(q * double(d.size()))) ;
    return double(d[std::clamp<std::size_t>(k, 1, d.size()) - 1]);
  };
  double mean = 0;
  for (float v : d) mean += v;
  const double n = double(r.valid.size());
  return {{"pixels", r.valid.size()},
          {"in_bounds_fraction", double(d.size()) / n},
          {"valid_fraction", double(valid) / n},
          {"mean_discrepancy", d.empty() ? Json(nullptr) : Json(mean / double(d.size()))},
          {"p50_discrepancy", pct(0.5)},
          {"p90_discrepancy", pct(0.9)},
          {"p99_discrepancy", pct(0.99)}};
}

// ---------------------------------------------------------------------------
// overlay

// Fixed class palette: the bit-interleaved colour map used by PASCAL VOC.
// Id 255 (void) maps to (224, 224, 192).
inline Rgb palette_color(LabelId id) {
  int r = 0, g = 0, b = 0, c = id;
  for (int j = 0; j < 8; ++j) {
    r |= ((c >> 0) & 1) << (7 - j);
    g |= ((c >> 1) & 1) << (7 - j);
    b |= ((c >> 2) & 1) << (7 - j);
    c >>= 3;
  }
  return {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
          static_cast<std::uint8_t>(b)};
}

// Half-and-half blend rounded half up.
inline std::uint8_t blend_half(std::uint8_t a, std::uint8_t b) {
  return static_cast<std::uint8_t>((int(a) + int(b) + 1) / 2);
}

// Three panels side by side: the frame, the colourised mask, and the frame
// tinted with the mask colours at alpha 0.5 (void pixels untouched).
inline RgbImage overlay_panels(const RgbImage& frame, const LabelMask& mask) {
  if (!frame.same_shape(mask.width(), mask.height()))
    throw ValidationError("overlay: frame and mask differ in size");
  const int w = frame.width, h = frame.height;
  RgbImage out(3 * w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Rgb p = frame.at(x, y);
      const LabelId id = mask.at(x, y);
      const Rgb c = palette_color(id);
      out.at(x, y) = p;
      out.at(w + x, y) = c;
      out.at(2 * w + x, y) =
          id == kVoidId ? p : Rgb{blend_half(p.r, c.r), blend_half(p.g, c.g), blend_half(p.b, c.b)};
    }
  return out;
}

// Composites every mask in `masks` with the frame of the same name.
inline int cmd_overlay(const fs::path& frames, const fs::path& masks, const fs::path& out_dir,
                       int jobs, std::ostream& out) {
  const auto mask_files = detail::png_files(masks);
  const auto frame_files = detail::png_files(frames);
  std::vector<std::string> names;
  for (const auto& [k, p] : mask_files) {
    if (!frame_files.contains(k))
      throw ValidationError("overlay: no frame for mask " + p.string());
    const auto ms = peek_png_size(p), fsz = peek_png_size(frame_files.at(k));
    if (ms != fsz) throw ValidationError("overlay: size mismatch for " + k);
    names.push_back(k);
  }
  fs::create_directories(out_dir);
  parallel_for(names.size(), jobs, [&](std::size_t i) {
    const auto& k = names[i];
    write_rgb_png(out_dir / (k + ".png"),
                  overlay_panels(read_rgb_png(frame_files.at(k)), read_mask_png(mask_files.at(k))));
  });
  out << "overlays = " << names.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  fs::path out;
  std::string scene = "translation";  // translation | static | crossing
  std::uint64_t seed = 7;
  std::optional<int> frames;
  std::optional<int> key_period;
  std::string video_id = "synth";
};

inline synth::SynthScene::Config synth_config(const SynthOptions& o) {
  synth::SynthScene::Config c;
  if (o.scene == "translation") {
    c = synth::translation_scene(o.seed);
  } else if (o.scene == "static") {
    c = synth::static_scene(o.seed);
  } else if (o.scene == "crossing") {
    c = synth::crossing_scene(o.seed);
  } else {
    throw ConfigError("unknown scene '" + o.scene + "' (translation, static, crossing)");
  }
  if (o.frames) c.frame_count = *o.frames;
  if (o.key_period) c.key_period = *o.key_period;
  return c;
}

inline int cmd_synth(const SynthOptions& o, int jobs, std::ostream& out) {
  const synth::SynthScene scene(synth_config(o));
  const auto d = generate_synth(scene, o.out, o.video_id, jobs);
  out << "frames = " << d.timeline.frames.size() << "\nkey_frames = "
      << d.timeline.key_frames.size() << "\nclasses = " << d.meta.classes << "\n";
  return kExitOk;
}

}  // namespace labelprop
