#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "labelprop/core.hpp"
#include "labelprop/flow.hpp"
#include "labelprop/formats.hpp"
#include "labelprop/fuse.hpp"
#include "labelprop/parallel.hpp"
#include "labelprop/synth.hpp"
#include "labelprop/warp.hpp"

namespace labelprop {

using Json = nlohmann::json;

// Zero-padded six-digit frame stem, e.g. 000042.
inline std::string frame_stem(FrameIndex f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(f));
  return buf;
}

// ---------------------------------------------------------------------------
// Timeline CSV: header `frame,phase,step,is_key`, one row per frame.

inline constexpr const char* kTimelineHeader = "frame,phase,step,is_key";

namespace detail {

inline long long parse_int_field(const std::string& s, const std::string& where) {
  if (s.empty()) throw ValidationError(where + ": empty field");
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(where + ": '" + s + "' is not an integer");
  }
  if (used != s.size()) throw ValidationError(where + ": '" + s + "' is not an integer");
  return v;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace detail

// Parses rows into `t` (frames, phases, steps, key frames). `what` prefixes
// error messages, typically the file path.
inline void parse_timeline_csv(const std::string& text, FrameTimeline& t,
                               const std::string& what) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != kTimelineHeader)
        throw ValidationError(what + ":" + std::to_string(lineno) +
                              ": expected header '" + kTimelineHeader + "'");
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(detail::trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    const std::string where = what + ":" + std::to_string(lineno);
    if (cells.size() != 4)
      throw ValidationError(where + ": expected 4 fields, found " +
                            std::to_string(cells.size()));
    const FrameIndex f = detail::parse_int_field(cells[0], where);
    const long long phase = detail::parse_int_field(cells[1], where);
    const long long step = detail::parse_int_field(cells[2], where);
    const long long key = detail::parse_int_field(cells[3], where);
    if (key != 0 && key != 1) throw ValidationError(where + ": is_key must be 0 or 1");
    if (t.phase_of.contains(f))
      throw ValidationError(where + ": duplicate frame " + std::to_string(f));
    t.frames.push_back(f);
    t.phase_of[f] = static_cast<int>(phase);
    t.step_of[f] = static_cast<int>(step);
    if (key) t.key_frames.insert(f);
  }
  if (!header) throw ValidationError(what + ": empty timeline");
}

inline std::string timeline_csv(const FrameTimeline& t) {
  std::string out = std::string(kTimelineHeader) + "\n";
  for (FrameIndex f : t.frames)
    out += std::to_string(f) + "," + std::to_string(t.phase_of.at(f)) + "," +
           std::to_string(t.step_of.at(f)) + "," + (t.is_key(f) ? "1" : "0") + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Per-video metadata (meta.json).

struct VideoMeta {
  std::string video_id;
  double fps = 30.0;
  std::set<int> phases;  // empty: any id accepted
  std::set<int> steps;   // empty: any id accepted
  int classes = 0;       // semantic class count, 0 when unknown
  MaskKind mask_kind = MaskKind::kSemantic;
  std::map<LabelId, LabelId> class_of_instance;
};

inline Json meta_to_json(const VideoMeta& m) {
  Json j;
  j["video_id"] = m.video_id;
  j["fps"] = m.fps;
  j["phases"] = m.phases;
  j["steps"] = m.steps;
  j["classes"] = m.classes;
  j["mask_kind"] = m.mask_kind == MaskKind::kInstance ? "instance" : "semantic";
  Json ci = Json::object();
  for (auto [i, c] : m.class_of_instance) ci[std::to_string(i)] = c;
  j["class_of_instance"] = ci;
  return j;
}

inline VideoMeta meta_from_json(const Json& j, const std::string& what) {
  VideoMeta m;
  try {
    if (!j.is_object()) throw ValidationError(what + ": expected a JSON object");
    m.video_id = j.at("video_id").get<std::string>();
    m.fps = j.at("fps").get<double>();
    if (j.contains("phases")) m.phases = j["phases"].get<std::set<int>>();
    if (j.contains("steps")) m.steps = j["steps"].get<std::set<int>>();
    if (j.contains("classes")) m.classes = j["classes"].get<int>();
    const std::string kind = j.value("mask_kind", std::string("semantic"));
    if (kind == "instance") {
      m.mask_kind = MaskKind::kInstance;
    } else if (kind != "semantic") {
      throw ValidationError(what + ": mask_kind must be 'semantic' or 'instance'");
    }
    if (j.contains("class_of_instance"))
      for (auto& [k, v] : j["class_of_instance"].items()) {
        const long long id = detail::parse_int_field(k, what + ": class_of_instance");
        const int cls = v.get<int>();
        if (id < 0 || id >= kVoidId || cls < 0 || cls >= kVoidId)
          throw ValidationError(what + ": class_of_instance entry out of range");
        m.class_of_instance[static_cast<LabelId>(id)] = static_cast<LabelId>(cls);
      }
  } catch (const Json::exception& e) {
    throw ValidationError(what + ": " + e.what());
  }
  if (!(m.fps > 0)) throw ValidationError(what + ": fps must be positive");
  if (m.classes < 0 || m.classes >= kVoidId)
    throw ValidationError(what + ": classes must be in 0..254");
  return m;
}

// ---------------------------------------------------------------------------
// One video directory:
//   timeline.csv, meta.json, frames/NNNNNN.png, masks/NNNNNN.png (key frames),
//   optional flows/AAAAAA_BBBBBB.flo (field from A to B), probs/NNNNNN.prb,
//   gt/NNNNNN.png (full ground truth for evaluation).

struct VideoData {
  fs::path dir;
  VideoMeta meta;
  FrameTimeline timeline;
  std::map<FrameIndex, LabelMask> key_masks;
  int width = 0;
  int height = 0;

  fs::path frame_path(FrameIndex f) const { return dir / "frames" / (frame_stem(f) + ".png"); }
  fs::path mask_path(FrameIndex f) const { return dir / "masks" / (frame_stem(f) + ".png"); }
  fs::path gt_path(FrameIndex f) const { return dir / "gt" / (frame_stem(f) + ".png"); }
  fs::path prob_path(FrameIndex f) const { return dir / "probs" / (frame_stem(f) + ".prb"); }
  fs::path flow_path(FrameIndex a, FrameIndex b) const {
    return dir / "flows" / (frame_stem(a) + "_" + frame_stem(b) + ".flo");
  }

  GrayImage frame(FrameIndex f) const { return read_gray_png(frame_path(f)); }
};

struct Dataset {
  fs::path root;
  std::vector<VideoData> videos;
};

inline std::string read_text(const fs::path& p) {
  const Bytes b = read_file(p);
  return std::string(b.begin(), b.end());
}

inline Json read_json(const fs::path& p) {
  try {
    return Json::parse(read_text(p));
  } catch (const Json::parse_error& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

inline VideoData load_video(const fs::path& dir) {
  VideoData v;
  v.dir = dir;
  const fs::path meta_path = dir / "meta.json";
  const fs::path tl_path = dir / "timeline.csv";
  if (!fs::exists(meta_path)) throw ValidationError("missing " + meta_path.string());
  if (!fs::exists(tl_path)) throw ValidationError("missing " + tl_path.string());
  v.meta = meta_from_json(read_json(meta_path), meta_path.string());
  v.timeline.video_id = v.meta.video_id;
  v.timeline.fps = v.meta.fps;
  parse_timeline_csv(read_text(tl_path), v.timeline, tl_path.string());
  std::sort(v.timeline.frames.begin(), v.timeline.frames.end());

  const FrameTimeline& t = v.timeline;
  if (const auto violations = validate_timeline(t); !violations.empty()) {
    const auto& first = violations.front();
    throw ValidationError(tl_path.string() + ": " + first.rule +
                          (first.frame ? " at frame " + std::to_string(*first.frame) : ""));
  }
  if (t.frames.empty()) throw ValidationError(tl_path.string() + ": no frames");
  for (std::size_t i = 1; i < t.frames.size(); ++i)
    if (t.frames[i] != t.frames[i - 1] + 1)
      throw ValidationError(tl_path.string() + ": frame numbering is not contiguous after frame " +
                            std::to_string(t.frames[i - 1]));
  if (t.key_frames.empty()) throw ValidationError(tl_path.string() + ": no key frames");
  for (FrameIndex f : t.frames) {
    if (!v.meta.steps.empty() && !v.meta.steps.contains(t.step_of.at(f)))
      throw ValidationError(tl_path.string() + ": frame " + std::to_string(f) +
                            " has unknown step id " + std::to_string(t.step_of.at(f)));
    if (!v.meta.phases.empty() && !v.meta.phases.contains(t.phase_of.at(f)))
      throw ValidationError(tl_path.string() + ": frame " + std::to_string(f) +
                            " has unknown phase id " + std::to_string(t.phase_of.at(f)));
  }

  for (FrameIndex f : t.frames) {
    const fs::path p = v.frame_path(f);
    if (!fs::exists(p))
      throw ValidationError("missing image for frame " + std::to_string(f) + ": " + p.string());
    const auto [w, h] = peek_png_size(p);
    if (f == t.frames.front()) {
      v.width = w;
      v.height = h;
    } else if (w != v.width || h != v.height) {
      throw ValidationError("image size mismatch at frame " + std::to_string(f) + ": " +
                            p.string());
    }
  }
  for (FrameIndex k : t.key_frames) {
    const fs::path p = v.mask_path(k);
    if (!fs::exists(p))
      throw ValidationError("missing mask for key frame " + std::to_string(k) + ": " +
                            p.string());
    LabelMask m = read_mask_png(p);
    if (m.width() != v.width || m.height() != v.height)
      throw ValidationError("mask/image size mismatch at key frame " + std::to_string(k) +
                            ": " + p.string());
    m.kind = v.meta.mask_kind;
    m.class_of_instance = v.meta.class_of_instance;
    try {
      validate_mask(m);
    } catch (const ValidationError& e) {
      throw ValidationError(p.string() + ": " + e.what());
    }
    if (v.meta.classes > 0)
      for (LabelId id : m.labels_present())
        if (m.class_of(id) >= v.meta.classes)
          throw ValidationError(p.string() + ": class " + std::to_string(m.class_of(id)) +
                                " exceeds the declared class count");
    v.key_masks.emplace(k, std::move(m));
  }
  return v;
}

// `root` is either one video directory (it holds timeline.csv) or a
// directory of video directories, loaded in name order.
inline Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw ValidationError("dataset root " + root.string() +
                                                     " is not a directory");
  Dataset d;
  d.root = root;
  if (fs::exists(root / "timeline.csv")) {
    d.videos.push_back(load_video(root));
    return d;
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "timeline.csv")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw ValidationError("no video directories under " + root.string());
  for (const auto& p : dirs) d.videos.push_back(load_video(p));
  std::set<std::string> ids;
  for (const auto& v : d.videos)
    if (!ids.insert(v.meta.video_id).second)
      throw ValidationError("duplicate video_id '" + v.meta.video_id + "'");
  return d;
}

// Fields read from the video's flow files.
inline FlowProvider file_flow_provider(const VideoData& v) {
  return [&v](FrameIndex a, FrameIndex b) {
    const fs::path p = v.flow_path(a, b);
    if (!fs::exists(p)) throw ValidationError("missing flow file " + p.string());
    FlowField f = read_flo(p);
    f.direction = {a, b};
    return f;
  };
}

// Fields estimated from the video's frames.
inline FlowProvider estimated_flow_provider(const VideoData& v, FlowParams params) {
  params.validate();
  return [&v, params](FrameIndex a, FrameIndex b) {
    return estimate_flow(v.frame(a), v.frame(b), params, {a, b}).flow;
  };
}

// ---------------------------------------------------------------------------
// Pseudo-label emission: per frame a mask PNG, a CNF1 confidence raster and
// a JSON sidecar under <out>/<video_id>/, plus a manifest of SHA-256 digests.

struct ManifestEntry {
  std::string path;  // relative to the output root, '/' separated
  std::string sha256;
  std::uintmax_t bytes = 0;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline constexpr const char* kManifestName = "manifest.json";

inline Json sidecar_json(const PseudoLabel& l, const std::string& video_id,
                         const FrameTimeline& t, const Json& fusion_echo) {
  Json j;
  j["video_id"] = video_id;
  j["frame"] = l.frame;
  j["is_key"] = t.is_key(l.frame);
  j["source_key_frame"] = l.source_key_frame;
  j["hop_distance"] = l.hop_distance;
  j["covered"] = l.covered;
  j["loss_weight"] = l.loss_weight;
  j["mean_confidence"] = l.confidence.mean();
  j["mask_kind"] = l.mask.kind == MaskKind::kInstance ? "instance" : "semantic";
  Json ci = Json::object();
  for (auto [i, c] : l.mask.class_of_instance) ci[std::to_string(i)] = c;
  j["class_of_instance"] = ci;
  j["fusion"] = fusion_echo;
  return j;
}

// Writes every label and returns manifest entries in path order. Labels are
// validated before the first file is created.
inline std::vector<ManifestEntry> write_pseudo_labels(const fs::path& out_dir,
                                                      const std::string& video_id,
                                                      const FrameTimeline& t,
                                                      const std::vector<PseudoLabel>& labels,
                                                      const Json& fusion_echo = Json::object(),
                                                      int jobs = 1) {
  if (video_id.empty() || video_id.find('/') != std::string::npos || video_id == "." ||
      video_id == "..")
    throw ValidationError("video_id '" + video_id + "' is not a valid directory name");
  std::set<FrameIndex> seen;
  for (const auto& l : labels) {
    validate_mask(l.mask);
    if (!l.confidence.c.same_shape(l.mask.width(), l.mask.height()))
      throw ValidationError("pseudo-label " + std::to_string(l.frame) +
                            " has mismatched confidence size");
    if (!t.has_frame(l.frame))
      throw ValidationError("pseudo-label frame " + std::to_string(l.frame) +
                            " is not in the timeline");
    if (!seen.insert(l.frame).second)
      throw ValidationError("duplicate pseudo-label for frame " + std::to_string(l.frame));
  }
  fs::create_directories(out_dir / video_id);
  std::vector<std::array<ManifestEntry, 3>> slots(labels.size());
  parallel_for(labels.size(), jobs, [&](std::size_t i) {
    const PseudoLabel& l = labels[i];
    const std::string stem = video_id + "/" + frame_stem(l.frame);
    const std::string sidecar = sidecar_json(l, video_id, t, fusion_echo).dump(2) + "\n";
    const Bytes files[3] = {encode_png_gray(l.mask.ids), encode_confidence(l.confidence),
                            Bytes(sidecar.begin(), sidecar.end())};
    const char* ext[3] = {".png", ".cnf", ".json"};
    for (int k = 0; k < 3; ++k) {
      write_file(out_dir / (stem + ext[k]), files[k]);
      slots[i][k] = {stem + ext[k], sha256_hex(files[k]), files[k].size()};
    }
  });
  std::vector<ManifestEntry> out;
  for (const auto& s : slots) out.insert(out.end(), s.begin(), s.end());
  std::sort(out.begin(), out.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  return out;
}

inline std::string manifest_text(std::vector<ManifestEntry> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  Json j;
  j["hash"] = "sha256";
  j["files"] = Json::array();
  for (const auto& e : entries)
    j["files"].push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  return j.dump(2) + "\n";
}

inline void write_manifest(const fs::path& out_dir, const std::vector<ManifestEntry>& entries) {
  write_text(out_dir / kManifestName, manifest_text(entries));
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& out_dir) {
  const Json j = read_json(out_dir / kManifestName);
  std::vector<ManifestEntry> out;
  try {
    if (j.at("hash") != "sha256") throw FormatError("manifest: unsupported hash");
    for (const auto& e : j.at("files"))
      out.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>(),
                     e.at("bytes").get<std::uintmax_t>()});
  } catch (const Json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return out;
}

// Reloads every pseudo-label listed in the manifest, grouped by video and
// ordered by frame. Files whose digest no longer matches are rejected.
inline std::map<std::string, std::vector<PseudoLabel>> read_pseudo_labels(
    const fs::path& out_dir) {
  std::map<std::string, Bytes> files;
  for (const auto& e : read_manifest(out_dir)) {
    Bytes b = read_file(out_dir / e.path);
    if (sha256_hex(b) != e.sha256) throw FormatError(e.path + ": digest mismatch");
    files.emplace(e.path, std::move(b));
  }
  std::map<std::string, std::vector<PseudoLabel>> out;
  for (const auto& [path, bytes] : files) {
    if (!path.ends_with(".json")) continue;
    const std::string stem = path.substr(0, path.size() - 5);
    Json j;
    try {
      j = Json::parse(std::string(bytes.begin(), bytes.end()));
    } catch (const Json::parse_error& e) {
      throw FormatError(path + ": " + e.what());
    }
    PseudoLabel l;
    std::string video;
    try {
      video = j.at("video_id").get<std::string>();
      l.frame = j.at("frame").get<FrameIndex>();
      l.source_key_frame = j.at("source_key_frame").get<FrameIndex>();
      l.hop_distance = j.at("hop_distance").get<FrameIndex>();
      l.covered = j.at("covered").get<bool>();
      l.loss_weight = j.at("loss_weight").get<double>();
      l.mask.kind =
          j.at("mask_kind").get<std::string>() == "instance" ? MaskKind::kInstance
                                                              : MaskKind::kSemantic;
      for (auto& [k, v] : j.at("class_of_instance").items())
        l.mask.class_of_instance[static_cast<LabelId>(std::stoi(k))] = v.get<LabelId>();
    } catch (const std::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
    auto png = files.find(stem + ".png");
    auto cnf = files.find(stem + ".cnf");
    if (png == files.end() || cnf == files.end())
      throw FormatError(stem + ": mask or confidence file missing from manifest");
    l.mask.ids = decode_png_gray8(png->second, png->first);
    l.confidence = decode_confidence(cnf->second, cnf->first);
    out[video].push_back(std::move(l));
  }
  for (auto& [v, labels] : out)
    std::sort(labels.begin(), labels.end(),
              [](const PseudoLabel& a, const PseudoLabel& b) { return a.frame < b.frame; });
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic datasets.

// Stand-in for a segmentation network: the true class gets probability
// `sure`, or `unsure` within `radius` pixels (Chebyshev) of a class boundary;
// the remainder is spread evenly over the other classes.
inline ProbMap simulate_probabilities(const LabelMask& gt, int classes, int radius = 2,
                                      double sure = 0.95, double unsure = 0.6) {
  const int w = gt.width(), h = gt.height();
  ProbMap m(w, h, classes);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const LabelId g = gt.at(x, y);
      bool near_edge = false;
      for (int dy = -radius; dy <= radius && !near_edge; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          if (gt.ids.contains(x + dx, y + dy) && gt.at(x + dx, y + dy) != g) {
            near_edge = true;
            break;
          }
      if (classes == 1) {
        m.at(0, x, y) = 1.f;
        continue;
      }
      const double top = near_edge ? unsure : sure;
      const float rest = static_cast<float>((1.0 - top) / (classes - 1));
      for (int c = 0; c < classes; ++c) m.at(c, x, y) = c == g ? float(top) : rest;
    }
  return m;
}

struct SynthDataset {
  VideoMeta meta;
  FrameTimeline timeline;
  std::vector<LabelMask> oracle;  // ground truth for every frame
};

// Writes a complete video directory for `scene`: frames, key-frame masks,
// full ground truth, analytic fields between adjacent frames and between
// every frame and its nearest key frame (both directions), and simulated
// probability maps.
inline SynthDataset generate_synth(const synth::SynthScene& scene, const fs::path& dir,
                                   const std::string& video_id = "synth", int jobs = 1) {
  SynthDataset out;
  out.timeline = scene.timeline(video_id);
  out.meta.video_id = video_id;
  out.meta.fps = scene.config().fps;
  out.meta.phases = {0, 1};
  out.meta.steps = {0, 1, 2};
  out.meta.classes = scene.class_count();
  const FrameTimeline& t = out.timeline;

  std::set<std::pair<FrameIndex, FrameIndex>> pairs;
  for (std::size_t i = 0; i + 1 < t.frames.size(); ++i) {
    pairs.insert({t.frames[i], t.frames[i + 1]});
    pairs.insert({t.frames[i + 1], t.frames[i]});
  }
  for (FrameIndex f : t.frames) {
    const NearestKey nk = nearest_key_frame(t, f);
    if (nk.distance == 0) continue;
    pairs.insert({f, nk.key});
    pairs.insert({nk.key, f});
  }

  fs::create_directories(dir);
  write_text(dir / "meta.json", meta_to_json(out.meta).dump(2) + "\n");
  write_text(dir / "timeline.csv", timeline_csv(t));
  VideoData paths;
  paths.dir = dir;
  out.oracle.resize(t.frames.size());
  parallel_for(t.frames.size(), jobs, [&](std::size_t i) {
    const FrameIndex f = t.frames[i];
    const auto frame = scene.render(f);
    write_file(paths.frame_path(f), encode_png_gray(quantize(frame.image)));
    write_mask_png(paths.gt_path(f), frame.mask);
    if (t.is_key(f)) write_mask_png(paths.mask_path(f), frame.mask);
    write_prob_map(paths.prob_path(f), simulate_probabilities(frame.mask, scene.class_count()));
    out.oracle[i] = frame.mask;
  });
  const std::vector<std::pair<FrameIndex, FrameIndex>> pair_list(pairs.begin(), pairs.end());
  parallel_for(pair_list.size(), jobs, [&](std::size_t i) {
    const auto [a, b] = pair_list[i];
    write_flo(paths.flow_path(a, b), scene.analytic_flow(a, b));
  });
  return out;
}

}  // namespace labelprop
