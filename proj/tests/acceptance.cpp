// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "labelprop/commands.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace labelprop;
namespace ts = testsupport;

namespace {

// Tolerances.
constexpr double kAnalyticIoU = 1.0;            // exact reproduction
constexpr double kEstimatedIoU = 0.95;          // built-in flow, shape interior
constexpr double kWarpSeconds = 30.0;
constexpr double kEpeLimit = 0.5;               // px
constexpr int kEpeMargin = 8;                   // px excluded at each border
constexpr double kEnergySlack = 1e-6;           // relative, float storage
constexpr double kSoftTolerance = 1e-6;
constexpr double kMetricTolerance = 1e-9;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int id, const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  failures += !o.pass;
  std::printf("%s criterion %d %s:%s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.str().c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GrayImage texture_image(int w, int h, double dx, double dy, std::uint64_t seed) {
  const synth::Texture tex(seed, 120.0, 70.0);
  GrayImage im(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) im.at(x, y) = static_cast<float>(tex(x - dx, y - dy));
  return im;
}

// ---------------------------------------------------------------------------

void warp_oracle(Outcome& o) {
  const synth::SynthScene scene(synth::translation_scene());
  const auto t = scene.timeline();
  o.require(scene.width() == 64 && scene.height() == 64 && scene.frame_count() == 31 &&
                scene.config().key_period == 30,
            "scene layout");
  std::map<FrameIndex, LabelMask> keys;
  for (FrameIndex k : t.key_frames) keys[k] = scene.render(k).mask;
  std::vector<LabelMask> gt;
  for (FrameIndex f : t.frames) gt.push_back(scene.render(f).mask);
  const std::set<LabelId> shapes{1, 2};

  PropagationConfig cfg;
  cfg.frames = ts::rendered_frames(scene);
  double analytic_min = 1.0;
  for (FlowRoute route : {FlowRoute::kChained, FlowRoute::kDirect}) {
    cfg.route = route;
    const auto prop = propagate_labels(t, keys, ts::analytic_flows(scene), cfg);
    for (FrameIndex f : t.frames)
      for (LabelId c : shapes)
        analytic_min = std::min(analytic_min, ts::class_iou(prop.at(f).mask, gt[f], c));
  }
  o.require(analytic_min >= kAnalyticIoU, "analytic IoU");

  cfg.route = FlowRoute::kChained;
  const FlowParams fp;
  const auto t0 = std::chrono::steady_clock::now();
  const auto est = propagate_labels(
      t, keys,
      [&](FrameIndex a, FrameIndex b) {
        return estimate_flow(scene.render(a).image, scene.render(b).image, fp, {a, b}).flow;
      },
      cfg);
  const double secs = seconds_since(t0);
  double interior_min = 1.0, full_min = 1.0;
  for (FrameIndex f : t.frames) {
    const auto interior = ts::interior_pixels(gt[f]);
    for (LabelId c : shapes) {
      interior_min = std::min(interior_min, ts::class_iou(est.at(f).mask, gt[f], c, &interior));
      full_min = std::min(full_min, ts::class_iou(est.at(f).mask, gt[f], c));
    }
  }
  o.require(interior_min >= kEstimatedIoU, "estimated-flow interior IoU");
  o.require(secs < kWarpSeconds, "runtime");
  o.detail << " analytic min IoU " << analytic_min << ", Horn-Schunck min interior IoU "
           << interior_min << " (full-mask " << full_min << ", info), " << secs << " s";
}

void flow_solver(Outcome& o) {
  const FlowParams p;
  double worst = 0;
  for (auto [dx, dy] : std::vector<std::pair<int, int>>{{3, 0}, {0, 2}, {-2, 1}, {1, -3}}) {
    const GrayImage a = texture_image(96, 64, 0, 0, 5), b = texture_image(96, 64, dx, dy, 5);
    const auto est = estimate_flow(a, b, p, {0, 1}).flow;
    double s = 0;
    int n = 0;
    for (int y = kEpeMargin; y < 64 - kEpeMargin; ++y)
      for (int x = kEpeMargin; x < 96 - kEpeMargin; ++x, ++n)
        s += std::hypot(est.fx.at(x, y) - dx, est.fy.at(x, y) - dy);
    worst = std::max(worst, s / n);
  }
  o.require(worst < kEpeLimit, "endpoint error");

  bool monotone = true;
  for (bool robust : {false, true}) {
    const GrayImage a = texture_image(40, 40, 0, 0, 9), b = texture_image(40, 40, 2, -1, 9);
    const FlowField base(40, 40, {0, 1});
    auto problem = linearize_horn_schunck(a, b, base, p.smoothness_alpha);
    FlowField f = base;
    if (robust) {
      for (int i = 0; i < 5; ++i) problem.sweep(f, kSorRelaxation);
      problem.reweight(f, p.charbonnier_data, p.charbonnier_smooth);
    }
    double prev = problem.energy(f);
    for (int i = 0; i < 100; ++i) {
      problem.sweep(f, kSorRelaxation);
      const double e = problem.energy(f);
      monotone &= e <= prev * (1 + kEnergySlack) + 1e-9;
      prev = e;
    }
  }
  o.require(monotone, "energy non-increasing");

  const GrayImage a = texture_image(48, 40, 0, 0, 3);
  bool zero = true;
  for (auto method : {FlowMethod::kHornSchunck, FlowMethod::kPyramidalLucasKanade}) {
    FlowParams q;
    q.method = method;
    const auto f = estimate_flow(a, a, q, {0, 1}).flow;
    for (std::size_t i = 0; i < f.fx.size(); ++i)
      zero &= f.fx.data[i] == 0.f && f.fy.data[i] == 0.f;
  }
  o.require(zero, "identical pair gives exact zero");
  o.detail << " worst mean EPE " << worst << " px";
}

void forward_backward(Outcome& o) {
  bool hard = true;
  for (auto [dx, dy] : std::vector<std::pair<int, int>>{{2, 0}, {-3, 1}, {0, -4}, {1, 1}}) {
    const auto fab = FlowField::constant(20, 12, float(dx), float(dy), {0, 1});
    const auto fba = FlowField::constant(20, 12, float(-dx), float(-dy), {1, 0});
    const auto r = forward_backward_confidence(fab, fba, {});
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 20; ++x) {
        const bool in = x + dx >= 0 && x + dx <= 19 && y + dy >= 0 && y + dy <= 11;
        hard &= (r.valid.at(x, y) == 1) == in;
      }
  }
  o.require(hard, "hard validity on in-bounds pixels");
  // Forward +1 and backward +1: the round trip misses by 2 px.
  const auto r = forward_backward_confidence(FlowField::constant(8, 8, 1, 0, {0, 1}),
                                             FlowField::constant(8, 8, 1, 0, {1, 0}),
                                             ConsistencyParams{0.01, 0.5, 1.0});
  const double soft = r.confidence.at(3, 3);
  o.require(std::abs(soft - std::exp(-4.0)) <= kSoftTolerance, "soft value");
  o.detail << " soft value " << soft << " vs " << std::exp(-4.0);
}

void metric_oracles(Outcome& o) {
  std::mt19937 rng(21);
  auto box = [&] {
    std::uniform_int_distribution<int> c(0, 6), s(1, 5);
    const double x = c(rng), y = c(rng);
    return Box{x, y, x + s(rng), y + s(rng)};
  };
  const std::vector<double> pool{0.2, 0.5, 0.5, 0.7, 0.9};
  int fixtures = 0, mismatches = 0;
  for (int trial = 0; trial < 5000; ++trial) {
    std::vector<Detection> dets;
    std::vector<GroundTruthInstance> gts;
    const int nd = static_cast<int>(rng() % 5), ng = static_cast<int>(rng() % 4);
    for (int i = 0; i < nd; ++i)
      dets.push_back({FrameIndex(rng() % 2), box(), int(rng() % 2), pool[rng() % pool.size()], {}});
    for (int i = 0; i < ng; ++i) gts.push_back({FrameIndex(rng() % 2), box(), int(rng() % 2), {}});
    const double thr = trial % 2 ? 0.5 : 0.3;
    const auto r = detection_ap(dets, gts, thr);
    for (int c = 0; c < 2; ++c) {
      std::vector<Detection> cd;
      std::vector<GroundTruthInstance> cg;
      for (const auto& d : dets)
        if (d.class_id == c) cd.push_back(d);
      for (const auto& g : gts)
        if (g.class_id == c) cg.push_back(g);
      if (cd.empty() && cg.empty()) continue;
      ++fixtures;
      const auto want = ts::brute_class_ap(cd, cg, thr);
      const auto got = r.per_class.at(c).ap;
      if (got.has_value() != want.has_value() || (got && *got != *want)) ++mismatches;
    }
  }
  o.require(mismatches == 0, "detection AP vs brute force");

  auto mask = [](std::vector<LabelId> v) {
    LabelMask m(4, 1);
    m.ids.data = std::move(v);
    return m;
  };
  const auto ga = mask({1, 1, 0, 0}), gb = mask({1, 0, 0, 2}), pb = mask({1, 1, 1, 2});
  const double mi = *miou({ga, pb}, {ga, gb}, {1, 2});
  const double mc = *mciou({ga, pb}, {ga, gb}, {1, 2});
  o.require(std::abs(mi - (1.0 + 2.0 / 3.0) / 2.0) <= kMetricTolerance, "mIoU");
  o.require(std::abs(mc - 0.8) <= kMetricTolerance, "mcIoU");

  const auto cls =
      classification_scores({{0.9, 0.1}, {0.4, 0.6}, {0.2, 0.8}, {0.3, 0.7}}, {0, 0, 1, 1});
  o.require(std::abs(cls.accuracy - 0.75) <= kMetricTolerance, "accuracy");
  o.require(std::abs(*cls.f1.at(0) - 2.0 / 3.0) <= kMetricTolerance, "F1 class 0");
  o.require(std::abs(*cls.f1.at(1) - 0.8) <= kMetricTolerance, "F1 class 1");
  o.require(std::abs(*cls.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0) <= kMetricTolerance, "macro F1");

  const AnticipationEval in{25, {25, 18, 12, 0}, {25, 20, 10, 0}};
  const AnticipationEval e{25, {1, 2, 5}, {2, 1, 5}};
  const AnticipationEval edges{25, {3, 9}, {0, 25}};
  o.require(mae_in(in) == 2.0, "mae_in fixture");
  o.require(mae_e(e) == 1.0, "mae_e fixture");
  o.require(!mae_in(edges) && !mae_e(edges), "boundary exclusion");
  o.detail << " " << fixtures << " AP fixtures, " << mismatches << " mismatches";
}

void constants(Outcome& o) {
  const synth::SynthScene scene(synth::translation_scene());
  const auto dir = ts::scratch_dir("acceptance_constants");
  generate_synth(scene, dir / "video");
  InterpolateConfig c;
  c.dataset = dir / "video";
  c.out = dir / "out";
  c.flow_source = "files";
  std::ostringstream sink;
  cmd_interpolate(c, sink);
  const auto labels = read_pseudo_labels(fs::path(c.out)).at("synth");
  const auto t = scene.timeline();
  int keys = 0, pseudo = 0;
  bool weights = true;
  for (const auto& l : labels) {
    if (t.is_key(l.frame)) {
      ++keys;
      weights &= l.loss_weight == 1.0;
    } else {
      ++pseudo;
      weights &= l.loss_weight == 0.03;
    }
  }
  o.require(weights && keys == 2 && pseudo == 29, "loss weights");
  o.require(kMisawHorizonSeconds == 25.0 && kCholec80HorizonSeconds == 300.0, "horizons");
  for (double h : {25.0, 300.0}) {
    FrameTimeline tl;
    tl.fps = 1;
    for (FrameIndex f = 0; f < 400; ++f) {
      tl.frames.push_back(f);
      tl.step_of[f] = f >= 350 ? 1 : 0;
    }
    const auto s = anticipation_targets(tl, 1, h);
    o.require(s.horizon == h && s.remaining[0] == std::min(350.0, h), "anticipation horizon");
  }
  o.require(kDefaultDetectionIoU == 0.5 && detection_ap({}, {}).iou_threshold == 0.5,
            "detection IoU threshold");
  o.detail << " key weight 1.0 x" << keys << ", pseudo weight 0.03 x" << pseudo
           << ", horizons 25/300 s, IoU 0.5";
}

void round_trips(Outcome& o) {
  std::mt19937 rng(31);
  std::uniform_real_distribution<float> u(-30, 30);
  FlowField f(23, 11);
  for (auto& v : f.fx.data) v = u(rng);
  for (auto& v : f.fy.data) v = u(rng);
  const Bytes flo = encode_flo(f);
  const FlowField f2 = decode_flo(flo);
  o.require(f2.fx.data == f.fx.data && f2.fy.data == f.fy.data && encode_flo(f2) == flo,
            "flow file");
  const Bytes magic{flo.begin(), flo.begin() + 4};
  const auto bits = std::bit_cast<std::uint32_t>(202021.25f);
  o.require(magic == Bytes{std::uint8_t(bits), std::uint8_t(bits >> 8), std::uint8_t(bits >> 16),
                           std::uint8_t(bits >> 24)},
            "flow magic");

  const auto dir = ts::scratch_dir("acceptance_formats");
  LabelMask m(17, 9);
  for (auto& v : m.ids.data) v = rng() % 4 == 0 ? kVoidId : LabelId(rng() % 200);
  write_mask_png(dir / "m.png", m);
  o.require(read_mask_png(dir / "m.png").ids == m.ids, "mask raster");

  ProbMap p(9, 5, 3);
  for (auto& v : p.p) v = std::uniform_real_distribution<float>(0, 1)(rng);
  write_prob_map(dir / "p.prb", p);
  o.require(read_prob_map(dir / "p.prb") == p && encode_prob_map(read_prob_map(dir / "p.prb")) ==
                                                   read_file(dir / "p.prb"),
            "prob map");

  const synth::SynthScene scene(synth::crossing_scene());
  generate_synth(scene, dir / "video");
  InterpolateConfig c;
  c.dataset = dir / "video";
  c.out = dir / "out";
  c.flow_source = "files";
  std::ostringstream sink;
  cmd_interpolate(c, sink);
  const auto labels = read_pseudo_labels(fs::path(c.out)).at("synth");
  const auto entries =
      write_pseudo_labels(dir / "again", "synth", scene.timeline(), labels,
                          read_json(fs::path(c.out) / "synth" / "000001.json").at("fusion"));
  write_manifest(dir / "again", entries);
  o.require(read_file(dir / "again" / kManifestName) ==
                read_file(fs::path(c.out) / kManifestName),
            "pseudo-label manifest");
  o.detail << " flo, PNG mask, PRB1, manifest (" << entries.size() << " files)";
}

void fusion_behaviour(Outcome& o) {
  const synth::SynthScene s(synth::crossing_scene());
  const auto t = s.timeline();
  std::map<FrameIndex, LabelMask> keys;
  for (FrameIndex k : t.key_frames) keys[k] = s.render(k).mask;
  PropagationConfig cfg;
  cfg.frames = ts::rendered_frames(s);
  const auto prop = propagate_labels(t, keys, ts::analytic_flows(s), cfg);
  long long band_px = 0, band_void = 0, out_px = 0, out_void = 0;
  bool idempotent = true;
  const FusionParams params;
  for (FrameIndex f : t.frames) {
    if (t.is_key(f)) continue;
    const auto& p = prop.at(f);
    const auto fused =
        fuse(p.mask, p.confidence, simulate_probabilities(s.render(f).mask, s.class_count()),
             params);
    const auto band = ts::occlusion_band(s, p.source_key_frame, f);
    for (std::size_t i = 0; i < band.size(); ++i) {
      const bool v = fused.mask.ids.data[i] == kVoidId;
      if (band.data[i]) {
        ++band_px;
        band_void += v;
      } else {
        ++out_px;
        out_void += v;
      }
    }
    const auto once = refine(fused.mask, params, &fused.confidence);
    idempotent &= refine(once, params, &fused.confidence) == once;
    const auto plain = refine(fused.mask, params);
    idempotent &= refine(plain, params) == plain;
  }
  std::mt19937 rng(41);
  for (int trial = 0; trial < 40; ++trial) {
    LabelMask m(32, 24, 0);
    for (int k = 0; k < 6; ++k) {
      const int cx = rng() % 32, cy = rng() % 24, r = 1 + rng() % 6;
      const LabelId id = rng() % 5 == 0 ? kVoidId : LabelId(1 + rng() % 3);
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 32; ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(x, y) = id;
    }
    FusionParams q;
    q.morph_radius = trial % 3;
    q.min_component_px = static_cast<int>(rng() % 60);
    const auto once = refine(m, q);
    idempotent &= refine(once, q) == once;
  }
  const double in_frac = band_px ? double(band_void) / double(band_px) : 0.0;
  const double out_frac = out_px ? double(out_void) / double(out_px) : 0.0;
  o.require(in_frac > 0.0, "void inside occluded band");
  o.require(out_void == 0, "no void outside band");
  o.require(idempotent, "refine idempotent");
  o.detail << " void fraction " << in_frac << " in band (" << band_px << " px), " << out_frac
           << " elsewhere";
}

void determinism(Outcome& o) {
  const auto dir = ts::scratch_dir("acceptance_jobs");
  const synth::SynthScene scene(synth::crossing_scene());
  generate_synth(scene, dir / "video");
  std::ostringstream sink;
  std::vector<Bytes> manifests;
  for (int jobs : {1, 8}) {
    InterpolateConfig c;
    c.dataset = dir / "video";
    c.out = dir / ("out" + std::to_string(jobs));
    c.jobs = jobs;
    cmd_interpolate(c, sink);
    manifests.push_back(read_file(fs::path(c.out) / kManifestName));
  }
  o.require(!manifests[0].empty() && manifests[0] == manifests[1], "manifest bytes");
  o.detail << " built-in flow, manifest " << manifests[0].size() << " bytes, jobs 1 vs 8";
}

}  // namespace

int main() {
  report(1, "warp oracle", warp_oracle);
  report(2, "flow solver", flow_solver);
  report(3, "forward-backward confidence", forward_backward);
  report(4, "metric oracles", metric_oracles);
  report(5, "constant conformance", constants);
  report(6, "format round-trips", round_trips);
  report(7, "fusion behaviour", fusion_behaviour);
  report(8, "determinism", determinism);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
