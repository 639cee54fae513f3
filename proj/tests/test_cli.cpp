#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <numeric>
#include <sstream>

#include "labelprop/cli.hpp"
#include "support.hpp"

using namespace labelprop;
using testsupport::scratch_dir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Value of a "key = value" line in report text, or "" when absent.
std::string field(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  const std::string prefix = key + " = ";
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  return "";
}

double number(const std::string& text, const std::string& key) {
  const auto v = field(text, key);
  EXPECT_FALSE(v.empty()) << "no " << key << " in:\n" << text;
  return v.empty() ? std::nan("") : std::stod(v);
}

fs::path synth_video(const std::string& name, std::vector<std::string> extra = {}) {
  const auto dir = scratch_dir(name);
  std::vector<std::string> args{"synth", "--out", (dir / "video").string()};
  args.insert(args.end(), extra.begin(), extra.end());
  const auto r = cli(args);
  EXPECT_EQ(r.code, 0) << r.err;
  return dir;
}

std::size_t file_count(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(std::distance(fs::recursive_directory_iterator(dir),
                                                fs::recursive_directory_iterator()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Exit codes and configuration.

TEST(CliBasics, HelpAndVersionSucceed) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  const auto v = cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("labelprop"), std::string::npos);
  EXPECT_EQ(cli({"interpolate", "--help"}).code, 0);
}

TEST(CliBasics, UsageErrorsAreConfigErrors) {
  EXPECT_EQ(cli({}).code, kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(cli({"interpolate", "--flow-source", "magic"}).code, kExitConfig);
  EXPECT_EQ(cli({"evaluate", "seg", "--gt", "x"}).code, kExitConfig);
}

TEST(CliBasics, MissingDatasetNamesTheKey) {
  const auto r = cli({"interpolate", "--out", scratch_dir("cli_nods").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("dataset"), std::string::npos) << r.err;
}

TEST(CliBasics, UnknownConfigKeyRejected) {
  const auto dir = scratch_dir("cli_badkey");
  write_text(dir / "c.json", R"({"dataset": "d", "out": "o", "fusion": {"tau_flw": 0.5}})");
  const auto r = cli({"interpolate", "--config", (dir / "c.json").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("fusion.tau_flw"), std::string::npos) << r.err;

  write_text(dir / "t.json", R"({"dataset": "d", "out": "o", "jobs": "many"})");
  EXPECT_EQ(cli({"interpolate", "--config", (dir / "t.json").string()}).code, kExitConfig);
  write_text(dir / "r.json", R"({"dataset": "d", "out": "o", "fusion": {"tau_flow": 1.5}})");
  EXPECT_EQ(cli({"interpolate", "--config", (dir / "r.json").string()}).code, kExitConfig);
  EXPECT_EQ(cli({"interpolate", "--config", (dir / "absent.json").string()}).code, kExitConfig);
}

TEST(CliBasics, BadDataIsAValidationError) {
  const auto dir = scratch_dir("cli_baddata");
  const auto r = cli({"interpolate", "--dataset", (dir / "nope").string(), "--out",
                      (dir / "out").string()});
  EXPECT_EQ(r.code, kExitValidation);
}

TEST(CliBasics, SampleConfigParses) {
  const fs::path sample = fs::path(LABELPROP_SOURCE_DIR) / "configs" / "interpolate.json";
  ASSERT_TRUE(fs::exists(sample));
  EXPECT_NO_THROW(load_config_file(sample));
}

TEST(CliBasics, BinaryReportsExitCodes) {
  const std::string bin = LABELPROP_CLI;
  EXPECT_EQ(std::system((bin + " --version > /dev/null").c_str()), 0);
  const int status = std::system((bin + " interpolate 2> /dev/null").c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), kExitConfig);
}

// ---------------------------------------------------------------------------
// interpolate

TEST(CliInterpolate, SynthVideoFullyCovered) {
  const auto dir = synth_video("cli_interp");
  const auto r = cli({"interpolate", "--dataset", (dir / "video").string(), "--out",
                      (dir / "out").string(), "--flow-source", "files"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(number(r.out, "synth.coverage_percent"), 100.0);
  EXPECT_EQ(number(r.out, "synth.frames"), 31);
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "run_report.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "run_report.txt"));
  EXPECT_EQ(read_pseudo_labels(dir / "out").at("synth").size(), 31u);

  const auto e = cli({"evaluate", "seg", "--pred", (dir / "out" / "synth").string(), "--gt",
                      (dir / "video" / "gt").string(), "--classes", "1", "2"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_GE(number(e.out, "miou"), 0.95);
}

TEST(CliInterpolate, LongGapReportsUncoveredFrames) {
  const auto dir = synth_video("cli_gap", {"--scene", "static", "--frames", "61",
                                           "--key-period", "60"});
  const auto r = cli({"interpolate", "--dataset", (dir / "video").string(), "--out",
                      (dir / "out").string(), "--flow-source", "files", "--max-hop", "15"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("warning: synth has 29 uncovered frame(s)"), std::string::npos) << r.out;
  EXPECT_NEAR(number(r.out, "synth.coverage_percent"), 100.0 * 32 / 61, 1e-6);
  const auto labels = read_pseudo_labels(dir / "out").at("synth");
  for (const auto& l : labels) {
    const bool expect_covered = l.frame <= 15 || l.frame >= 45;
    EXPECT_EQ(l.covered, expect_covered) << l.frame;
    if (!expect_covered) {
      for (LabelId id : l.mask.ids.data) ASSERT_EQ(id, kVoidId);
      EXPECT_EQ(l.confidence.mean(), 0.0);
    }
  }
}

TEST(CliInterpolate, ValidationFailureLeavesNoOutput) {
  const auto dir = synth_video("cli_partial");
  fs::remove(dir / "video" / "probs" / "000017.prb");
  const auto r = cli({"interpolate", "--dataset", (dir / "video").string(), "--out",
                      (dir / "out").string(), "--flow-source", "files"});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("000017.prb"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "out"));

  const auto d2 = synth_video("cli_partial_flow");
  write_file(d2 / "video" / "flows" / "000004_000005.flo", Bytes{0, 1, 2});
  const auto r2 = cli({"interpolate", "--dataset", (d2 / "video").string(), "--out",
                       (d2 / "out").string(), "--flow-source", "files"});
  EXPECT_EQ(r2.code, kExitValidation);
  EXPECT_EQ(file_count(d2 / "out"), 0u);
}

// ---------------------------------------------------------------------------
// evaluate

TEST(CliEvaluate, IdenticalSegmentationScoresOne) {
  const auto dir = synth_video("cli_seg");
  const auto gt = (dir / "video" / "gt").string();
  const auto r = cli({"evaluate", "seg", "--pred", gt, "--gt", gt, "--out",
                      (dir / "rep").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(number(r.out, "miou"), 1.0);
  EXPECT_EQ(number(r.out, "mciou"), 1.0);
  EXPECT_TRUE(fs::exists(dir / "rep" / "evaluation.json"));
  EXPECT_TRUE(fs::exists(dir / "rep" / "evaluation.txt"));
}

TEST(CliEvaluate, FrameSetMismatchIsAValidationError) {
  const auto dir = synth_video("cli_seg_mismatch");
  fs::copy(dir / "video" / "gt", dir / "pred");
  fs::remove(dir / "pred" / "000003.png");
  const auto r = cli({"evaluate", "seg", "--pred", (dir / "pred").string(), "--gt",
                      (dir / "video" / "gt").string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("000003"), std::string::npos) << r.err;
}

TEST(CliEvaluate, AnticipationFixture) {
  const auto dir = scratch_dir("cli_ant");
  write_text(dir / "pred.json", R"({"frames": [0, 1, 2, 3], "remaining": [25, 18, 12, 0]})");
  write_text(dir / "gt.json", R"({"frames": [0, 1, 2, 3], "remaining": [40, 20, 10, 0]})");
  const auto r = cli({"evaluate", "anticipation", "--pred", (dir / "pred.json").string(), "--gt",
                      (dir / "gt.json").string(), "--preset", "misaw"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(number(r.out, "mae_in"), 2.0);
  EXPECT_EQ(number(r.out, "horizon"), 25.0);
  EXPECT_EQ(cli({"evaluate", "anticipation", "--pred", (dir / "pred.json").string(), "--gt",
                 (dir / "gt.json").string()})
                .code,
            kExitConfig);
}

TEST(CliEvaluate, AnticipationFromTimeline) {
  const auto dir = synth_video("cli_ant_tl");
  // Step ids follow (frame / 10) % 3 at 30 fps; step 1 starts at frame 10.
  Json pred;
  std::vector<int> frames(31);
  std::iota(frames.begin(), frames.end(), 0);
  std::vector<double> rem;
  for (int f : frames) rem.push_back(f < 10 ? (10 - f) / 30.0 : f < 20 ? 0.0 : 25.0);
  pred["frames"] = frames;
  pred["remaining"] = rem;
  write_text(dir / "pred.json", pred.dump());
  const auto r = cli({"evaluate", "anticipation", "--pred", (dir / "pred.json").string(),
                      "--gt-timeline", (dir / "video").string(), "--step", "1", "--horizon",
                      "25"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(number(r.out, "mae_in"), 0.0, 1e-9);
}

TEST(CliEvaluate, DetectionFixture) {
  const auto dir = scratch_dir("cli_det");
  write_text(dir / "pred.json",
             R"({"detections": [{"frame": 0, "class_id": 1, "score": 0.9, "box": [0, 0, 6, 10]}]})");
  write_text(dir / "gt.json",
             R"({"instances": [{"frame": 0, "class_id": 1, "box": [0, 0, 10, 10]}]})");
  const auto r = cli({"evaluate", "det", "--pred", (dir / "pred.json").string(), "--gt",
                      (dir / "gt.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(number(r.out, "map"), 1.0);
  const auto strict = cli({"evaluate", "det", "--pred", (dir / "pred.json").string(), "--gt",
                           (dir / "gt.json").string(), "--iou-threshold", "0.7"});
  EXPECT_EQ(number(strict.out, "map"), 0.0);
  write_text(dir / "bad.json", R"({"detections": [{"frame": 0, "class_id": 1}]})");
  EXPECT_EQ(cli({"evaluate", "det", "--pred", (dir / "bad.json").string(), "--gt",
                 (dir / "gt.json").string()})
                .code,
            kExitValidation);
}

TEST(CliEvaluate, ClassificationFixture) {
  const auto dir = scratch_dir("cli_cls");
  write_text(dir / "pred.json",
             R"({"frames": [0, 1, 2, 3], "scores": [[0.9, 0.1], [0.4, 0.6], [0.2, 0.8], [0.3, 0.7]]})");
  write_text(dir / "gt.json", R"({"frames": [0, 1, 2, 3], "labels": [0, 0, 1, 1]})");
  const auto r = cli({"evaluate", "cls", "--pred", (dir / "pred.json").string(), "--gt",
                      (dir / "gt.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(number(r.out, "accuracy"), 0.75, 1e-6);
  EXPECT_NEAR(number(r.out, "macro_f1"), 0.733333, 1e-6);
}

// ---------------------------------------------------------------------------
// flow

TEST(CliFlow, EstimateRecoversATranslation) {
  const auto dir = scratch_dir("cli_flow");
  const synth::Texture tex(5, 120, 70);
  GrayImage a(64, 48), b(64, 48);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x) {
      a.at(x, y) = static_cast<float>(tex(x, y));
      b.at(x, y) = static_cast<float>(tex(x - 3, y));
    }
  write_file(dir / "a.png", encode_png_gray(quantize(a)));
  write_file(dir / "b.png", encode_png_gray(quantize(b)));
  const auto r = cli({"flow", "estimate", (dir / "a.png").string(), (dir / "b.png").string(),
                      "--out", (dir / "ab.flo").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(number(r.out, "interior_median_fx"), 3.0, 0.25);
  EXPECT_NEAR(number(r.out, "interior_median_fy"), 0.0, 0.25);
  EXPECT_EQ(read_flo(dir / "ab.flo").width(), 64);

  const auto same = cli({"flow", "estimate", (dir / "a.png").string(),
                         (dir / "a.png").string(), "--out", (dir / "aa.flo").string()});
  ASSERT_EQ(same.code, 0) << same.err;
  const auto zero = read_flo(dir / "aa.flo");
  for (float v : zero.fx.data) ASSERT_EQ(v, 0.f);
  for (float v : zero.fy.data) ASSERT_EQ(v, 0.f);

  EXPECT_EQ(cli({"flow", "estimate", (dir / "a.png").string(), (dir / "b.png").string(),
                 "--out", (dir / "x.flo").string(), "--alpha", "-1"})
                .code,
            kExitConfig);
  EXPECT_EQ(cli({"flow", "estimate", (dir / "a.png").string(), (dir / "b.png").string(),
                 "--out", (dir / "x.flo").string(), "--method", "magic"})
                .code,
            kExitConfig);
}

TEST(CliFlow, CheckOnAnalyticPair) {
  const auto dir = synth_video("cli_check");
  const auto flows = dir / "video" / "flows";
  const auto r = cli({"flow", "check", (flows / "000004_000005.flo").string(),
                      (flows / "000005_000004.flo").string(), "--out", (dir / "rep").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const double in_bounds = number(r.out, "in_bounds_fraction");
  const double valid = number(r.out, "valid_fraction");
  EXPECT_EQ(in_bounds, 1.0);
  EXPECT_LE(valid, in_bounds);
  EXPECT_GE(valid, 0.95);
  EXPECT_TRUE(fs::exists(dir / "rep" / "flow_check.json"));
}

// ---------------------------------------------------------------------------
// overlay

namespace {

// First entries of the VOC colour map, written out by hand.
Rgb expected_palette(LabelId id) {
  static const std::map<int, Rgb> table{
      {0, {0, 0, 0}},       {1, {128, 0, 0}},   {2, {0, 128, 0}},    {3, {128, 128, 0}},
      {4, {0, 0, 128}},     {5, {128, 0, 128}}, {6, {0, 128, 128}},  {7, {128, 128, 128}},
      {8, {64, 0, 0}},      {9, {192, 0, 0}},   {255, {224, 224, 192}}};
  return table.at(id);
}

}  // namespace

TEST(CliOverlay, PaletteMatchesTheReferenceTable) {
  for (int id : {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 255}) {
    const Rgb got = palette_color(static_cast<LabelId>(id));
    const Rgb want = expected_palette(static_cast<LabelId>(id));
    EXPECT_EQ(got.r, want.r) << id;
    EXPECT_EQ(got.g, want.g) << id;
    EXPECT_EQ(got.b, want.b) << id;
  }
}

TEST(CliOverlay, GoldenPanels) {
  const auto dir = scratch_dir("cli_overlay");
  RgbImage frame(4, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x)
      frame.at(x, y) = {std::uint8_t(10 + 40 * x), std::uint8_t(200 - 30 * y), 77};
  LabelMask mask(4, 2, 0);
  mask.at(1, 0) = 1;
  mask.at(2, 0) = 2;
  mask.at(3, 1) = kVoidId;
  write_rgb_png(dir / "frames/000000.png", frame);
  write_mask_png(dir / "masks/000000.png", mask);
  // An all-void mask leaves the blended panel identical to the frame.
  write_rgb_png(dir / "frames/000001.png", frame);
  write_mask_png(dir / "masks/000001.png", LabelMask(4, 2, kVoidId));

  const auto r = cli({"overlay", "--frames", (dir / "frames").string(), "--masks",
                      (dir / "masks").string(), "--out", (dir / "out").string(), "--jobs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;

  RgbImage golden(12, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) {
      const Rgb p = frame.at(x, y);
      const Rgb c = expected_palette(mask.at(x, y));
      golden.at(x, y) = p;
      golden.at(4 + x, y) = c;
      auto half = [](int a, int b) { return std::uint8_t((a + b + 1) / 2); };
      golden.at(8 + x, y) = mask.at(x, y) == kVoidId
                                ? p
                                : Rgb{half(p.r, c.r), half(p.g, c.g), half(p.b, c.b)};
    }
  EXPECT_EQ(read_file(dir / "out/000000.png"), encode_png_rgb(golden));

  const RgbImage all_void = read_rgb_png(dir / "out/000001.png");
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) {
      EXPECT_EQ(all_void.at(8 + x, y).r, frame.at(x, y).r);
      EXPECT_EQ(all_void.at(8 + x, y).g, frame.at(x, y).g);
      EXPECT_EQ(all_void.at(8 + x, y).b, frame.at(x, y).b);
    }
}

TEST(CliOverlay, MissingFrameRejected) {
  const auto dir = scratch_dir("cli_overlay_missing");
  write_mask_png(dir / "masks/000000.png", LabelMask(4, 2, 0));
  fs::create_directories(dir / "frames");
  const auto r = cli({"overlay", "--frames", (dir / "frames").string(), "--masks",
                      (dir / "masks").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_FALSE(fs::exists(dir / "out"));
}
