#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <exception>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "labelprop/commands.hpp"

namespace labelprop {

namespace detail {

// Anticipation horizons used by the two public surgical benchmarks.
inline double preset_horizon(const std::string& name) {
  if (name == "misaw") return kMisawHorizonSeconds;
  if (name == "cholec80") return kCholec80HorizonSeconds;
  throw ConfigError("unknown preset '" + name + "' (misaw, cholec80)");
}

}  // namespace detail

// Parses `args` (without the program name) and runs the selected command.
// Returns the process exit code; diagnostics go to `err`.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Key-frame label propagation and surgical video evaluation", "labelprop"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "labelprop 1.0");

  // interpolate
  InterpolateConfig cfg;
  std::string config_path, dataset, out_dir, flow_source;
  std::optional<int> max_hop, jobs;
  std::optional<double> pseudo_weight;
  auto* interp = app.add_subcommand("interpolate", "Propagate key-frame masks to every frame");
  interp->add_option("--config", config_path, "JSON configuration file");
  interp->add_option("--dataset", dataset, "Dataset root or single video directory");
  interp->add_option("--out", out_dir, "Output directory for pseudo-labels");
  interp->add_option("--flow-source", flow_source, "builtin or files")
      ->check(CLI::IsMember({"builtin", "files"}));
  interp->add_option("--max-hop", max_hop, "Largest frame distance to a key frame");
  interp->add_option("--pseudo-weight", pseudo_weight, "Loss weight of non-key frames");
  interp->add_option("--jobs", jobs, "Worker threads");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score predictions against ground truth");
  eval->require_subcommand(1);
  std::string pred, gt;
  std::optional<std::string> report_dir;
  auto add_io = [&](CLI::App* s, bool gt_required) {
    s->add_option("--pred", pred, "Predictions")->required();
    auto* g = s->add_option("--gt", gt, "Ground truth");
    if (gt_required) g->required();
    s->add_option("--out", report_dir, "Directory for evaluation.json and evaluation.txt");
  };
  std::vector<int> seg_classes;
  auto* seg = eval->add_subcommand("seg", "Semantic segmentation IoU");
  add_io(seg, true);
  seg->add_option("--classes", seg_classes, "Class ids to score (default: all present)");
  double iou_threshold = kDefaultDetectionIoU;
  auto* det = eval->add_subcommand("det", "Instance detection mAP");
  add_io(det, true);
  det->add_option("--iou-threshold", iou_threshold, "Box IoU needed for a match")
      ->capture_default_str();
  auto* cls = eval->add_subcommand("cls", "Phase or step classification");
  add_io(cls, true);
  std::optional<double> horizon;
  std::optional<std::string> preset, gt_timeline;
  std::optional<int> step;
  auto* ant = eval->add_subcommand("anticipation", "Remaining-time anticipation error");
  add_io(ant, false);
  ant->add_option("--horizon", horizon, "Horizon in seconds");
  ant->add_option("--preset", preset, "misaw (25 s) or cholec80 (300 s)");
  ant->add_option("--gt-timeline", gt_timeline, "Video directory whose timeline gives targets");
  ant->add_option("--step", step, "Step class anticipated (with --gt-timeline)");

  // flow
  auto* flow = app.add_subcommand("flow", "Estimate or check optical flow");
  flow->require_subcommand(1);
  FlowParams fp;
  std::string image_a, image_b, flow_out, method = "horn_schunck";
  auto* est = flow->add_subcommand("estimate", "Estimate flow from image A to image B");
  est->add_option("image_a", image_a, "Grayscale or RGB PNG of the first frame")->required();
  est->add_option("image_b", image_b, "PNG of the second frame, same size")->required();
  est->add_option("--out", flow_out, "Output .flo file")->required();
  est->add_option("--method", method, "horn_schunck or pyramidal_lk")->capture_default_str();
  est->add_option("--alpha", fp.smoothness_alpha, "Smoothness weight")->capture_default_str();
  est->add_option("--iterations", fp.iterations, "Sweeps per relinearization")
      ->capture_default_str();
  est->add_option("--levels", fp.pyramid_levels, "Pyramid levels")->capture_default_str();
  ConsistencyParams cp;
  std::string fwd_path, bwd_path;
  auto* chk = flow->add_subcommand("check", "Forward-backward consistency of a flow pair");
  chk->add_option("forward", fwd_path, "A to B flow")->required();
  chk->add_option("backward", bwd_path, "B to A flow")->required();
  chk->add_option("--fb-alpha", cp.alpha, "Tolerance growing with squared flow magnitude")->capture_default_str();
  chk->add_option("--fb-beta", cp.beta, "Constant tolerance in squared pixels")->capture_default_str();
  chk->add_option("--fb-sigma", cp.sigma, "Width of the soft confidence in pixels")->capture_default_str();
  chk->add_option("--out", report_dir, "Directory for flow_check.json and .txt");

  // overlay
  std::string ov_frames, ov_masks, ov_out;
  int ov_jobs = 1;
  auto* ov = app.add_subcommand("overlay", "Three-panel frame / mask / blend images");
  ov->add_option("--frames", ov_frames, "Directory of frame PNGs")->required();
  ov->add_option("--masks", ov_masks, "Directory of mask PNGs with matching names")->required();
  ov->add_option("--out", ov_out, "Output directory for the panels")->required();
  ov->add_option("--jobs", ov_jobs, "Worker threads")->capture_default_str();

  // synth
  SynthOptions so;
  std::string synth_out;
  int synth_jobs = 1;
  auto* syn = app.add_subcommand("synth", "Write a synthetic moving-shape video");
  syn->add_option("--out", synth_out, "Dataset root to create")->required();
  syn->add_option("--scene", so.scene, "Scene preset")
      ->check(CLI::IsMember({"translation", "static", "crossing"}))
      ->capture_default_str();
  syn->add_option("--seed", so.seed, "Texture seed")->capture_default_str();
  syn->add_option("--frames", so.frames, "Frame count (default from the scene)");
  syn->add_option("--key-period", so.key_period, "Distance between key frames");
  syn->add_option("--video-id", so.video_id, "Name of the video directory")->capture_default_str();
  syn->add_option("--jobs", synth_jobs, "Worker threads")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (interp->parsed()) {
      if (!config_path.empty()) cfg = load_config_file(config_path);
      if (!dataset.empty()) cfg.dataset = dataset;
      if (!out_dir.empty()) cfg.out = out_dir;
      if (!flow_source.empty()) cfg.flow_source = flow_source;
      if (max_hop) cfg.propagation.max_hop = *max_hop;
      if (pseudo_weight) cfg.pseudo_weight = *pseudo_weight;
      if (jobs) cfg.jobs = *jobs;
      return cmd_interpolate(cfg, out);
    }
    const auto dir = report_dir ? std::optional<fs::path>(*report_dir) : std::nullopt;
    if (seg->parsed()) return emit_evaluation(evaluate_segmentation({pred, gt, seg_classes}), dir, out);
    if (det->parsed()) return emit_evaluation(evaluate_detection({pred, gt, iou_threshold}), dir, out);
    if (cls->parsed()) return emit_evaluation(evaluate_classification({pred, gt}), dir, out);
    if (ant->parsed()) {
      AnticipationEvalOptions o;
      o.pred = pred;
      if (!gt.empty()) o.gt = fs::path(gt);
      if (gt_timeline) o.gt_timeline = fs::path(*gt_timeline);
      o.step = step;
      if (preset && horizon) throw ConfigError("give either --preset or --horizon, not both");
      o.horizon = preset ? std::optional<double>(detail::preset_horizon(*preset)) : horizon;
      return emit_evaluation(evaluate_anticipation(o), dir, out);
    }
    if (est->parsed()) {
      try {
        fp.method = parse_flow_method(method);
        fp.validate();
      } catch (const ValidationError& e) {
        throw ConfigError(e.what());
      }
      return cmd_flow_estimate(image_a, image_b, flow_out, fp, out);
    }
    if (chk->parsed()) {
      try {
        cp.validate();
      } catch (const ValidationError& e) {
        throw ConfigError(e.what());
      }
      const Json r = flow_check_report(read_flo(fwd_path), read_flo(bwd_path), cp);
      if (dir) write_report(*dir, "flow_check", r);
      out << report_text(r);
      return kExitOk;
    }
    if (ov->parsed()) {
      if (ov_jobs < 1) throw ConfigError("--jobs must be >= 1");
      return cmd_overlay(ov_frames, ov_masks, ov_out, ov_jobs, out);
    }
    if (syn->parsed()) {
      if (synth_jobs < 1) throw ConfigError("--jobs must be >= 1");
      so.out = synth_out;
      return cmd_synth(so, synth_jobs, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  err << "error: no command given\n";
  return kExitConfig;
}

}  // namespace labelprop
