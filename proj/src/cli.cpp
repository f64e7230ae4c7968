#include "changeseg/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "changeseg/checkpoint.hpp"
#include "changeseg/config.hpp"
#include "changeseg/data.hpp"
#include "changeseg/image.hpp"
#include "changeseg/imageio.hpp"
#include "changeseg/losses.hpp"
#include "changeseg/metrics.hpp"
#include "changeseg/model.hpp"
#include "changeseg/ops.hpp"
#include "changeseg/synlcd.hpp"
#include "changeseg/trainer.hpp"

namespace changeseg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string device = "cpu";
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--set", args.overrides, "dotted-path override, e.g. train.seed=7");
  cmd->add_option("--seed", args.seed, "shorthand for --set train.seed=N (wins over both)");
  cmd->add_option("--device", args.device, "compute device; this build supports only \"cpu\"");
  cmd->footer("Config keys (via --config file or --set key=value):\n" + describe_config_keys());
}

FullConfig resolve_config(const ConfigArgs& args) {
  if (args.device != "cpu")
    throw std::runtime_error("unsupported device \"" + args.device + "\": this build is cpu-only");
  FullConfig cfg;
  if (!args.config_path.empty()) cfg = load_config_file(args.config_path);
  for (const std::string& kv : args.overrides) cfg = apply_override(cfg, kv);
  if (args.seed) cfg = apply_override(cfg, "train.seed=" + std::to_string(*args.seed));
  const auto violations = validate(cfg);
  if (!violations.empty()) {
    std::string msg = "invalid config:";
    for (const auto& v : violations) msg += " " + v + ";";
    throw std::runtime_error(msg);
  }
  return cfg;
}

SiameseChangeModel make_model(const FullConfig& cfg) {
  Rng rng(derive_seed(cfg.train.seed, 0x0de1u));
  return SiameseChangeModel(cfg.model, rng);
}

std::vector<Image> load_patterns(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& f : files) out.push_back(read_image(f));
  if (out.empty()) throw std::runtime_error("no .png patterns found in " + dir);
  return out;
}

LabelMask argmax_mask(const Tensor& logits) {
  const auto& z = logits.values();
  const int C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  LabelMask pred = LabelMask::zeros(H, W);
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (z[c * plane + i] > z[static_cast<std::size_t>(best) * plane + i]) best = c;
    pred.v[i] = static_cast<std::uint8_t>(best);
  }
  return pred;
}

/// Defect probability for curves: 1 - softmax(background) per pixel.
std::vector<double> defect_probability(const Tensor& logits) {
  const auto& z = logits.values();
  const int C = logits.dim(0);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  std::vector<double> prob(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    double mx = z[i];
    for (int c = 1; c < C; ++c) mx = std::max(mx, z[c * plane + i]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += std::exp(z[c * plane + i] - mx);
    prob[i] = 1.0 - std::exp(z[i] - mx) / s;
  }
  return prob;
}

Image colorize_mask(const LabelMask& m) {
  static const std::array<std::array<double, 3>, 8> palette{{{0, 0, 0},
                                                             {255, 64, 64},
                                                             {64, 255, 64},
                                                             {64, 64, 255},
                                                             {255, 255, 64},
                                                             {255, 64, 255},
                                                             {64, 255, 255},
                                                             {255, 255, 255}}};
  Image out = Image::zeros(3, m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      const auto& c = palette[m.at(y, x) % palette.size()];
      for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = c[static_cast<std::size_t>(ch)];
    }
  return out;
}

int run_synth(const std::string& patterns_dir, int builtin, int size, int count,
              const std::string& out_dir, std::uint64_t seed) {
  std::vector<Image> patterns;
  if (!patterns_dir.empty())
    patterns = load_patterns(patterns_dir);
  else
    for (int i = 0; i < builtin; ++i) patterns.push_back(make_builtin_pattern(i, size, size));
  const auto entries = build_dataset(patterns, count, out_dir, seed);
  std::printf("wrote %zu samples under %s\n", entries.size(), out_dir.c_str());
  return 0;
}

int run_train(const FullConfig& cfg, const std::string& data_root, const std::string& out_dir,
              const std::string& resume, bool quiet) {
  fs::create_directories(out_dir);
  const auto pairs = load_pairs(data_root, "train", cfg.model.num_classes);
  SiameseChangeModel model = make_model(cfg);
  AdamW opt;
  TrainOptions opts;
  opts.loss_log_path = (fs::path(out_dir) / "loss_log.csv").string();
  opts.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
  opts.verbose = !quiet;
  if (!resume.empty()) {
    NamedParams params = model.named_parameters();
    const CheckpointMeta meta = load_checkpoint(resume, params, &opt);
    opts.start_iteration = meta.iteration;
  }
  save_config_file(cfg, (fs::path(out_dir) / "config.json").string());
  const TrainResult res = train(model, opt, pairs, cfg, opts);
  std::printf("trained to iteration %lld; checkpoint at %s\n",
              static_cast<long long>(res.final_iteration), opts.checkpoint_path.c_str());
  return 0;
}

int run_eval(const FullConfig& cfg, const std::string& data_root, const std::string& ckpt,
             const std::string& out_dir) {
  fs::create_directories(out_dir);
  SiameseChangeModel model = make_model(cfg);
  {
    NamedParams params = model.named_parameters();
    load_checkpoint(ckpt, params, nullptr);
  }
  auto pairs = load_pairs(data_root, "test", cfg.model.num_classes);
  pairs = filter_by_classes(pairs, protocol_test_classes(cfg.train.protocol));
  if (pairs.empty()) throw std::runtime_error("eval: no test samples for this protocol");
  const EvalResult res = evaluate(model, pairs, cfg);

  std::string report = report_to_text(res.report);
  json summary{{"miou", res.report.miou},
               {"mfscore", res.report.mfscore},
               {"macc_recall", res.report.macc_recall},
               {"overall_accuracy", res.report.overall_accuracy}};
  if (res.out_of_class) {
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "ooc: best IoU %.4f at threshold %.4f; best Fscore %.4f at %.4f; "
                  "IoU@0.5 %.4f\n",
                  res.best_iou, res.best_iou_threshold, res.best_fscore,
                  res.best_fscore_threshold, res.iou_at_half);
    report += buf;
    summary["best_iou"] = res.best_iou;
    summary["best_iou_threshold"] = res.best_iou_threshold;
    summary["best_fscore"] = res.best_fscore;
    summary["best_fscore_threshold"] = res.best_fscore_threshold;
    summary["iou_at_half"] = res.iou_at_half;
  }

  // Curves + error maps over the whole split.
  std::vector<double> all_prob;
  LabelMask all_gt;
  all_gt.h = 0;
  const fs::path err_dir = fs::path(out_dir) / "errmaps";
  fs::create_directories(err_dir);
  std::int64_t err_total = 0;
  {
    NoGradGuard guard;
    for (const ImagePair& pair : pairs) {
      LabelMask pred;
      std::vector<double> prob;
      int h = pair.ng.h, w = pair.ng.w;
      if (res.out_of_class) {
        prob = distmap_probability(model, pair, cfg, &h, &w);
        pred = LabelMask::zeros(h, w);
        for (std::size_t i = 0; i < prob.size(); ++i)
          pred.v[i] = prob[i] >= res.best_fscore_threshold ? 1 : 0;
      } else {
        const ImagePair fp = fit_to_stride(pair, 32);
        h = fp.ng.h;
        w = fp.ng.w;
        const Tensor ng = normalize_image(fp.ng, cfg.train.norm_mean, cfg.train.norm_std);
        const Tensor ok = normalize_image(fp.ok, cfg.train.norm_mean, cfg.train.norm_std);
        const ModelOutput out = model.forward(ng, ok);
        pred = argmax_mask(out.logits_full);
        prob = defect_probability(out.logits_full);
      }
      const LabelMask gt =
          (h == pair.mask.h && w == pair.mask.w) ? pair.mask : resize_mask_nn(pair.mask, h, w);
      const ErrorMap em = error_map(pred, gt);
      err_total += em.err();
      write_image((err_dir / (pair.stem + ".png")).string(), em.image);
      all_prob.insert(all_prob.end(), prob.begin(), prob.end());
      all_gt.v.insert(all_gt.v.end(), gt.v.begin(), gt.v.end());
    }
  }
  all_gt.h = 1;
  all_gt.w = static_cast<int>(all_gt.v.size());
  const auto curves = pr_ft_curves(all_prob, all_gt, uniform_thresholds(256));
  std::ofstream(fs::path(out_dir) / "curves.csv") << curves_to_csv(curves);

  char buf[80];
  std::snprintf(buf, sizeof(buf), "Err (FP+FN over split): %lld\n",
                static_cast<long long>(err_total));
  report += buf;
  summary["err"] = err_total;

  std::ofstream(fs::path(out_dir) / "report.txt") << report;
  std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
  std::fputs(report.c_str(), stdout);
  return 0;
}

int run_infer(const FullConfig& cfg, const std::string& ckpt, const std::string& ng_path,
              const std::string& ok_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  SiameseChangeModel model = make_model(cfg);
  {
    NamedParams params = model.named_parameters();
    load_checkpoint(ckpt, params, nullptr);
  }
  ImagePair pair;
  pair.ng = read_image(ng_path);
  pair.ok = read_image(ok_path);
  pair.mask = LabelMask::zeros(pair.ng.h, pair.ng.w);
  pair.stem = fs::path(ng_path).stem().string();

  // artifacts come back at the caller's resolution even though the model
  // runs on stride-fitted inputs
  NoGradGuard guard;
  const int in_h = pair.ng.h, in_w = pair.ng.w;
  int h = 0, w = 0;
  const std::vector<double> prob = distmap_probability(model, pair, cfg, &h, &w);
  Image dist_img = Image::zeros(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        dist_img.at(c, y, x) = 255.0 * prob[static_cast<std::size_t>(y) * w + x];
  if (h != in_h || w != in_w) dist_img = resize_image(dist_img, in_h, in_w);
  write_image((fs::path(out_dir) / (pair.stem + "_dist.png")).string(), dist_img);

  if (cfg.model.mode == DecoderMode::intra_class) {
    const ImagePair fp = fit_to_stride(pair, 32);
    const Tensor ng = normalize_image(fp.ng, cfg.train.norm_mean, cfg.train.norm_std);
    const Tensor ok = normalize_image(fp.ok, cfg.train.norm_mean, cfg.train.norm_std);
    const ModelOutput out = model.forward(ng, ok);
    LabelMask pred = argmax_mask(out.logits_full);
    if (pred.h != in_h || pred.w != in_w) pred = resize_mask_nn(pred, in_h, in_w);
    write_mask((fs::path(out_dir) / (pair.stem + "_pred.png")).string(), pred);
    write_image((fs::path(out_dir) / (pair.stem + "_pred_rgb.png")).string(),
                colorize_mask(pred));
  }
  std::printf("wrote predictions under %s\n", out_dir.c_str());
  return 0;
}

int run_report(const std::vector<std::string>& run_dirs) {
  std::printf("%-28s %8s %8s %8s %8s\n", "run", "mIoU", "mFscore", "mAcc", "acc");
  for (const std::string& dir : run_dirs) {
    const fs::path p = fs::path(dir) / "summary.json";
    std::ifstream is(p);
    if (!is) throw std::runtime_error("report: cannot read " + p.string());
    json j;
    is >> j;
    std::printf("%-28s %8.4f %8.4f %8.4f %8.4f\n", fs::path(dir).filename().string().c_str(),
                j.value("miou", 0.0), j.value("mfscore", 0.0), j.value("macc_recall", 0.0),
                j.value("overall_accuracy", 0.0));
  }
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  // honored even when no (valid) subcommand is present
  for (int i = 1; i < argc; ++i)
    if (std::string_view(argv[i]) == "--help-config") {
      std::fputs(describe_config_keys().c_str(), stdout);
      return 0;
    }

  CLI::App app{"change-aware siamese defect segmentation"};
  app.require_subcommand(1);
  app.add_flag("--help-config", "list every config key and exit");

  auto* synth = app.add_subcommand("synth", "generate a synthetic defect dataset");
  std::string patterns_dir, out_dir = "synlcd_out";
  int builtin = 0, size = 512, count = 10;
  std::uint64_t seed = 1;
  synth->add_option("--patterns", patterns_dir, "directory of clean pattern PNGs");
  synth->add_option("--builtin", builtin, "generate N procedural patterns instead");
  synth->add_option("--size", size, "builtin pattern side length");
  synth->add_option("--count", count, "samples per defect type per pattern");
  synth->add_option("--out", out_dir, "output dataset root");
  synth->add_option("--seed", seed, "generation seed");

  ConfigArgs train_cfg, eval_cfg, infer_cfg;
  std::string data_root, train_out = "run", resume;
  bool quiet = false;
  auto* tr = app.add_subcommand("train", "optimize a model on a dataset");
  add_config_flags(tr, train_cfg);
  tr->add_option("--data", data_root, "dataset root (expects train/ underneath)")->required();
  tr->add_option("--out", train_out, "run directory for checkpoint and logs");
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_flag("--quiet", quiet, "suppress per-step progress");

  std::string eval_data, eval_ckpt, eval_out = "eval";
  auto* ev = app.add_subcommand("eval", "score a checkpoint on the test split");
  add_config_flags(ev, eval_cfg);
  ev->add_option("--data", eval_data, "dataset root (expects test/ underneath)")->required();
  ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  ev->add_option("--out", eval_out, "output directory for report, curves, error maps");

  std::string ng_path, ok_path, infer_out = "infer", infer_ckpt;
  auto* in = app.add_subcommand("infer", "predict masks for one ng/ok pair");
  add_config_flags(in, infer_cfg);
  in->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
  in->add_option("--ng", ng_path, "defective image")->required();
  in->add_option("--ok", ok_path, "reference image")->required();
  in->add_option("--out", infer_out, "output directory");

  std::vector<std::string> run_dirs;
  auto* rp = app.add_subcommand("report", "aggregate eval summaries into one table");
  rp->add_option("runs", run_dirs, "run directories containing summary.json")->required();

  try {
    app.parse(argc, argv);
    if (synth->parsed()) {
      if (patterns_dir.empty() && builtin <= 0)
        throw std::runtime_error("synth: provide --patterns or --builtin");
      return run_synth(patterns_dir, builtin, size, count, out_dir, seed);
    }
    if (tr->parsed()) return run_train(resolve_config(train_cfg), data_root, train_out, resume,
                                       quiet);
    if (ev->parsed()) return run_eval(resolve_config(eval_cfg), eval_data, eval_ckpt, eval_out);
    if (in->parsed())
      return run_infer(resolve_config(infer_cfg), infer_ckpt, ng_path, ok_path, infer_out);
    if (rp->parsed()) return run_report(run_dirs);
    throw std::runtime_error("no subcommand given");
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace changeseg
