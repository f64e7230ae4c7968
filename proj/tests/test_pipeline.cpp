#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "changeseg/checkpoint.hpp"
#include "changeseg/cli.hpp"
#include "changeseg/config.hpp"
#include "changeseg/data.hpp"
#include "changeseg/imageio.hpp"
#include "changeseg/losses.hpp"
#include "changeseg/synlcd.hpp"
#include "changeseg/trainer.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace changeseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.stage_channels = {4, 8, 12, 16};
  mc.stage_depths = {1, 1, 1, 1};
  mc.stage_heads = {1, 2, 4, 8};
  mc.reduction_ratios = {8, 4, 2, 1};
  mc.decoder_channels = 8;
  mc.num_classes = 3;
  return mc;
}

// small synthetic pairs, ready for training
std::vector<ImagePair> tiny_dataset(int n, int size, std::uint64_t seed,
                                    DefectType type = DefectType::line) {
  std::vector<ImagePair> out;
  for (int i = 0; i < n; ++i) {
    Image pat = make_builtin_pattern(i, size, size);
    SynthesisSpec spec = sample_spec(derive_seed(seed, static_cast<std::uint64_t>(i)), type);
    SynthSample s = synthesize_sample(pat, spec);
    ImagePair p;
    p.ng = s.ng;
    p.ok = s.ok;
    p.mask = s.mask;
    p.pattern_id = i;
    p.stem = std::to_string(i) + "_" + to_string(type) + "_0";
    out.push_back(std::move(p));
  }
  return out;
}

FullConfig tiny_train_cfg(int size, std::int64_t iters, std::uint64_t seed) {
  FullConfig cfg;
  cfg.model = tiny_model();
  cfg.train.input_size = {size, size};
  cfg.train.iterations = iters;
  cfg.train.batch_size = 2;
  cfg.train.seed = seed;
  cfg.train.learning_rate = 1e-3;
  cfg.train.warmup_steps = 2;
  cfg.train.augment = false;
  return cfg;
}

}  // namespace

TEST_CASE("image files round trip through the codec") {
  const fs::path dir = scratch_dir("changeseg_io_test");
  Image im = make_builtin_pattern(0, 24, 32);
  // quantize first so the round trip is exact
  for (double& v : im.data) v = std::floor(v);
  const std::string path = (dir / "img.png").string();
  write_image(path, im);
  Image back = read_image(path);
  REQUIRE(back.channels == 3);
  REQUIRE(back.h == 24);
  REQUIRE(back.w == 32);
  CHECK(back.data == im.data);

  LabelMask m = LabelMask::zeros(9, 7);
  m.at(0, 0) = 1;
  m.at(4, 3) = 2;
  m.at(8, 6) = 7;
  const std::string mpath = (dir / "mask.png").string();
  write_mask(mpath, m);
  LabelMask mb = read_mask(mpath);
  CHECK(mb.v == m.v);

  CHECK_THROWS_WITH_AS(read_image((dir / "no_such.png").string()),
                       doctest::Contains("no_such.png"), std::runtime_error);
  CHECK_THROWS(read_mask((dir / "no_such_mask.png").string()));
  fs::remove_all(dir);
}

TEST_CASE("load_pairs reads a generated dataset and validates it") {
  const fs::path dir = scratch_dir("changeseg_load_test");
  std::vector<Image> pats = {make_builtin_pattern(0, 48, 48), make_builtin_pattern(1, 48, 48)};
  build_dataset(pats, 1, dir.string(), 31);

  auto train = load_pairs(dir.string(), "train", 3);
  auto test = load_pairs(dir.string(), "test", 3);
  CHECK(train.size() == 3);
  CHECK(test.size() == 3);
  CHECK(std::is_sorted(train.begin(), train.end(),
                       [](const ImagePair& a, const ImagePair& b) { return a.stem < b.stem; }));
  for (const auto& p : train) {
    CHECK(p.ng.h == 48);
    CHECK(p.ok.h == 48);
    CHECK(p.mask.h == 48);
    CHECK(p.pattern_id == 0);  // first pattern trains
    for (auto v : p.mask.v) CHECK(v < 3);
  }
  for (const auto& p : test) CHECK(p.pattern_id == 1);

  // a missing mask is an error that names the file
  const fs::path victim = dir / "train" / "mask" / (train[0].stem + ".png");
  fs::remove(victim);
  CHECK_THROWS_WITH_AS(load_pairs(dir.string(), "train", 3),
                       doctest::Contains(train[0].stem.c_str()),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("load_pairs falls back to a pattern-wide OK reference") {
  const fs::path dir = scratch_dir("changeseg_okref_test");
  for (const char* kind : {"ng", "ok", "mask"}) fs::create_directories(dir / "train" / kind);
  Image pat = make_builtin_pattern(2, 32, 32);
  for (double& v : pat.data) v = std::floor(v);
  write_image((dir / "train" / "ng" / "4_line_0.png").string(), pat);
  write_mask((dir / "train" / "mask" / "4_line_0.png").string(), LabelMask::zeros(32, 32));
  // no ok/4_line_0.png; provide the shared reference instead
  write_image((dir / "train" / "ok" / "4.png").string(), pat);
  auto pairs = load_pairs(dir.string(), "train", 3);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].pattern_id == 4);
  CHECK(pairs[0].ok.data == pat.data);

  fs::remove((dir / "train" / "ok" / "4.png").string());
  CHECK_THROWS_WITH_AS(load_pairs(dir.string(), "train", 3), doctest::Contains("4.png"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("augment applies one joint transform to images and mask") {
  Rng marker_rng(82);
  for (int trial = 0; trial < 20; ++trial) {
    // bright 3x3 beacon on a dark field, mirrored into the mask
    ImagePair p;
    p.ng = Image::zeros(3, 64, 64);
    p.ok = Image::zeros(3, 64, 64);
    p.mask = LabelMask::zeros(64, 64);
    const int by = marker_rng.uniform_int(8, 52), bx = marker_rng.uniform_int(8, 52);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        for (int c = 0; c < 3; ++c) p.ng.at(c, by + dy, bx + dx) = 255.0;
        for (int c = 0; c < 3; ++c) p.ok.at(c, by + dy, bx + dx) = 255.0;
        p.mask.at(by + dy, bx + dx) = 1;
      }
    Rng rng(derive_seed(83, static_cast<std::uint64_t>(trial)));
    ImagePair out = augment(p, 48, 48, rng);
    REQUIRE(out.ng.h == 48);
    REQUIRE(out.ok.w == 48);
    REQUIRE(out.mask.h == 48);

    // mask pixels must sit on the warped beacon; the beacon is the only
    // bright content, so demand brightness at every masked pixel
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        if (out.mask.at(y, x)) {
          CHECK(out.ng.at(0, y, x) > 60.0);
          CHECK(out.ok.at(0, y, x) > 60.0);
        }
    // ng and ok got the same geometry
    for (std::size_t i = 0; i < out.ng.data.size(); ++i)
      CHECK(out.ng.data[i] == out.ok.data[i]);
  }
}

TEST_CASE("augmented masks never invent class ids") {
  Rng rng(84);
  ImagePair p;
  p.ng = make_builtin_pattern(0, 32, 32);
  p.ok = make_builtin_pattern(0, 32, 32);
  p.mask = LabelMask::zeros(32, 32);
  for (auto& v : p.mask.v) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  const std::set<std::uint8_t> allowed(p.mask.v.begin(), p.mask.v.end());
  for (int i = 0; i < 1000; ++i) {
    ImagePair out = augment(p, 24, 24, rng);
    for (auto v : out.mask.v) CHECK(allowed.count(v) == 1);
  }
}

TEST_CASE("normalize_image matches the channelwise formula") {
  Image im = Image::zeros(3, 2, 2);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i) im.data[static_cast<std::size_t>(c * 4 + i)] = 51.0 * (c + 1);
  const std::array<double, 3> mean{0.485, 0.456, 0.406}, sd{0.229, 0.224, 0.225};
  Tensor t = normalize_image(im, mean, sd);
  REQUIRE(t.shape() == std::vector<int>{3, 2, 2});
  for (int c = 0; c < 3; ++c)
    CHECK(t.values()[c * 4] ==
          doctest::Approx((51.0 * (c + 1) / 255.0 - mean[static_cast<std::size_t>(c)]) /
                          sd[static_cast<std::size_t>(c)])
              .epsilon(1e-12));
  CHECK_FALSE(t.requires_grad());
}

TEST_CASE("make_split draws a deterministic disjoint labeled subset") {
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) ids.push_back("s" + std::to_string(i));
  SplitPlan plan = make_split(ids, 0.1, 42);
  CHECK(plan.labeled_ids.size() == 10);
  CHECK(plan.unlabeled_ids.size() == 90);
  std::set<std::string> l(plan.labeled_ids.begin(), plan.labeled_ids.end());
  for (const auto& u : plan.unlabeled_ids) CHECK(l.count(u) == 0);
  CHECK(l.size() == plan.labeled_ids.size());

  SplitPlan again = make_split(ids, 0.1, 42);
  CHECK(again.labeled_ids == plan.labeled_ids);
  SplitPlan other = make_split(ids, 0.1, 43);
  CHECK(other.labeled_ids != plan.labeled_ids);

  CHECK(make_split(ids, 1.0, 7).unlabeled_ids.empty());
  SplitPlan half = make_split(ids, 0.5, 7);
  CHECK(half.labeled_ids.size() == 50);
}

TEST_CASE("checkpoints round trip parameters, optimizer state, and config") {
  const fs::path dir = scratch_dir("changeseg_ckpt_test");
  const std::string path = (dir / "model.ckpt").string();

  Rng rng(85);
  FullConfig cfg = tiny_train_cfg(32, 5, 9);
  SiameseChangeModel model(cfg.model, rng);
  NamedParams params = model.named_parameters();
  AdamW opt;
  opt.init(params);
  // give the optimizer nontrivial state
  for (auto& [name, t] : params) {
    t.zero_grad();
    auto& g = const_cast<std::vector<double>&>(t.grad());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.01 * static_cast<double>(i % 7) - 0.02;
  }
  opt.step(params, 1e-3);
  save_checkpoint(path, params, &opt, 17, cfg);

  Rng rng2(4242);
  SiameseChangeModel other(cfg.model, rng2);
  NamedParams oparams = other.named_parameters();
  AdamW oopt;
  oopt.init(oparams);
  CheckpointMeta meta = load_checkpoint(path, oparams, &oopt);
  CHECK(meta.iteration == 17);
  CHECK(meta.has_optimizer);
  CHECK(to_text(meta.config) == to_text(cfg));
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i].first == oparams[i].first);
    CHECK(params[i].second.values() == oparams[i].second.values());
  }
  REQUIRE(oopt.m.size() == opt.m.size());
  CHECK(oopt.step_count == opt.step_count);
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    CHECK(oopt.m[i] == opt.m[i]);
    CHECK(oopt.v[i] == opt.v[i]);
  }

  CheckpointMeta peek = peek_checkpoint(path);
  CHECK(peek.iteration == 17);
  CHECK(peek.has_optimizer);

  // loading without optimizer state requested still works
  CheckpointMeta m2 = load_checkpoint(path, oparams, nullptr);
  CHECK(m2.iteration == 17);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint rejects corruption, bad versions, and layout changes") {
  const fs::path dir = scratch_dir("changeseg_ckpt_bad");
  const std::string path = (dir / "model.ckpt").string();
  Rng rng(86);
  FullConfig cfg = tiny_train_cfg(32, 5, 9);
  SiameseChangeModel model(cfg.model, rng);
  NamedParams params = model.named_parameters();
  save_checkpoint(path, params, nullptr, 3, cfg);

  // truncation
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(path + ".trunc", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS(load_checkpoint(path + ".trunc", params, nullptr));

  // wrong magic
  {
    std::ofstream out(path + ".magic", std::ios::binary);
    out << "NOTACKPT garbage";
  }
  CHECK_THROWS(load_checkpoint(path + ".magic", params, nullptr));

  // version bump
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    bytes[8] = 99;  // version field follows the 8-byte magic
    std::ofstream out(path + ".ver", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path + ".ver", params, nullptr),
                       doctest::Contains("version"), std::runtime_error);

  // parameter layout mismatch
  ModelConfig bigger = tiny_model();
  bigger.decoder_channels = 12;
  Rng rng2(87);
  SiameseChangeModel other(bigger, rng2);
  NamedParams oparams = other.named_parameters();
  CHECK_THROWS(load_checkpoint(path, oparams, nullptr));

  CHECK_THROWS(load_checkpoint((dir / "absent.ckpt").string(), params, nullptr));
  fs::remove_all(dir);
}

TEST_CASE("protocol class sets and sample filtering") {
  CHECK(protocol_train_classes(Protocol::full) == std::set<int>{1, 2});
  CHECK(protocol_test_classes(Protocol::full) == std::set<int>{1, 2});
  CHECK(protocol_train_classes(Protocol::LL) == std::set<int>{1});
  CHECK(protocol_test_classes(Protocol::LL) == std::set<int>{1});
  CHECK(protocol_train_classes(Protocol::AA) == std::set<int>{2});
  CHECK(protocol_test_classes(Protocol::AA) == std::set<int>{2});
  CHECK(protocol_train_classes(Protocol::LA) == std::set<int>{1});
  CHECK(protocol_test_classes(Protocol::LA) == std::set<int>{2});
  CHECK(protocol_train_classes(Protocol::AL) == std::set<int>{2});
  CHECK(protocol_test_classes(Protocol::AL) == std::set<int>{1});
  CHECK(protocol_train_classes(Protocol::label_fraction) == std::set<int>{1, 2});

  std::vector<ImagePair> pairs(4);
  for (auto& p : pairs) {
    p.mask = LabelMask::zeros(4, 4);
  }
  pairs[0].stem = "line";
  pairs[0].mask.at(0, 0) = 1;
  pairs[1].stem = "abpt";
  pairs[1].mask.at(0, 0) = 2;
  pairs[2].stem = "mixed";
  pairs[2].mask.at(0, 0) = 1;
  pairs[2].mask.at(1, 1) = 2;
  pairs[3].stem = "clean";

  auto lines = filter_by_classes(pairs, {1});
  REQUIRE(lines.size() == 2);  // the line sample and the clean sample
  CHECK(lines[0].stem == "line");
  CHECK(lines[1].stem == "clean");
  auto abpts = filter_by_classes(pairs, {2});
  REQUIRE(abpts.size() == 2);
  CHECK(abpts[0].stem == "abpt");
  auto all = filter_by_classes(pairs, {1, 2});
  CHECK(all.size() == 4);
}

TEST_CASE("training runs deterministically and logs losses") {
  const fs::path dir = scratch_dir("changeseg_train_det");
  auto data = tiny_dataset(3, 32, 88);
  FullConfig cfg = tiny_train_cfg(32, 6, 123);

  auto run = [&](const std::string& log) {
    Rng rng(cfg.train.seed);
    SiameseChangeModel model(cfg.model, rng);
    AdamW opt;
    opt.weight_decay = cfg.train.weight_decay;
    NamedParams params = model.named_parameters();
    opt.init(params);
    TrainOptions topts;
    topts.loss_log_path = (dir / log).string();
    TrainResult res = train(model, opt, data, cfg, topts);
    std::vector<double> flat;
    for (auto& [name, t] : params)
      flat.insert(flat.end(), t.values().begin(), t.values().end());
    return std::make_pair(res, flat);
  };
  auto [r1, p1] = run("a.log");
  auto [r2, p2] = run("b.log");
  REQUIRE(r1.history.size() == 6);
  CHECK(r1.final_iteration == 6);
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].total == r2.history[i].total);
    CHECK(r1.history[i].cel == r2.history[i].cel);
    CHECK(r1.history[i].bcl == r2.history[i].bcl);
    CHECK(std::isfinite(r1.history[i].total));
  }
  CHECK(p1 == p2);

  // identical loss logs, header + one line per step
  std::ifstream fa(dir / "a.log"), fb(dir / "b.log");
  std::string sa((std::istreambuf_iterator<char>(fa)), {});
  std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(sa.rfind("step,cel,bcl,total\n", 0) == 0);
  CHECK(std::count(sa.begin(), sa.end(), '\n') == 7);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint resume is bitwise-equivalent to an unbroken run") {
  const fs::path dir = scratch_dir("changeseg_train_resume");
  auto data = tiny_dataset(3, 32, 89);
  FullConfig cfg = tiny_train_cfg(32, 8, 321);

  // unbroken 8 steps
  Rng rng_a(cfg.train.seed);
  SiameseChangeModel full_model(cfg.model, rng_a);
  AdamW full_opt;
  full_opt.weight_decay = cfg.train.weight_decay;
  NamedParams full_params = full_model.named_parameters();
  full_opt.init(full_params);
  train(full_model, full_opt, data, cfg, {});

  // 4 steps under the same 8-step schedule, checkpoint, fresh process, 4 more
  Rng rng_b(cfg.train.seed);
  SiameseChangeModel part_model(cfg.model, rng_b);
  AdamW part_opt;
  part_opt.weight_decay = cfg.train.weight_decay;
  NamedParams part_params = part_model.named_parameters();
  part_opt.init(part_params);
  TrainOptions save_opts;
  save_opts.stop_iteration = 4;
  save_opts.checkpoint_path = (dir / "mid.ckpt").string();
  train(part_model, part_opt, data, cfg, save_opts);

  Rng rng_c(777);  // deliberately different init; the checkpoint overwrites it
  SiameseChangeModel res_model(cfg.model, rng_c);
  AdamW res_opt;
  res_opt.weight_decay = cfg.train.weight_decay;
  NamedParams res_params = res_model.named_parameters();
  res_opt.init(res_params);
  CheckpointMeta meta = load_checkpoint((dir / "mid.ckpt").string(), res_params, &res_opt);
  CHECK(meta.iteration == 4);
  TrainOptions resume_opts;
  resume_opts.start_iteration = meta.iteration;
  train(res_model, res_opt, data, cfg, resume_opts);

  for (std::size_t i = 0; i < full_params.size(); ++i)
    CHECK(full_params[i].second.values() == res_params[i].second.values());
  fs::remove_all(dir);
}

TEST_CASE("zero remaining iterations returns without touching parameters") {
  auto data = tiny_dataset(2, 32, 90);
  FullConfig cfg = tiny_train_cfg(32, 3, 5);
  Rng rng(cfg.train.seed);
  SiameseChangeModel model(cfg.model, rng);
  AdamW opt;
  NamedParams params = model.named_parameters();
  opt.init(params);
  std::vector<double> before;
  for (auto& [n, t] : params) before.insert(before.end(), t.values().begin(), t.values().end());
  TrainOptions topts;
  topts.start_iteration = 3;  // already at the target
  TrainResult res = train(model, opt, data, cfg, topts);
  CHECK(res.history.empty());
  CHECK(res.final_iteration == 3);
  std::vector<double> after;
  for (auto& [n, t] : params) after.insert(after.end(), t.values().begin(), t.values().end());
  CHECK(before == after);
}

TEST_CASE("non-finite losses abort with a diagnostic naming the step") {
  auto data = tiny_dataset(2, 32, 91);
  data[0].ng.data[0] = std::numeric_limits<double>::quiet_NaN();
  FullConfig cfg = tiny_train_cfg(32, 4, 6);
  Rng rng(cfg.train.seed);
  SiameseChangeModel model(cfg.model, rng);
  AdamW opt;
  NamedParams params = model.named_parameters();
  opt.init(params);
  CHECK_THROWS_WITH_AS(train(model, opt, data, cfg, {}), doctest::Contains("step"),
                       std::runtime_error);
}

TEST_CASE("out-of-class training leaves the classifier head untouched") {
  auto data = tiny_dataset(2, 32, 92);
  FullConfig cfg = tiny_train_cfg(32, 2, 7);
  cfg.model.mode = DecoderMode::out_of_class;
  Rng rng(cfg.train.seed);
  SiameseChangeModel model(cfg.model, rng);

  // single manual step: forward, loss, backward; head gradients must be absent
  Tensor ng = normalize_image(resize_image(data[0].ng, 32, 32), cfg.train.norm_mean,
                              cfg.train.norm_std);
  Tensor ok = normalize_image(resize_image(data[0].ok, 32, 32), cfg.train.norm_mean,
                              cfg.train.norm_std);
  ModelOutput out = model.forward(ng, ok);
  LossBreakdown lb =
      total_loss(out.logits_full, out.dist, data[0].mask, DecoderMode::out_of_class, cfg.loss);
  backward(lb.total);
  CHECK_FALSE(model.decoder.head.w.has_grad());
  CHECK_FALSE(model.decoder.head.b.has_grad());
  // while the encoder, which feeds the distance map, does learn
  bool encoder_has_grad = false;
  NamedParams all = model.named_parameters();
  for (auto& [name, t] : all)
    if (name.rfind("encoder", 0) == 0 && t.has_grad()) {
      for (double g : t.grad())
        if (g != 0.0) encoder_has_grad = true;
    }
  CHECK(encoder_has_grad);
}

TEST_CASE("training loss trends down on an easy all-background objective") {
  // lambda2 = 0 reduces the loss to cross-entropy on background-only masks,
  // which a few steps should drive down monotonically in trend
  auto data = tiny_dataset(2, 32, 93);
  for (auto& p : data) p.mask = LabelMask::zeros(p.mask.h, p.mask.w);
  FullConfig cfg = tiny_train_cfg(32, 50, 8);
  cfg.loss.lambda2 = 0.0;
  cfg.loss.contrastive = ContrastiveKind::none;
  cfg.train.learning_rate = 3e-3;
  Rng rng(cfg.train.seed);
  SiameseChangeModel model(cfg.model, rng);
  AdamW opt;
  opt.weight_decay = cfg.train.weight_decay;
  NamedParams params = model.named_parameters();
  opt.init(params);
  TrainResult res = train(model, opt, data, cfg, {});
  REQUIRE(res.history.size() == 50);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += res.history[static_cast<std::size_t>(i)].total;
    last += res.history[res.history.size() - 10 + static_cast<std::size_t>(i)].total;
  }
  CHECK(last < first);
}

TEST_CASE("evaluate aggregates confusion across pairs and matches scores()") {
  auto data = tiny_dataset(3, 32, 94);
  FullConfig cfg = tiny_train_cfg(32, 1, 9);
  Rng rng(cfg.train.seed);
  SiameseChangeModel model(cfg.model, rng);
  EvalResult res = evaluate(model, data, cfg);
  CHECK_FALSE(res.out_of_class);
  CHECK(res.matrix.total() == 3 * 32 * 32);
  ScoreReport ref = scores(res.matrix);
  CHECK(res.report.miou == ref.miou);
  CHECK(res.report.mfscore == ref.mfscore);
  CHECK(res.report.overall_accuracy == ref.overall_accuracy);

  // out-of-class evaluation sweeps thresholds over the distance probability
  FullConfig ooc = cfg;
  ooc.model.mode = DecoderMode::out_of_class;
  Rng rng2(cfg.train.seed);
  SiameseChangeModel omodel(ooc.model, rng2);
  EvalResult ores = evaluate(omodel, data, ooc);
  CHECK(ores.out_of_class);
  CHECK(ores.best_iou >= 0.0);
  CHECK(ores.best_iou <= 1.0);
  CHECK(ores.best_fscore >= ores.best_iou);  // F1 >= IoU always
  CHECK(ores.best_iou_threshold >= 0.0);
  CHECK(ores.best_iou_threshold <= 1.0);
  CHECK(ores.iou_at_half >= 0.0);

  int ph = 0, pw = 0;
  auto prob = distmap_probability(omodel, data[0], ooc, &ph, &pw);
  CHECK(ph == 32);
  CHECK(pw == 32);
  CHECK(prob.size() == 32 * 32);
  for (double v : prob) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("evaluate rejects samples whose classes violate the protocol") {
  auto data = tiny_dataset(2, 32, 95, DefectType::abpt);
  FullConfig cfg = tiny_train_cfg(32, 1, 10);
  cfg.train.protocol = Protocol::LL;  // line-only scoring, abpt ids present
  Rng rng(cfg.train.seed);
  SiameseChangeModel model(cfg.model, rng);
  CHECK_THROWS(evaluate(model, data, cfg));
}

namespace {

// Runs the CLI entry point in-process with stdout/stderr captured to a file.
int run_cli(std::vector<std::string> args, std::string& captured) {
  std::vector<std::string> storage;
  storage.emplace_back("changeseg");
  for (auto& a : args) storage.push_back(std::move(a));
  std::vector<char*> argv;
  argv.reserve(storage.size());
  for (auto& s : storage) argv.push_back(s.data());

  const fs::path cap = fs::temp_directory_path() / "changeseg_cli_capture.txt";
  std::fflush(stdout);
  std::fflush(stderr);
  const int old_out = dup(1);
  const int old_err = dup(2);
  REQUIRE(old_out >= 0);
  REQUIRE(old_err >= 0);
  FILE* sink = std::fopen(cap.string().c_str(), "w");
  REQUIRE(sink != nullptr);
  dup2(fileno(sink), 1);
  dup2(fileno(sink), 2);
  const int rc = cli_main(static_cast<int>(argv.size()), argv.data());
  std::fflush(stdout);
  std::fflush(stderr);
  dup2(old_out, 1);
  dup2(old_err, 2);
  close(old_out);
  close(old_err);
  std::fclose(sink);
  std::ifstream in(cap);
  captured.assign((std::istreambuf_iterator<char>(in)), {});
  return rc;
}

}  // namespace

TEST_CASE("cli synth honors the per-type counting contract") {
  const fs::path dir = scratch_dir("changeseg_cli_synth");
  std::string out;

  const fs::path pat_dir = dir / "patterns";
  fs::create_directories(pat_dir);
  Image pat = make_builtin_pattern(3, 48, 48);
  for (double& v : pat.data) v = std::floor(v);
  write_image((pat_dir / "panel.png").string(), pat);

  // one pattern, two samples per defect type: six samples, six manifest rows
  const fs::path ds = dir / "ds";
  REQUIRE(run_cli({"synth", "--patterns", pat_dir.string(), "--count", "2", "--seed", "7",
                   "--out", ds.string()},
                  out) == 0);
  CHECK(out.find("6 samples") != std::string::npos);
  std::ifstream mf(ds / "manifest.jsonl");
  REQUIRE(mf.good());
  std::size_t rows = 0;
  for (std::string line; std::getline(mf, line);) rows += !line.empty();
  CHECK(rows == 6);

  fs::remove_all(dir);
}

TEST_CASE("cli help and error contracts") {
  std::string out;

  // every config-accepting subcommand enumerates the keys it honors
  for (const char* sub : {"train", "eval", "infer"}) {
    REQUIRE(run_cli({sub, "--help"}, out) == 0);
    CHECK(out.find("model.stage_channels") != std::string::npos);
    CHECK(out.find("train.learning_rate") != std::string::npos);
    CHECK(out.find("loss.tau_ok") != std::string::npos);
  }
  REQUIRE(run_cli({"--help-config"}, out) == 0);
  CHECK(out.find("loss.contrastive") != std::string::npos);

  // unknown subcommand / flag / config key / device: nonzero with a diagnostic
  CHECK(run_cli({"frobnicate"}, out) != 0);
  CHECK(run_cli({"synth", "--wat"}, out) != 0);
  CHECK(out.find("--wat") != std::string::npos);
  CHECK(run_cli({"train", "--data", "nowhere", "--set", "train.nope=1"}, out) != 0);
  CHECK(out.find("train.nope") != std::string::npos);
  CHECK(run_cli({"train", "--data", "nowhere", "--device", "tpu"}, out) != 0);
  CHECK(out.find("cpu") != std::string::npos);
  const fs::path scratch = scratch_dir("changeseg_cli_evalfail");
  CHECK(run_cli({"eval", "--data", "nowhere", "--checkpoint", "missing.bin", "--out",
                 (scratch / "eval").string()},
                out) != 0);
  fs::remove_all(scratch);
}

TEST_CASE("cli train, eval, infer, and report round trip on a tiny run") {
  const fs::path dir = scratch_dir("changeseg_cli_run");
  std::string out;

  // two builtin patterns: one lands in train, one in test
  const fs::path ds = dir / "ds";
  REQUIRE(run_cli({"synth", "--builtin", "2", "--size", "48", "--count", "1", "--seed", "3",
                   "--out", ds.string()},
                  out) == 0);

  FullConfig tiny = tiny_train_cfg(32, 2, 5);
  save_config_file(tiny, (dir / "tiny.json").string());

  // train writes checkpoint, loss log, and the resolved config; --seed wins
  const fs::path run = dir / "run";
  REQUIRE(run_cli({"train", "--config", (dir / "tiny.json").string(), "--data", ds.string(),
                   "--out", run.string(), "--seed", "11", "--quiet"},
                  out) == 0);
  CHECK(fs::exists(run / "checkpoint.bin"));
  CHECK(fs::exists(run / "loss_log.csv"));
  const FullConfig used = load_config_file((run / "config.json").string());
  CHECK(used.train.seed == 11);

  // eval writes a summary with the three score columns plus curves and maps
  const fs::path ev = dir / "eval";
  REQUIRE(run_cli({"eval", "--config", (run / "config.json").string(), "--data", ds.string(),
                   "--checkpoint", (run / "checkpoint.bin").string(), "--out", ev.string()},
                  out) == 0);
  REQUIRE(fs::exists(ev / "summary.json"));
  nlohmann::json summary;
  std::ifstream(ev / "summary.json") >> summary;
  CHECK(summary.contains("miou"));
  CHECK(summary.contains("mfscore"));
  CHECK(summary.contains("macc_recall"));
  CHECK(summary.contains("err"));
  CHECK(fs::exists(ev / "curves.csv"));
  CHECK(fs::exists(ev / "errmaps"));

  // infer emits a predicted mask and a distance image for one ng/ok pair
  std::string stem;
  for (const auto& e : fs::directory_iterator(ds / "test" / "ng")) {
    stem = e.path().stem().string();
    break;
  }
  REQUIRE(!stem.empty());
  const fs::path inf = dir / "infer";
  REQUIRE(run_cli({"infer", "--config", (run / "config.json").string(), "--checkpoint",
                   (run / "checkpoint.bin").string(), "--ng",
                   (ds / "test" / "ng" / (stem + ".png")).string(), "--ok",
                   (ds / "test" / "ok" / (stem + ".png")).string(), "--out", inf.string()},
                  out) == 0);
  CHECK(fs::exists(inf / (stem + "_dist.png")));
  CHECK(fs::exists(inf / (stem + "_pred.png")));

  // report renders one row per run directory
  REQUIRE(run_cli({"report", ev.string()}, out) == 0);
  CHECK(out.find("mIoU") != std::string::npos);
  CHECK(out.find("eval") != std::string::npos);

  fs::remove_all(dir);
}
