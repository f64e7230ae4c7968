#include "changeseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include "changeseg/checkpoint.hpp"
#include "changeseg/losses.hpp"
#include "changeseg/ops.hpp"
#include "changeseg/synlcd.hpp"

namespace changeseg {

std::set<int> protocol_train_classes(Protocol p) {
  switch (p) {
    case Protocol::LL:
    case Protocol::LA: return {kClassLine};
    case Protocol::AA:
    case Protocol::AL: return {kClassAbpt};
    default: return {kClassLine, kClassAbpt};
  }
}

std::set<int> protocol_test_classes(Protocol p) {
  switch (p) {
    case Protocol::LL:
    case Protocol::AL: return {kClassLine};
    case Protocol::AA:
    case Protocol::LA: return {kClassAbpt};
    default: return {kClassLine, kClassAbpt};
  }
}

std::vector<ImagePair> filter_by_classes(const std::vector<ImagePair>& pairs,
                                         const std::set<int>& allowed) {
  std::vector<ImagePair> out;
  for (const ImagePair& p : pairs) {
    bool ok = true;
    for (std::uint8_t v : p.mask.v)
      if (v != 0 && allowed.count(v) == 0) {
        ok = false;
        break;
      }
    if (ok) out.push_back(p);
  }
  return out;
}

ImagePair fit_to_stride(const ImagePair& p, int stride) {
  const int h = (p.ng.h + stride - 1) / stride * stride;
  const int w = (p.ng.w + stride - 1) / stride * stride;
  if (h == p.ng.h && w == p.ng.w) return p;
  ImagePair out;
  out.pattern_id = p.pattern_id;
  out.stem = p.stem;
  out.ng = resize_image(p.ng, h, w);
  out.ok = resize_image(p.ok, h, w);
  out.mask = resize_mask_nn(p.mask, h, w);
  return out;
}

namespace {

ImagePair prepare_train_sample(const ImagePair& p, const TrainConfig& t, Rng& rng) {
  if (t.augment) return augment(p, t.input_size[0], t.input_size[1], rng);
  if (p.ng.h == t.input_size[0] && p.ng.w == t.input_size[1]) return p;
  ImagePair out;
  out.pattern_id = p.pattern_id;
  out.stem = p.stem;
  out.ng = resize_image(p.ng, t.input_size[0], t.input_size[1]);
  out.ok = resize_image(p.ok, t.input_size[0], t.input_size[1]);
  out.mask = resize_mask_nn(p.mask, t.input_size[0], t.input_size[1]);
  return out;
}

std::vector<int> draw_batch(int n, int batch, Rng& rng) {
  if (batch >= n) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < batch; ++i)
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(rng.uniform_int(i, n - 1))]);
  idx.resize(static_cast<std::size_t>(batch));
  return idx;
}

constexpr std::uint64_t kStepStreamTag = 0x57e9u;

}  // namespace

TrainResult train(SiameseChangeModel& model, AdamW& opt, const std::vector<ImagePair>& dataset,
                  const FullConfig& cfg, const TrainOptions& opts) {
  {
    const auto violations = validate(cfg);
    if (!violations.empty()) {
      std::string msg = "train: invalid config:";
      for (const auto& v : violations) msg += "\n  " + v;
      throw std::invalid_argument(msg);
    }
  }

  std::vector<ImagePair> pool =
      filter_by_classes(dataset, protocol_train_classes(cfg.train.protocol));
  if (cfg.train.protocol == Protocol::label_fraction) {
    std::vector<std::string> stems;
    stems.reserve(pool.size());
    for (const auto& p : pool) stems.push_back(p.stem);
    const SplitPlan plan = make_split(stems, cfg.train.label_fraction, cfg.train.seed);
    std::unordered_set<std::string> keep(plan.labeled_ids.begin(), plan.labeled_ids.end());
    std::vector<ImagePair> labeled;
    for (auto& p : pool)
      if (keep.count(p.stem)) labeled.push_back(std::move(p));
    pool = std::move(labeled);
  }
  if (pool.empty())
    throw std::runtime_error("train: no usable samples after protocol filtering");

  NamedParams params = model.named_parameters();
  if (opt.m.size() != params.size()) opt.init(params);
  opt.weight_decay = cfg.train.weight_decay;

  std::ofstream log;
  if (!opts.loss_log_path.empty()) {
    const bool fresh = opts.start_iteration == 0;
    log.open(opts.loss_log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("train: cannot open loss log " + opts.loss_log_path);
    if (fresh) log << "step,cel,bcl,total\n";
  }

  TrainResult result;
  result.final_iteration = opts.start_iteration;
  const std::int64_t stop = opts.stop_iteration > 0
                                ? std::min(opts.stop_iteration, cfg.train.iterations)
                                : cfg.train.iterations;
  const int n = static_cast<int>(pool.size());
  char line[160];
  for (std::int64_t step = opts.start_iteration; step < stop; ++step) {
    Rng rng(derive_seed(cfg.train.seed, kStepStreamTag, static_cast<std::uint64_t>(step)));
    const std::vector<int> batch = draw_batch(n, cfg.train.batch_size, rng);

    Tensor total_acc;
    double cel_sum = 0, bcl_sum = 0;
    for (int bi : batch) {
      const ImagePair s = prepare_train_sample(pool[static_cast<std::size_t>(bi)], cfg.train, rng);
      const Tensor ng = normalize_image(s.ng, cfg.train.norm_mean, cfg.train.norm_std);
      const Tensor ok = normalize_image(s.ok, cfg.train.norm_mean, cfg.train.norm_std);
      const ModelOutput out = model.forward(ng, ok);
      const LossBreakdown lb = total_loss(out.logits_full, out.dist, s.mask,
                                          cfg.model.mode, cfg.loss);
      cel_sum += lb.cel.values()[0];
      bcl_sum += lb.bcl.values()[0];
      total_acc = total_acc.defined() ? add(total_acc, lb.total) : lb.total;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Tensor loss = mul_scalar(total_acc, inv_b);

    StepLoss sl{step, cel_sum * inv_b, bcl_sum * inv_b, loss.values()[0]};
    if (!std::isfinite(sl.total)) {
      std::snprintf(line, sizeof(line),
                    "train: non-finite loss at step %lld (cel=%g bcl=%g total=%g)",
                    static_cast<long long>(step), sl.cel, sl.bcl, sl.total);
      throw std::runtime_error(line);
    }

    backward(loss);
    const double lr = poly_warmup_lr(cfg.train.learning_rate, step, cfg.train.warmup_steps,
                                     cfg.train.iterations, cfg.train.poly_power);
    opt.step(params, lr);
    zero_grads(params);

    result.history.push_back(sl);
    result.final_iteration = step + 1;
    if (log.is_open()) {
      std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(step), sl.cel, sl.bcl, sl.total);
      log << line;
    }
    if (opts.verbose && (step % 25 == 0 || step + 1 == stop))
      std::fprintf(stderr, "step %lld  cel %.5f  bcl %.5f  total %.5f  lr %.3g\n",
                   static_cast<long long>(step), sl.cel, sl.bcl, sl.total, lr);
    if (!opts.checkpoint_path.empty() && opts.checkpoint_every > 0 &&
        (step + 1) % opts.checkpoint_every == 0)
      save_checkpoint(opts.checkpoint_path, params, &opt, step + 1, cfg);
  }

  if (!opts.checkpoint_path.empty())
    save_checkpoint(opts.checkpoint_path, params, &opt, result.final_iteration, cfg);
  return result;
}

std::vector<double> distmap_probability(const SiameseChangeModel& model, const ImagePair& pair,
                                        const FullConfig& cfg, int* out_h, int* out_w) {
  NoGradGuard guard;
  const ImagePair p = fit_to_stride(pair, 32);
  const Tensor ng = normalize_image(p.ng, cfg.train.norm_mean, cfg.train.norm_std);
  const Tensor ok = normalize_image(p.ok, cfg.train.norm_mean, cfg.train.norm_std);
  const ModelOutput out = model.forward(ng, ok);
  // dist is a plain (H/4, W/4) map; the resampler wants a channel axis
  const Tensor norm = reshape(minmax_normalize(out.dist, kDistNormEps),
                              {1, out.dist.dim(0), out.dist.dim(1)});
  const Tensor prob = bilinear_resize(norm, p.ng.h, p.ng.w);
  if (out_h) *out_h = p.ng.h;
  if (out_w) *out_w = p.ng.w;
  return prob.values();
}

EvalResult evaluate(const SiameseChangeModel& model, const std::vector<ImagePair>& dataset,
                    const FullConfig& cfg) {
  const std::set<int> test_classes = protocol_test_classes(cfg.train.protocol);
  for (const ImagePair& p : dataset)
    for (std::uint8_t v : p.mask.v)
      if (v != 0 && test_classes.count(v) == 0)
        throw std::runtime_error("evaluate: sample " + p.stem + " carries class " +
                                 std::to_string(v) + " outside the protocol's test set");

  EvalResult res;
  res.out_of_class = cfg.model.mode == DecoderMode::out_of_class;
  NoGradGuard guard;

  if (!res.out_of_class) {
    res.matrix = ConfusionMatrix(cfg.model.num_classes);
    for (const ImagePair& pair : dataset) {
      const ImagePair p = fit_to_stride(pair, 32);
      const Tensor ng = normalize_image(p.ng, cfg.train.norm_mean, cfg.train.norm_std);
      const Tensor ok = normalize_image(p.ok, cfg.train.norm_mean, cfg.train.norm_std);
      const ModelOutput out = model.forward(ng, ok);
      const auto& z = out.logits_full.values();
      const int C = out.logits_full.dim(0), H = out.logits_full.dim(1),
                W = out.logits_full.dim(2);
      LabelMask pred = LabelMask::zeros(H, W);
      const std::size_t plane = static_cast<std::size_t>(H) * W;
      for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int c = 1; c < C; ++c)
          if (z[c * plane + i] > z[static_cast<std::size_t>(best) * plane + i]) best = c;
        pred.v[i] = static_cast<std::uint8_t>(best);
      }
      res.matrix.merge(confusion(pred, p.mask, cfg.model.num_classes));
    }
    res.report = scores(res.matrix);
    return res;
  }

  // Out-of-class: per-threshold tallies of the DistMap probability map.
  const std::vector<double> thresholds = uniform_thresholds(256);
  std::vector<std::int64_t> tp(thresholds.size(), 0), fp(thresholds.size(), 0),
      fn(thresholds.size(), 0);
  std::int64_t tp_half = 0, fp_half = 0, fn_half = 0, total_px = 0;
  for (const ImagePair& pair : dataset) {
    int h = 0, w = 0;
    const std::vector<double> prob = distmap_probability(model, pair, cfg, &h, &w);
    const LabelMask gt = (h == pair.mask.h && w == pair.mask.w)
                             ? pair.mask
                             : resize_mask_nn(pair.mask, h, w);
    total_px += static_cast<std::int64_t>(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) {
      const bool g = gt.v[i] > 0;
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        const bool p = prob[i] >= thresholds[t];
        tp[t] += p && g;
        fp[t] += p && !g;
        fn[t] += !p && g;
      }
      const bool ph = prob[i] >= 0.5;
      tp_half += ph && g;
      fp_half += ph && !g;
      fn_half += !ph && g;
    }
  }
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    const std::int64_t uni = tp[t] + fp[t] + fn[t];
    const double iou = uni > 0 ? static_cast<double>(tp[t]) / static_cast<double>(uni) : 0.0;
    const double prec = tp[t] + fp[t] > 0
                            ? static_cast<double>(tp[t]) / static_cast<double>(tp[t] + fp[t])
                            : 0.0;
    const double rec = tp[t] + fn[t] > 0
                           ? static_cast<double>(tp[t]) / static_cast<double>(tp[t] + fn[t])
                           : 0.0;
    const double f = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    if (iou > res.best_iou) {
      res.best_iou = iou;
      res.best_iou_threshold = thresholds[t];
    }
    if (f > res.best_fscore) {
      res.best_fscore = f;
      res.best_fscore_threshold = thresholds[t];
    }
  }
  const std::int64_t uni_half = tp_half + fp_half + fn_half;
  res.iou_at_half =
      uni_half > 0 ? static_cast<double>(tp_half) / static_cast<double>(uni_half) : 0.0;

  // Binary confusion at the best-F threshold doubles as the OOC report.
  std::size_t bt = 0;
  for (std::size_t t = 0; t < thresholds.size(); ++t)
    if (thresholds[t] == res.best_fscore_threshold) bt = t;
  res.matrix = ConfusionMatrix(2);
  res.matrix.at(1, 1) = tp[bt];
  res.matrix.at(0, 1) = fp[bt];
  res.matrix.at(1, 0) = fn[bt];
  res.matrix.at(0, 0) = total_px - tp[bt] - fp[bt] - fn[bt];
  res.report = scores(res.matrix);
  return res;
}

}  // namespace changeseg
