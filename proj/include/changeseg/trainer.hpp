#pragma once

#include <set>
#include <string>
#include <vector>

#include "changeseg/config.hpp"
#include "changeseg/data.hpp"
#include "changeseg/metrics.hpp"
#include "changeseg/model.hpp"

namespace changeseg {

/// Defect classes a protocol trains on / is scored against.
std::set<int> protocol_train_classes(Protocol p);
std::set<int> protocol_test_classes(Protocol p);

/// Samples whose defect classes all lie in `allowed` (background always
/// allowed; defect-free samples pass any filter).
std::vector<ImagePair> filter_by_classes(const std::vector<ImagePair>& pairs,
                                         const std::set<int>& allowed);

struct StepLoss {
  std::int64_t step = 0;
  double cel = 0, bcl = 0, total = 0;
};

struct TrainResult {
  std::vector<StepLoss> history;
  std::int64_t final_iteration = 0;
};

struct TrainOptions {
  std::int64_t start_iteration = 0;          // resume point
  std::int64_t stop_iteration = 0;           // 0 = run to cfg.train.iterations;
                                             // a smaller value pauses early while
                                             // keeping the full-length lr schedule
  std::string loss_log_path;                 // append-only `step,cel,bcl,total`
  std::string checkpoint_path;               // written after the last step
  std::int64_t checkpoint_every = 0;         // 0 = only at the end
  bool verbose = false;
};

/// Runs cfg.train.iterations optimization steps (minus start_iteration).
/// Every step draws its RNG stream from (seed, step), so runs are
/// reproducible and checkpoint resume is bitwise-equivalent to an unbroken
/// run. Aborts with diagnostics when the loss stops being finite.
TrainResult train(SiameseChangeModel& model, AdamW& opt, const std::vector<ImagePair>& dataset,
                  const FullConfig& cfg, const TrainOptions& opts = {});

struct EvalResult {
  ConfusionMatrix matrix;     // intra-class protocols
  ScoreReport report;
  // out-of-class protocols: thresholded normalized DistMap
  double best_iou = 0, best_iou_threshold = 0;
  double best_fscore = 0, best_fscore_threshold = 0;
  double iou_at_half = 0;
  bool out_of_class = false;
};

/// Resizes a pair up to the next multiple of `stride` on each side (bilinear
/// for images, nearest for the mask); identity when already aligned.
ImagePair fit_to_stride(const ImagePair& p, int stride);

/// Forward-only scoring over the given pairs. Intra-class: per-pixel argmax
/// against the mask, aggregated confusion. Out-of-class: sweep 256 thresholds
/// over the upsampled normalized DistMap against the binary defect mask.
/// Inputs are stride-fitted first, so scores are at the fitted resolution.
EvalResult evaluate(const SiameseChangeModel& model, const std::vector<ImagePair>& dataset,
                    const FullConfig& cfg);

/// Per-pixel defect probability used by out-of-class evaluation: the
/// minmax-normalized DistMap bilinearly upsampled to (h, w).
std::vector<double> distmap_probability(const SiameseChangeModel& model, const ImagePair& pair,
                                        const FullConfig& cfg, int* out_h = nullptr,
                                        int* out_w = nullptr);

}  // namespace changeseg
