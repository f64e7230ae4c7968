#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "changeseg/image.hpp"

namespace changeseg {

/// Rows index ground truth, columns prediction.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int c = 0)
      : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}
  std::int64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  std::int64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  std::int64_t total() const;
  void merge(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const LabelMask& pred, const LabelMask& gt, int num_classes);

struct ClassScores {
  double precision = 0, recall = 0, fscore = 0, iou = 0;
  bool present = false;  // union > 0; absent classes score 1 but are excluded from means
};

struct ScoreReport {
  std::vector<ClassScores> per_class;
  double miou = 0, mfscore = 0;
  double macc_recall = 0;       // mean per-class recall
  double overall_accuracy = 0;  // trace / total, the other common "accuracy"
};

ScoreReport scores(const ConfusionMatrix& m);

struct CurveRow {
  double threshold, precision, recall, fscore;
};

/// `n` uniform levels spanning [0,1] inclusive.
std::vector<double> uniform_thresholds(int n = 256);

/// Binarize prob >= threshold against gt>0 for each threshold.
/// prob is row-major h*w, values in [0,1]; thresholds strictly increasing.
std::vector<CurveRow> pr_ft_curves(const std::vector<double>& prob, const LabelMask& gt,
                                   const std::vector<double>& thresholds);

/// Header `threshold,precision,recall,fscore`, one row per threshold.
std::string curves_to_csv(const std::vector<CurveRow>& rows);

struct ErrorMap {
  Image image;  // white = detected defect, green = missed, red = spurious
  std::int64_t fp = 0, fn = 0;
  std::int64_t err() const { return fp + fn; }
};

/// Defect-vs-background reduction of both masks (any nonzero id is defect).
ErrorMap error_map(const LabelMask& pred, const LabelMask& gt);

std::string report_to_text(const ScoreReport& r);

}  // namespace changeseg
