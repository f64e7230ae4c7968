#include "changeseg/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace changeseg {

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes)
    throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion(const LabelMask& pred, const LabelMask& gt, int num_classes) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("confusion: mask shape mismatch");
  ConfusionMatrix m(num_classes);
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    int g = gt.v[i], p = pred.v[i];
    if (g >= num_classes || p >= num_classes)
      throw std::invalid_argument("confusion: label value out of range");
    ++m.at(g, p);
  }
  return m;
}

namespace {

double safe_div(double num, double den) { return den > 0 ? num / den : 0.0; }

double fscore_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

}  // namespace

ScoreReport scores(const ConfusionMatrix& m) {
  const int C = m.num_classes;
  ScoreReport rep;
  rep.per_class.resize(static_cast<std::size_t>(C));
  double sum_iou = 0, sum_f = 0, sum_r = 0;
  int present = 0;
  for (int c = 0; c < C; ++c) {
    std::int64_t tp = m.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < C; ++o) {
      if (o == c) continue;
      fp += m.at(o, c);
      fn += m.at(c, o);
    }
    ClassScores& s = rep.per_class[static_cast<std::size_t>(c)];
    if (tp + fp + fn == 0) {
      // class absent from both masks: perfect by vacuity, excluded from means
      s = {1.0, 1.0, 1.0, 1.0, false};
      continue;
    }
    s.present = true;
    s.precision = safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
    s.recall = safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
    s.fscore = fscore_of(s.precision, s.recall);
    s.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    sum_iou += s.iou;
    sum_f += s.fscore;
    sum_r += s.recall;
    ++present;
  }
  if (present > 0) {
    rep.miou = sum_iou / present;
    rep.mfscore = sum_f / present;
    rep.macc_recall = sum_r / present;
  }
  std::int64_t diag = 0;
  for (int c = 0; c < C; ++c) diag += m.at(c, c);
  rep.overall_accuracy = safe_div(static_cast<double>(diag), static_cast<double>(m.total()));
  return rep;
}

std::vector<double> uniform_thresholds(int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>(i) / (n - 1);
  return t;
}

std::vector<CurveRow> pr_ft_curves(const std::vector<double>& prob, const LabelMask& gt,
                                   const std::vector<double>& thresholds) {
  if (prob.size() != gt.v.size())
    throw std::invalid_argument("pr_ft_curves: probability map and gt misaligned");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i - 1] < thresholds[i]))
      throw std::invalid_argument("pr_ft_curves: thresholds must be strictly increasing");

  std::vector<CurveRow> rows;
  rows.reserve(thresholds.size());
  for (double th : thresholds) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
      bool p = prob[i] >= th, g = gt.v[i] > 0;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    double prec = safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
    double rec = safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
    rows.push_back({th, prec, rec, fscore_of(prec, rec)});
  }
  return rows;
}

std::string curves_to_csv(const std::vector<CurveRow>& rows) {
  std::string out = "threshold,precision,recall,fscore\n";
  char buf[128];
  for (const CurveRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g\n", r.threshold, r.precision, r.recall,
                  r.fscore);
    out += buf;
  }
  return out;
}

ErrorMap error_map(const LabelMask& pred, const LabelMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("error_map: mask shape mismatch");
  ErrorMap em;
  em.image = Image::zeros(3, gt.h, gt.w);
  for (int y = 0; y < gt.h; ++y)
    for (int x = 0; x < gt.w; ++x) {
      bool p = pred.at(y, x) > 0, g = gt.at(y, x) > 0;
      if (p && g) {
        em.image.at(0, y, x) = em.image.at(1, y, x) = em.image.at(2, y, x) = 255;
      } else if (!p && g) {
        em.image.at(1, y, x) = 255;
        ++em.fn;
      } else if (p && !g) {
        em.image.at(0, y, x) = 255;
        ++em.fp;
      }
    }
  return em;
}

std::string report_to_text(const ScoreReport& r) {
  std::ostringstream os;
  char buf[160];
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const ClassScores& s = r.per_class[c];
    std::snprintf(buf, sizeof(buf),
                  "class %zu: precision %.4f recall %.4f fscore %.4f iou %.4f%s\n", c, s.precision,
                  s.recall, s.fscore, s.iou, s.present ? "" : " (absent)");
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "mIoU %.4f  mFscore %.4f  mAcc(recall) %.4f  overall_accuracy %.4f\n", r.miou,
                r.mfscore, r.macc_recall, r.overall_accuracy);
  os << buf;
  return os.str();
}

}  // namespace changeseg
