#pragma once

#include <map>

#include "changeseg/config.hpp"
#include "changeseg/image.hpp"
#include "changeseg/tensor.hpp"

namespace changeseg {

/// Per-defect-class weight B_p = (sum of defect-pixel counts) / n_p.
/// Background never appears as a key.
using BalanceFactors = std::map<int, double>;

/// Hinge losses on a pixel's feature distance. Unchanged pixels (y=0) pay for
/// distance above tau_ok (clamped at zero unless configured otherwise);
/// changed pixels (y=1) pay for distance below tau_ng.
double contrastive_pointwise(double d, int y, const LossConfig& cfg);

/// Empty map when the mask has no defect pixels (loss falls back to the
/// unchanged branch only).
BalanceFactors balance_factors(const LabelMask& label);

/// Nearest-neighbor downsample so class ids survive exactly.
LabelMask downsample_labels_nn(const LabelMask& label, int out_h, int out_w);

/// Mean over pixels of w(p) * contrastive_pointwise(d(p), y(p)>0).
/// Weights: background 1; defect pixels B_class for kind bcl, 1 for kind cl.
/// d: (H,W) tensor aligned with label.
Tensor contrastive_loss_map(const Tensor& d, const LabelMask& label, const LossConfig& cfg);

/// Mean over pixels of -log softmax(logits)(y). logits: (C,H,W).
Tensor cross_entropy_loss(const Tensor& logits, const LabelMask& label);

struct LossBreakdown {
  Tensor cel, bcl, total;  // scalars; total carries the training gradient
};

/// intra_class: total = lambda1*cel + lambda2*bcl (bcl = 0 when contrastive
/// is disabled). out_of_class: total = bcl; cel is reported but detached.
/// logits are full-resolution; labels are downsampled internally to match d.
LossBreakdown total_loss(const Tensor& logits, const Tensor& d, const LabelMask& label,
                         DecoderMode mode, const LossConfig& cfg);

}  // namespace changeseg
