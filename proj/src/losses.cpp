#include "changeseg/losses.hpp"

#include <algorithm>
#include <stdexcept>

#include "changeseg/ops.hpp"

namespace changeseg {

double contrastive_pointwise(double d, int y, const LossConfig& cfg) {
  if (y == 0) {
    double v = d - cfg.tau_ok;
    return cfg.clamp_unchanged_at_zero ? std::max(0.0, v) : v;
  }
  return std::max(0.0, cfg.tau_ng - d);
}

BalanceFactors balance_factors(const LabelMask& label) {
  std::map<int, std::int64_t> counts;
  for (std::uint8_t c : label.v)
    if (c > 0) ++counts[c];
  std::int64_t total = 0;
  for (const auto& [c, n] : counts) total += n;
  BalanceFactors out;
  for (const auto& [c, n] : counts)
    out[c] = static_cast<double>(total) / static_cast<double>(n);
  return out;
}

LabelMask downsample_labels_nn(const LabelMask& label, int out_h, int out_w) {
  return resize_mask_nn(label, out_h, out_w);
}

Tensor contrastive_loss_map(const Tensor& d, const LabelMask& label, const LossConfig& cfg) {
  if (cfg.contrastive == ContrastiveKind::none)
    throw std::invalid_argument("contrastive_loss_map: contrastive kind is none");
  if (d.ndim() != 2 || d.dim(0) != label.h || d.dim(1) != label.w)
    throw std::invalid_argument("contrastive_loss_map: distance map and labels misaligned");

  BalanceFactors bal;
  if (cfg.contrastive == ContrastiveKind::bcl) bal = balance_factors(label);

  const std::size_t n = label.v.size();
  std::vector<double> w_unchanged(n, 0.0), w_changed(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    int c = label.v[i];
    if (c == 0)
      w_unchanged[i] = 1.0;
    else
      w_changed[i] = cfg.contrastive == ContrastiveKind::bcl ? bal.at(c) : 1.0;
  }
  Tensor w0 = Tensor::from_values({label.h, label.w}, std::move(w_unchanged));
  Tensor w1 = Tensor::from_values({label.h, label.w}, std::move(w_changed));

  Tensor slack_unchanged = add_scalar(d, -cfg.tau_ok);
  if (cfg.clamp_unchanged_at_zero) slack_unchanged = relu(slack_unchanged);
  Tensor slack_changed = relu(add_scalar(mul_scalar(d, -1.0), cfg.tau_ng));
  return mean_all(add(mul(w0, slack_unchanged), mul(w1, slack_changed)));
}

Tensor cross_entropy_loss(const Tensor& logits, const LabelMask& label) {
  if (logits.ndim() != 3 || logits.dim(1) != label.h || logits.dim(2) != label.w)
    throw std::invalid_argument("cross_entropy_loss: logits and labels misaligned");
  std::vector<int> flat(label.v.begin(), label.v.end());
  return cross_entropy_mean(logits, flat);
}

LossBreakdown total_loss(const Tensor& logits, const Tensor& d, const LabelMask& label,
                         DecoderMode mode, const LossConfig& cfg) {
  LossBreakdown out;
  const bool want_contrastive = cfg.contrastive != ContrastiveKind::none;

  auto bcl_term = [&]() -> Tensor {
    LabelMask ds = downsample_labels_nn(label, d.dim(0), d.dim(1));
    return contrastive_loss_map(d, ds, cfg);
  };

  if (mode == DecoderMode::intra_class) {
    out.cel = cross_entropy_loss(logits, label);
    out.bcl = want_contrastive ? bcl_term() : Tensor::from_values({1}, {0.0});
    out.total = add(mul_scalar(out.cel, cfg.lambda1), mul_scalar(out.bcl, cfg.lambda2));
  } else {
    {
      NoGradGuard ng;  // cel is report-only here; keep it off the graph
      out.cel = cross_entropy_loss(logits, label);
    }
    if (!want_contrastive)
      throw std::invalid_argument("total_loss: out_of_class mode requires a contrastive loss");
    out.bcl = bcl_term();
    out.total = out.bcl;
  }
  return out;
}

}  // namespace changeseg
