#pragma once

#include "changeseg/config.hpp"
#include "changeseg/nn.hpp"

namespace changeseg {

constexpr double kDistNormEps = 1e-6;

/// (d - min) / (max - min + eps); a constant map normalizes to all zeros.
Tensor normalize_distmap(const Tensor& d);

/// Channel / horizontal / vertical gate triple; each profile runs through a
/// two-layer bottleneck and a sigmoid, so every weight lies in (0,1).
struct AxisGate {
  LinearLayer fc1, fc2;
  AxisGate() = default;
  AxisGate(int channels, int mid, Rng& rng);
  Tensor forward(const Tensor& profile) const;  // (K,D) -> (K,D) in (0,1)
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct ChangeAwareDecoder {
  AxisGate ca, ha, va;
  LinearLayer head;  // pointwise classifier
  bool use_change_attention = true;

  ChangeAwareDecoder() = default;
  ChangeAwareDecoder(const ModelConfig& cfg, Rng& rng);

  /// intra_class: x = input + DistMap (broadcast); output CA(x)*HA(x)*VA(x)*x.
  /// out_of_class: output CA(input) * normalize_distmap(d) * input.
  Tensor change_attention(const Tensor& input, const Tensor& d, DecoderMode mode) const;

  /// Attention (when enabled) followed by the pointwise head: (K, H/4, W/4).
  Tensor decode(const Tensor& fused, const Tensor& d, DecoderMode mode) const;

  void collect(NamedParams& out, const std::string& prefix) const;
};

}  // namespace changeseg
