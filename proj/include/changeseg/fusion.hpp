#pragma once

#include "changeseg/encoder.hpp"

namespace changeseg {

/// Upsample every stage to stride-4 resolution and concatenate along channels
/// (stage order preserved). Output: (sum C_s, H/4, W/4).
Tensor align_concat(const FeaturePyramid& pyr);

/// Per-pixel Euclidean distance between two aligned feature stacks: (H,W).
Tensor dist_map(const Tensor& a, const Tensor& b);

/// Signed per-stage subtraction, linear projection to a common width,
/// upsample to stride 4, and summation.
struct FusionHead {
  std::array<LinearLayer, kNumStages> proj;
  int decoder_channels = 0;

  FusionHead() = default;
  FusionHead(const ModelConfig& cfg, Rng& rng);
  Tensor fuse_differences(const FeaturePyramid& ng, const FeaturePyramid& ok) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

}  // namespace changeseg
