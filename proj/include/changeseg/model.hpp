#pragma once

#include "changeseg/config.hpp"
#include "changeseg/decoder.hpp"
#include "changeseg/encoder.hpp"
#include "changeseg/fusion.hpp"
#include "changeseg/tensor.hpp"

namespace changeseg {

struct ModelOutput {
  Tensor logits_s4;    // (K, H/4, W/4)
  Tensor logits_full;  // (K, H, W), bilinear upsample of logits_s4
  Tensor dist;         // (H/4, W/4) pixelwise feature distance
};

// Siamese change segmenter: one weight-shared encoder runs over both inputs,
// per-stage feature differences are fused into a single stride-4 map, and the
// decoder modulates that map with the feature-distance signal before scoring
// classes per pixel.
class SiameseChangeModel {
 public:
  SiameseChangeModel(const ModelConfig& cfg, Rng& rng);

  ModelOutput forward(const Tensor& ng, const Tensor& ok) const;

  NamedParams named_parameters();
  std::int64_t count_parameters();

  const ModelConfig& config() const { return cfg_; }

  Encoder encoder;
  FusionHead fusion;
  ChangeAwareDecoder decoder;

 private:
  ModelConfig cfg_;
};

}  // namespace changeseg
