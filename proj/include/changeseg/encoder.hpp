#pragma once

#include <array>
#include <vector>

#include "changeseg/config.hpp"
#include "changeseg/nn.hpp"

namespace changeseg {

/// Stage outputs as (C, H/stride, W/stride) maps, strides 4/8/16/32.
using FeaturePyramid = std::array<Tensor, kNumStages>;

Tensor map_to_tokens(const Tensor& map);                    // (C,h,w) -> (h*w, C)
Tensor tokens_to_map(const Tensor& tokens, int h, int w);   // (h*w, C) -> (C,h,w)

/// Multi-head scaled dot-product attention over already-projected sequences;
/// scale is 1/sqrt(C/heads).
Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

/// Attention with sequence-reduced keys/values: kv is reshaped to
/// (N/R, C*R) and linearly projected back to width C before the K/V
/// projections. R=1 skips the reduction entirely.
struct SraAttention {
  int heads = 1, R = 1;
  LinearLayer wq, wk, wv, wo;
  LinearLayer reduce;  // only allocated when R > 1

  SraAttention() = default;
  SraAttention(int channels, int heads, int R, Rng& rng);
  Tensor forward(const Tensor& q_tokens, const Tensor& kv_tokens) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

/// Free-function form: attention of q over a reduced kv sequence.
inline Tensor sra_attention(const SraAttention& m, const Tensor& q, const Tensor& kv) {
  return m.forward(q, kv);
}

struct EncoderBlock {
  LayerNormLayer ln1, ln2;
  SraAttention attn;
  LinearLayer fc1, fc2;
  DwConv3x3Layer dw;

  EncoderBlock() = default;
  EncoderBlock(int channels, int hidden, int heads, int R, Rng& rng);
  Tensor forward(const Tensor& tokens, int h, int w) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct EncoderStage {
  Conv2dLayer embed;
  LayerNormLayer norm_in, norm_out;
  std::vector<EncoderBlock> blocks;
  int channels = 0;

  EncoderStage() = default;
  EncoderStage(int cin, int cout, int k, int stride, int hidden, int depth, int heads, int R,
               Rng& rng);
  Tensor forward(const Tensor& map) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct Encoder {
  std::vector<EncoderStage> stages;

  Encoder() = default;
  Encoder(const ModelConfig& cfg, Rng& rng);
  /// img: (3,H,W) with H,W divisible by 32; produces all four stage maps.
  FeaturePyramid encode_pyramid(const Tensor& img) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

/// One shared-weight encoder applied to both images; sizes must match.
std::pair<FeaturePyramid, FeaturePyramid> siamese_encode(const Encoder& enc, const Tensor& ng,
                                                         const Tensor& ok);

}  // namespace changeseg
