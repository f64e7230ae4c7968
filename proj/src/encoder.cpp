#include "changeseg/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace changeseg {

Tensor map_to_tokens(const Tensor& map) {
  const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
  return transpose(reshape(map, {c, h * w}));
}

Tensor tokens_to_map(const Tensor& tokens, int h, int w) {
  const int c = tokens.dim(1);
  return reshape(transpose(tokens), {c, h, w});
}

Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  const int c = q.dim(1);
  if (c % heads != 0) throw std::invalid_argument("scaled_attention: heads must divide width");
  if (k.dim(1) != c || v.dim(1) != c || k.dim(0) != v.dim(0))
    throw std::invalid_argument("scaled_attention: shape mismatch");
  const int dh = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int hidx = 0; hidx < heads; ++hidx) {
    Tensor qh = slice_cols(q, hidx * dh, (hidx + 1) * dh);
    Tensor kh = slice_cols(k, hidx * dh, (hidx + 1) * dh);
    Tensor vh = slice_cols(v, hidx * dh, (hidx + 1) * dh);
    Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    outs.push_back(matmul(softmax_rows(scores), vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

SraAttention::SraAttention(int channels, int heads_, int R_, Rng& rng)
    : heads(heads_), R(R_) {
  wq = LinearLayer(channels, channels, rng);
  wk = LinearLayer(channels, channels, rng);
  wv = LinearLayer(channels, channels, rng);
  wo = LinearLayer(channels, channels, rng);
  if (R > 1) reduce = LinearLayer(channels * R, channels, rng);
}

Tensor SraAttention::forward(const Tensor& q_tokens, const Tensor& kv_tokens) const {
  const int c = q_tokens.dim(1);
  Tensor kv = kv_tokens;
  if (R > 1) {
    const int n = kv.dim(0);
    if (n % R != 0)
      throw std::invalid_argument("sra_attention: R must divide the kv token count");
    kv = linear(reshape(kv, {n / R, c * R}), reduce.w, reduce.b);
  }
  Tensor q = wq.forward(q_tokens);
  Tensor k = wk.forward(kv);
  Tensor v = wv.forward(kv);
  return wo.forward(scaled_attention(q, k, v, heads));
}

void SraAttention::collect(NamedParams& out, const std::string& prefix) const {
  wq.collect(out, prefix + ".q");
  wk.collect(out, prefix + ".k");
  wv.collect(out, prefix + ".v");
  wo.collect(out, prefix + ".o");
  if (R > 1) reduce.collect(out, prefix + ".reduce");
}

EncoderBlock::EncoderBlock(int channels, int hidden, int heads, int R, Rng& rng)
    : ln1(channels), ln2(channels), attn(channels, heads, R, rng),
      fc1(channels, hidden, rng), fc2(hidden, channels, rng), dw(hidden, rng) {}

Tensor EncoderBlock::forward(const Tensor& tokens, int h, int w) const {
  Tensor t = ln1.forward(tokens);
  Tensor x = add(tokens, attn.forward(t, t));
  Tensor m = fc1.forward(ln2.forward(x));
  m = map_to_tokens(dw.forward(tokens_to_map(m, h, w)));
  m = fc2.forward(gelu(m));
  return add(x, m);
}

void EncoderBlock::collect(NamedParams& out, const std::string& prefix) const {
  ln1.collect(out, prefix + ".ln1");
  attn.collect(out, prefix + ".attn");
  ln2.collect(out, prefix + ".ln2");
  fc1.collect(out, prefix + ".fc1");
  dw.collect(out, prefix + ".dw");
  fc2.collect(out, prefix + ".fc2");
}

EncoderStage::EncoderStage(int cin, int cout, int k, int stride, int hidden, int depth, int heads,
                           int R, Rng& rng)
    : embed(cin, cout, k, stride, (k - 1) / 2, rng), norm_in(cout), norm_out(cout),
      channels(cout) {
  blocks.reserve(static_cast<std::size_t>(depth));
  for (int b = 0; b < depth; ++b) blocks.emplace_back(cout, hidden, heads, R, rng);
}

Tensor EncoderStage::forward(const Tensor& map) const {
  Tensor y = embed.forward(map);
  const int h = y.dim(1), w = y.dim(2);
  Tensor tokens = norm_in.forward(map_to_tokens(y));
  for (const auto& b : blocks) tokens = b.forward(tokens, h, w);
  return tokens_to_map(norm_out.forward(tokens), h, w);
}

void EncoderStage::collect(NamedParams& out, const std::string& prefix) const {
  embed.collect(out, prefix + ".embed");
  norm_in.collect(out, prefix + ".norm_in");
  for (std::size_t b = 0; b < blocks.size(); ++b)
    blocks[b].collect(out, prefix + ".block" + std::to_string(b));
  norm_out.collect(out, prefix + ".norm_out");
}

Encoder::Encoder(const ModelConfig& cfg, Rng& rng) {
  int cin = 3;
  for (int s = 0; s < kNumStages; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    const int k = s == 0 ? 7 : 3;
    const int stride = s == 0 ? 4 : 2;
    stages.emplace_back(cin, cfg.stage_channels[idx], k, stride, cfg.mlp_hidden(s),
                        cfg.stage_depths[idx], cfg.stage_heads[idx], cfg.reduction_ratios[idx],
                        rng);
    cin = cfg.stage_channels[idx];
  }
}

FeaturePyramid Encoder::encode_pyramid(const Tensor& img) const {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw std::invalid_argument("encode_pyramid: expected (3,H,W) input");
  if (img.dim(1) % 32 != 0 || img.dim(2) % 32 != 0)
    throw std::invalid_argument("encode_pyramid: input size must be divisible by 32");
  FeaturePyramid pyr;
  Tensor x = img;
  for (int s = 0; s < kNumStages; ++s) {
    x = stages[static_cast<std::size_t>(s)].forward(x);
    pyr[static_cast<std::size_t>(s)] = x;
  }
  return pyr;
}

void Encoder::collect(NamedParams& out, const std::string& prefix) const {
  for (std::size_t s = 0; s < stages.size(); ++s)
    stages[s].collect(out, prefix + ".stage" + std::to_string(s));
}

std::pair<FeaturePyramid, FeaturePyramid> siamese_encode(const Encoder& enc, const Tensor& ng,
                                                         const Tensor& ok) {
  if (ng.shape() != ok.shape())
    throw std::invalid_argument("siamese_encode: NG/OK sizes differ");
  return {enc.encode_pyramid(ng), enc.encode_pyramid(ok)};
}

}  // namespace changeseg
