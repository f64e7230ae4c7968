#include "changeseg/decoder.hpp"

#include <stdexcept>

#include "changeseg/encoder.hpp"

namespace changeseg {

Tensor normalize_distmap(const Tensor& d) { return minmax_normalize(d, kDistNormEps); }

AxisGate::AxisGate(int channels, int mid, Rng& rng)
    : fc1(channels, mid, rng), fc2(mid, channels, rng) {}

Tensor AxisGate::forward(const Tensor& profile) const {
  return sigmoid(fc2.forward(relu(fc1.forward(profile))));
}

void AxisGate::collect(NamedParams& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

namespace {
int gate_mid(int d) { return std::max(8, d / 8); }
}  // namespace

ChangeAwareDecoder::ChangeAwareDecoder(const ModelConfig& cfg, Rng& rng)
    : use_change_attention(cfg.use_change_attention) {
  const int d = cfg.decoder_channels;
  if (cfg.use_change_attention) {
    ca = AxisGate(d, gate_mid(d), rng);
    ha = AxisGate(d, gate_mid(d), rng);
    va = AxisGate(d, gate_mid(d), rng);
  }
  head = LinearLayer(d, cfg.num_classes, rng);
}

Tensor ChangeAwareDecoder::change_attention(const Tensor& input, const Tensor& d,
                                            DecoderMode mode) const {
  if (input.ndim() != 3) throw std::invalid_argument("change_attention: expected (D,H,W)");
  if (d.ndim() != 2 || d.dim(0) != input.dim(1) || d.dim(1) != input.dim(2))
    throw std::invalid_argument("change_attention: DistMap shape mismatch");
  const int D = input.dim(0);

  if (mode == DecoderMode::intra_class) {
    Tensor x = add_spatial(input, d);
    // CA over the global pool; HA/VA over per-channel column/row profiles.
    Tensor wc = reshape(ca.forward(reshape(global_avg_pool(x), {1, D})), {D});
    Tensor wh = transpose(ha.forward(transpose(avg_pool_rows(x))));  // (D,W)
    Tensor wv = transpose(va.forward(transpose(avg_pool_cols(x))));  // (D,H)
    return mul_ch(mul_cw(mul_channel(x, wc), wh), wv);
  }
  Tensor wc = reshape(ca.forward(reshape(global_avg_pool(input), {1, D})), {D});
  return mul_spatial(mul_channel(input, wc), normalize_distmap(d));
}

Tensor ChangeAwareDecoder::decode(const Tensor& fused, const Tensor& d, DecoderMode mode) const {
  Tensor x = use_change_attention ? change_attention(fused, d, mode) : fused;
  const int h = x.dim(1), w = x.dim(2);
  return tokens_to_map(head.forward(map_to_tokens(x)), h, w);
}

void ChangeAwareDecoder::collect(NamedParams& out, const std::string& prefix) const {
  if (use_change_attention) {
    ca.collect(out, prefix + ".ca");
    ha.collect(out, prefix + ".ha");
    va.collect(out, prefix + ".va");
  }
  head.collect(out, prefix + ".head");
}

}  // namespace changeseg
