#include "changeseg/fusion.hpp"

#include <stdexcept>

namespace changeseg {

Tensor align_concat(const FeaturePyramid& pyr) {
  const int h1 = pyr[0].dim(1), w1 = pyr[0].dim(2);
  std::vector<Tensor> maps;
  maps.reserve(kNumStages);
  for (int s = 0; s < kNumStages; ++s) {
    const Tensor& m = pyr[static_cast<std::size_t>(s)];
    maps.push_back(s == 0 ? m : bilinear_resize(m, h1, w1));
  }
  return concat_channels(maps);
}

Tensor dist_map(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("dist_map: shape mismatch");
  return channel_l2(sub(a, b));
}

FusionHead::FusionHead(const ModelConfig& cfg, Rng& rng) : decoder_channels(cfg.decoder_channels) {
  for (int s = 0; s < kNumStages; ++s)
    proj[static_cast<std::size_t>(s)] =
        LinearLayer(cfg.stage_channels[static_cast<std::size_t>(s)], cfg.decoder_channels, rng);
}

Tensor FusionHead::fuse_differences(const FeaturePyramid& ng, const FeaturePyramid& ok) const {
  const int h1 = ng[0].dim(1), w1 = ng[0].dim(2);
  Tensor acc;
  for (int s = 0; s < kNumStages; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    if (ng[idx].shape() != ok[idx].shape())
      throw std::invalid_argument("fuse_differences: pyramid shape mismatch");
    const int h = ng[idx].dim(1), w = ng[idx].dim(2);
    Tensor diff = sub(map_to_tokens(ng[idx]), map_to_tokens(ok[idx]));
    Tensor m = tokens_to_map(proj[idx].forward(diff), h, w);
    if (s > 0) m = bilinear_resize(m, h1, w1);
    acc = s == 0 ? m : add(acc, m);
  }
  return acc;
}

void FusionHead::collect(NamedParams& out, const std::string& prefix) const {
  for (int s = 0; s < kNumStages; ++s)
    proj[static_cast<std::size_t>(s)].collect(out, prefix + ".proj" + std::to_string(s));
}

}  // namespace changeseg
