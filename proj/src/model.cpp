#include "changeseg/model.hpp"

#include "changeseg/ops.hpp"

namespace changeseg {

SiameseChangeModel::SiameseChangeModel(const ModelConfig& cfg, Rng& rng)
    : encoder(cfg, rng), fusion(cfg, rng), decoder(cfg, rng), cfg_(cfg) {}

ModelOutput SiameseChangeModel::forward(const Tensor& ng, const Tensor& ok) const {
  auto [pyr_ng, pyr_ok] = siamese_encode(encoder, ng, ok);
  Tensor d = dist_map(align_concat(pyr_ng), align_concat(pyr_ok));
  Tensor fused = fusion.fuse_differences(pyr_ng, pyr_ok);
  Tensor logits = decoder.decode(fused, d, cfg_.mode);
  Tensor full = bilinear_resize(logits, ng.dim(1), ng.dim(2));
  return {logits, full, d};
}

NamedParams SiameseChangeModel::named_parameters() {
  NamedParams out;
  encoder.collect(out, "encoder");
  fusion.collect(out, "fusion");
  decoder.collect(out, "decoder");
  return out;
}

std::int64_t SiameseChangeModel::count_parameters() {
  std::int64_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t.size();
  return total;
}

}  // namespace changeseg
