#pragma once

#include <array>
#include <string>
#include <vector>

#include "changeseg/image.hpp"
#include "changeseg/rng.hpp"
#include "changeseg/tensor.hpp"

namespace changeseg {

struct ImagePair {
  Image ng, ok;
  LabelMask mask;
  int pattern_id = 0;
  std::string stem;
};

struct SplitPlan {
  std::vector<std::string> labeled_ids, unlabeled_ids;  // disjoint
  double fraction = 1.0;
};

/// Reads `<root>/<split>/{ng,ok,mask}/*.png` in lexicographic stem order.
/// The OK reference is `ok/<stem>.png` when present, else the pattern-wide
/// `ok/<pattern-id>.png`. Mask values must be < num_classes.
std::vector<ImagePair> load_pairs(const std::string& root, const std::string& split,
                                  int num_classes);

/// One shared geometric transform for ng/ok/mask: scale jitter, crop to
/// crop_h x crop_w, coin-flip horizontal mirror. Images resample bilinearly,
/// the mask nearest-neighbor. Photometric normalization is separate
/// (normalize_image) so masks and saved artifacts stay in pixel units.
ImagePair augment(const ImagePair& pair, int crop_h, int crop_w, Rng& rng);

/// (3,H,W) tensor of (v/255 - mean) / std.
Tensor normalize_image(const Image& im, const std::array<double, 3>& mean,
                       const std::array<double, 3>& std);

/// Seeded uniform sample without replacement; |labeled| = round(fraction*n).
SplitPlan make_split(const std::vector<std::string>& ids, double fraction, std::uint64_t seed);

}  // namespace changeseg
