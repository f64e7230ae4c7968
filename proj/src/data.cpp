#include "changeseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "changeseg/imageio.hpp"

namespace changeseg {

namespace fs = std::filesystem;

std::vector<ImagePair> load_pairs(const std::string& root, const std::string& split,
                                  int num_classes) {
  const fs::path base = fs::path(root) / split;
  const fs::path ng_dir = base / "ng", ok_dir = base / "ok", mask_dir = base / "mask";
  if (!fs::is_directory(ng_dir))
    throw std::runtime_error("load_pairs: missing directory " + ng_dir.string());

  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(ng_dir))
    if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());

  std::vector<ImagePair> pairs;
  pairs.reserve(stems.size());
  for (const std::string& stem : stems) {
    ImagePair p;
    p.stem = stem;
    const std::string pattern = stem.substr(0, stem.find('_'));
    try {
      p.pattern_id = std::stoi(pattern);
    } catch (const std::exception&) {
      p.pattern_id = 0;
    }
    p.ng = read_image((ng_dir / (stem + ".png")).string());

    fs::path ok_path = ok_dir / (stem + ".png");
    if (!fs::exists(ok_path)) ok_path = ok_dir / (pattern + ".png");
    if (!fs::exists(ok_path))
      throw std::runtime_error("load_pairs: no ok reference for " + stem + " (looked for " +
                               (ok_dir / (stem + ".png")).string() + " and " + ok_path.string() +
                               ")");
    p.ok = read_image(ok_path.string());

    const fs::path mask_path = mask_dir / (stem + ".png");
    if (!fs::exists(mask_path))
      throw std::runtime_error("load_pairs: missing mask " + mask_path.string());
    p.mask = read_mask(mask_path.string());

    if (p.ok.h != p.ng.h || p.ok.w != p.ng.w || p.mask.h != p.ng.h || p.mask.w != p.ng.w)
      throw std::runtime_error("load_pairs: size mismatch in sample " + stem);
    for (std::uint8_t v : p.mask.v)
      if (v >= num_classes)
        throw std::runtime_error("load_pairs: mask value " + std::to_string(v) +
                                 " out of range in " + stem);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

namespace {

Image hflip(const Image& im) {
  Image out = im;
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x) out.at(c, y, x) = im.at(c, y, im.w - 1 - x);
  return out;
}

LabelMask hflip(const LabelMask& m) {
  LabelMask out = m;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, m.w - 1 - x);
  return out;
}

Image crop(const Image& im, int y0, int x0, int ch, int cw) {
  Image out = Image::zeros(im.channels, ch, cw);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) out.at(c, y, x) = im.at(c, y0 + y, x0 + x);
  return out;
}

LabelMask crop(const LabelMask& m, int y0, int x0, int ch, int cw) {
  LabelMask out = LabelMask::zeros(ch, cw);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) out.at(y, x) = m.at(y0 + y, x0 + x);
  return out;
}

}  // namespace

ImagePair augment(const ImagePair& pair, int crop_h, int crop_w, Rng& rng) {
  const double scale = rng.uniform(1.0, 1.3);
  const int rh = std::max(crop_h, static_cast<int>(std::lround(crop_h * scale)));
  const int rw = std::max(crop_w, static_cast<int>(std::lround(crop_w * scale)));
  const int y0 = rng.uniform_int(0, rh - crop_h);
  const int x0 = rng.uniform_int(0, rw - crop_w);
  const bool flip = rng.uniform() < 0.5;

  ImagePair out;
  out.pattern_id = pair.pattern_id;
  out.stem = pair.stem;
  out.ng = crop(resize_image(pair.ng, rh, rw), y0, x0, crop_h, crop_w);
  out.ok = crop(resize_image(pair.ok, rh, rw), y0, x0, crop_h, crop_w);
  out.mask = crop(resize_mask_nn(pair.mask, rh, rw), y0, x0, crop_h, crop_w);
  if (flip) {
    out.ng = hflip(out.ng);
    out.ok = hflip(out.ok);
    out.mask = hflip(out.mask);
  }
  return out;
}

Tensor normalize_image(const Image& im, const std::array<double, 3>& mean,
                       const std::array<double, 3>& std) {
  std::vector<double> v(im.data.size());
  const std::size_t plane = static_cast<std::size_t>(im.h) * im.w;
  for (int c = 0; c < im.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      v[c * plane + i] =
          (im.data[c * plane + i] / 255.0 - mean[static_cast<std::size_t>(c % 3)]) /
          std[static_cast<std::size_t>(c % 3)];
  return Tensor::from_values({im.channels, im.h, im.w}, std::move(v));
}

SplitPlan make_split(const std::vector<std::string>& ids, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("make_split: fraction must lie in [0,1]");
  std::vector<std::string> order = ids;
  Rng rng(derive_seed(seed, 0x5eedu));
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const std::size_t j =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i),
                                                 static_cast<int>(order.size()) - 1));
    std::swap(order[i], order[j]);
  }
  const std::size_t n_labeled =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size())));
  SplitPlan plan;
  plan.fraction = fraction;
  plan.labeled_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_labeled));
  plan.unlabeled_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_labeled), order.end());
  return plan;
}

}  // namespace changeseg
