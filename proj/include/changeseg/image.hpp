#pragma once

#include <cstdint>
#include <vector>

#include "changeseg/tensor.hpp"

namespace changeseg {

/// Planar (channel-major) image, values in [0,255]. Double throughout so
/// synthesis math (blending, Poisson solve, noise) runs at full precision;
/// quantization to 8-bit happens only at the PNG boundary.
struct Image {
  int channels = 0, h = 0, w = 0;
  std::vector<double> data;  // size channels*h*w, plane-by-plane

  static Image zeros(int channels, int h, int w) {
    Image im;
    im.channels = channels;
    im.h = h;
    im.w = w;
    im.data.assign(static_cast<std::size_t>(channels) * h * w, 0.0);
    return im;
  }
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * h + y) * w + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * h + y) * w + x];
  }
  std::size_t size() const { return data.size(); }
};

/// Per-pixel class ids (0 = background).
struct LabelMask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  static LabelMask zeros(int h, int w) {
    LabelMask m;
    m.h = h;
    m.w = w;
    m.v.assign(static_cast<std::size_t>(h) * w, 0);
    return m;
  }
  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

/// Clamp every sample to [0,255].
void clip_image(Image& im);

Image resize_image(const Image& im, int out_h, int out_w);        // bilinear
LabelMask resize_mask_nn(const LabelMask& m, int out_h, int out_w);

/// Separable Gaussian blur, kernel radius ceil(3*sigma), edge-clamped.
Image gaussian_blur(const Image& im, double sigma);

/// (C,H,W) tensor with raw [0,255] values (leaf, no grad).
Tensor image_to_tensor(const Image& im);

}  // namespace changeseg
