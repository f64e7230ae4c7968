#include "changeseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "changeseg/ops.hpp"

namespace changeseg {

void clip_image(Image& im) {
  for (double& v : im.data) v = std::clamp(v, 0.0, 255.0);
}

Image resize_image(const Image& im, int out_h, int out_w) {
  Image out = Image::zeros(im.channels, out_h, out_w);
  resize_bilinear_raw(im.data.data(), im.channels, im.h, im.w, out.data.data(), out_h, out_w);
  return out;
}

LabelMask resize_mask_nn(const LabelMask& m, int out_h, int out_w) {
  LabelMask out = LabelMask::zeros(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    int sy = std::min(m.h - 1, static_cast<int>((y + 0.5) * m.h / out_h));
    for (int x = 0; x < out_w; ++x) {
      int sx = std::min(m.w - 1, static_cast<int>((x + 0.5) * m.w / out_w));
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

Image gaussian_blur(const Image& im, double sigma) {
  if (sigma <= 0.0) return im;
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;

  Image tmp = Image::zeros(im.channels, im.h, im.w);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int xx = std::clamp(x + i, 0, im.w - 1);
          acc += k[static_cast<std::size_t>(i + radius)] * im.at(c, y, xx);
        }
        tmp.at(c, y, x) = acc;
      }
  Image out = Image::zeros(im.channels, im.h, im.w);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int yy = std::clamp(y + i, 0, im.h - 1);
          acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(c, yy, x);
        }
        out.at(c, y, x) = acc;
      }
  return out;
}

Tensor image_to_tensor(const Image& im) {
  return Tensor::from_values({im.channels, im.h, im.w}, im.data);
}

}  // namespace changeseg
