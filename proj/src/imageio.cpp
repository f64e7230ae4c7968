#include "changeseg/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

namespace changeseg {

Image read_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image: " + path);
  Image im = Image::zeros(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) im.at(c, y, x) = row[x][2 - c];  // BGR -> RGB
  }
  return im;
}

void write_image(const std::string& path, const Image& im) {
  if (im.channels != 3) throw std::invalid_argument("write_image: expected 3 channels");
  cv::Mat bgr(im.h, im.w, CV_8UC3);
  for (int y = 0; y < im.h; ++y) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < im.w; ++x)
      for (int c = 0; c < 3; ++c)
        row[x][2 - c] =
            static_cast<std::uint8_t>(std::clamp(std::llround(im.at(c, y, x)), 0ll, 255ll));
  }
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

LabelMask read_mask(const std::string& path) {
  cv::Mat g = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw std::runtime_error("cannot read mask: " + path);
  LabelMask m = LabelMask::zeros(g.rows, g.cols);
  for (int y = 0; y < g.rows; ++y) {
    const std::uint8_t* row = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < g.cols; ++x) m.at(y, x) = row[x];
  }
  return m;
}

void write_mask(const std::string& path, const LabelMask& m) {
  cv::Mat g(m.h, m.w, CV_8UC1);
  for (int y = 0; y < m.h; ++y) {
    std::uint8_t* row = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.w; ++x) row[x] = m.at(y, x);
  }
  if (!cv::imwrite(path, g)) throw std::runtime_error("cannot write mask: " + path);
}

}  // namespace changeseg
