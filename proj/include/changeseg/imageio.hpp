#pragma once

#include <string>

#include "changeseg/image.hpp"

namespace changeseg {

/// PNG (or any codec the backend knows) -> 3-channel RGB image in [0,255].
Image read_image(const std::string& path);

/// Rounds to 8-bit; deterministic encoder settings so identical pixels give
/// identical files.
void write_image(const std::string& path, const Image& im);

/// Single-channel indexed mask; pixel values are class ids.
LabelMask read_mask(const std::string& path);
void write_mask(const std::string& path, const LabelMask& m);

}  // namespace changeseg
