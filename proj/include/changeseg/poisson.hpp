#pragma once

#include "changeseg/image.hpp"

namespace changeseg {

/// Seamless blend of `source` into `target` over the nonzero pixels of
/// `region`: solves the discrete Poisson equation (5-point Laplacian) with
/// source gradients as guidance and target values as Dirichlet boundary.
/// An all-zero region returns target unchanged. Every region pixel must have
/// all four neighbors inside the image (a region touching the border has no
/// boundary to anchor to and is rejected).
Image poisson_blend(const Image& source, const Image& target, const LabelMask& region);

}  // namespace changeseg
