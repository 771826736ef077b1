#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "msdn/boxes.hpp"

namespace msdn {

// A = 9 reference boxes per feature cell: 3 octave scales x 3 aspect ratios.
inline constexpr int kAnchorsPerCell = 9;
inline constexpr std::array<double, 3> kAnchorScales = {1.0, 1.2599210498948732, 1.5874010519681994};
inline constexpr std::array<double, 3> kAnchorRatios = {0.5, 1.0, 2.0};  // h/w

// Base sizes for the 4 detection stages, coarse (H/8) to fine (H), scaled so
// a 64 px image uses {32, 16, 8, 4}.
std::vector<double> anchor_base_sizes(std::int64_t image_size);

// Anchors for one h x w feature map over an img_h x img_w image, centered on
// feature-cell centers. Flattened order: cell-major (row, then column), then
// anchor index a = scale_index * 3 + ratio_index. An anchor of scale s and
// ratio r has width base*s/sqrt(r) and height base*s*sqrt(r); its area is
// base^2 * s^2 for every ratio.
std::vector<Box> generate_stage_anchors(std::int64_t h, std::int64_t w, std::int64_t img_h,
                                        std::int64_t img_w, double base_size);

// Per-stage anchors for the 4 detection resolutions of an image_size input:
// image_size/8, /4, /2, /1.
std::vector<std::vector<Box>> generate_pyramid_anchors(std::int64_t image_size);

}  // namespace msdn
