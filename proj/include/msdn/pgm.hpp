#pragma once

#include <filesystem>

#include "msdn/boxes.hpp"
#include "msdn/data.hpp"

namespace msdn {

// Binary PGM (P5), intensities min-max scaled to 0..255.
void write_pgm(const std::filesystem::path& path, const ImageBuf& im);

// Mask labels scaled so class C maps to 255.
void write_mask_pgm(const std::filesystem::path& path, const MaskBuf& mask, int classes);

// One-pixel box outline drawn in place.
void draw_box_outline(ImageBuf& im, const Box& b, double value);

}  // namespace msdn
