#pragma once

#include <filesystem>
#include <string>

#include "msdn/data.hpp"

namespace msdn {

// On-disk dataset layout: <dir>/manifest.json plus one tensor binary per
// image ([1,H,W] f32) and per mask ([H,W] f32 with integer-coded labels).
// The manifest carries classes, size, normalization stats computed from the
// training split, and per-sample entries with inline boxes.

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Throws DataError on missing files and FormatError/DataError on malformed
// content. Masks are loaded for every sample; kind demotion happens later in
// the trainer via split_strong_weak.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace msdn
