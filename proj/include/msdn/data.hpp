#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msdn/boxes.hpp"

namespace msdn {

struct ImageBuf {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<double> v;  // row-major intensities

    double& at(std::int64_t y, std::int64_t x) { return v[static_cast<std::size_t>(y * w + x)]; }
    double at(std::int64_t y, std::int64_t x) const { return v[static_cast<std::size_t>(y * w + x)]; }
};

struct MaskBuf {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::int32_t> v;  // labels 0..C

    std::int32_t& at(std::int64_t y, std::int64_t x) { return v[static_cast<std::size_t>(y * w + x)]; }
    std::int32_t at(std::int64_t y, std::int64_t x) const { return v[static_cast<std::size_t>(y * w + x)]; }
};

enum class Kind { kStrong, kWeak };

struct Sample {
    std::string id;
    std::string split;  // train | val | test
    Kind kind = Kind::kStrong;
    ImageBuf image;
    std::optional<MaskBuf> mask;
    std::vector<Box> boxes;

    // The dense mask of a weak sample is diagnostics-only; the training path
    // must go through this accessor so the restriction is structural.
    const MaskBuf& training_mask() const;
};

struct DatasetStats {
    double mean = 0.0;
    double stddev = 0.0;
};

struct Dataset {
    int version = 1;
    int classes = 1;
    std::int64_t size = 64;
    DatasetStats stats;
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::int64_t size = 64;       // must be divisible by 16
    int classes = 1;
    double noise_sigma = 0.05;    // additive pixel noise, fraction of intensity range
};

// One deterministic sample: smooth noisy background plus 1-2 elliptical
// blobs; mask labels the blob interiors and boxes are the tight bounds of
// the mask's connected components.
Sample synth_sample(std::uint64_t seed, std::int64_t index, const SynthConfig& cfg,
                    const std::string& split);

std::vector<Sample> synth_generate(std::uint64_t seed, int n, const SynthConfig& cfg,
                                   const std::string& split, std::int64_t index_offset = 0);

// 4-connected components of one class label; each component is a pixel list.
std::vector<std::vector<std::pair<std::int32_t, std::int32_t>>> connected_components(const MaskBuf& mask,
                                                                                     std::int32_t cls);

// Tight bounds of a non-empty component given as (y, x) pixel pairs; the max
// side is exclusive, so a single pixel at (y=3, x=5) maps to (5, 3, 6, 4).
Box mask_to_bbox(const std::vector<std::pair<std::int32_t, std::int32_t>>& component, int class_id);

// Boxes for every component of every foreground class.
std::vector<Box> boxes_from_mask(const MaskBuf& mask, int classes);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    bool flips = true;
    double noise_sigma = 0.05;
    std::int64_t crop = 0;  // 0 means full size
};

// Random horizontal/vertical flips (p=0.5 each), additive Gaussian noise on
// the image only, and a crop whose window keeps the target centroid inside
// the central half of the window. Mask and boxes undergo the identical
// geometric transform; strong-sample boxes are recomputed from the
// transformed mask so they stay exact tight bounds.
Sample augment(const Sample& s, std::uint64_t seed, const AugmentConfig& cfg, int classes);

// Geometric helpers, exposed for tests.
ImageBuf flip_h(const ImageBuf& im);
ImageBuf flip_v(const ImageBuf& im);
MaskBuf flip_h(const MaskBuf& m);
MaskBuf flip_v(const MaskBuf& m);
Box flip_box_h(const Box& b, std::int64_t w);
Box flip_box_v(const Box& b, std::int64_t h);

// ---------------------------------------------------------------------------
// Normalization and splitting
// ---------------------------------------------------------------------------

// Population mean/std over every pixel of the given samples. Throws DataError
// when the pixels are constant.
DatasetStats compute_stats(const std::vector<Sample>& samples);

void normalize_image(ImageBuf& im, const DatasetStats& stats);

// Marks a uniform random subset of n_strong samples strong and demotes the
// rest to weak (masks kept for diagnostics, withheld from training).
void split_strong_weak(std::vector<Sample>& samples, int n_strong, std::uint64_t seed);

}  // namespace msdn
