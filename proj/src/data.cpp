#include "msdn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numeric>

#include "msdn/errors.hpp"
#include "msdn/rng.hpp"

namespace msdn {

const MaskBuf& Sample::training_mask() const {
    if (kind == Kind::kWeak) {
        throw ContractError("training access to the mask of weak sample " + id);
    }
    if (!mask.has_value()) throw DataError("sample " + id + " has no mask");
    return *mask;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

namespace {

void paint_ellipse(ImageBuf& im, MaskBuf& mask, double cy, double cx, double ay, double ax,
                   double theta, double intensity, std::int32_t cls) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (std::int64_t y = 0; y < im.h; ++y) {
        for (std::int64_t x = 0; x < im.w; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            const double u = c * dx + s * dy;
            const double v = -s * dx + c * dy;
            if ((u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0) {
                im.at(y, x) += intensity;
                mask.at(y, x) = cls;
            }
        }
    }
}

}  // namespace

Sample synth_sample(std::uint64_t seed, std::int64_t index, const SynthConfig& cfg,
                    const std::string& split) {
    if (cfg.size < 16 || cfg.size % 16 != 0) {
        throw ConfigError("synthetic image size must be a positive multiple of 16, got " +
                          std::to_string(cfg.size));
    }
    if (cfg.classes < 1) throw ConfigError("classes must be >= 1");

    Rng rng(derive_seed(seed, "synth", static_cast<std::uint64_t>(index)));
    const std::int64_t n = cfg.size;

    Sample smp;
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%04lld", split.c_str(), static_cast<long long>(index));
    smp.id = idbuf;
    smp.split = split;
    smp.kind = Kind::kStrong;
    smp.image = ImageBuf{n, n, std::vector<double>(static_cast<std::size_t>(n * n), 0.0)};
    smp.mask = MaskBuf{n, n, std::vector<std::int32_t>(static_cast<std::size_t>(n * n), 0)};

    // Smooth background: base level plus a few low-frequency waves.
    const double base = rng.uniform(0.25, 0.45);
    struct Wave {
        double amp, fx, fy, phase;
    };
    Wave waves[3];
    for (auto& wv : waves) {
        wv.amp = rng.uniform(0.02, 0.07);
        wv.fx = rng.uniform(0.3, 1.5) * 6.283185307179586 / static_cast<double>(n);
        wv.fy = rng.uniform(0.3, 1.5) * 6.283185307179586 / static_cast<double>(n);
        wv.phase = rng.uniform(0.0, 6.283185307179586);
    }
    for (std::int64_t y = 0; y < n; ++y) {
        for (std::int64_t x = 0; x < n; ++x) {
            double v = base;
            for (const auto& wv : waves) {
                v += wv.amp * std::cos(wv.fx * static_cast<double>(x) + wv.fy * static_cast<double>(y) + wv.phase);
            }
            smp.image.at(y, x) = v;
        }
    }

    // 1-2 elliptical blobs, brighter than the background, well inside the
    // frame so target-centered crops always exist.
    const int blobs = 1 + (rng.bernoulli(0.5) ? 1 : 0);
    for (int b = 0; b < blobs; ++b) {
        const double cy = rng.uniform(0.28, 0.72) * static_cast<double>(n);
        const double cx = rng.uniform(0.28, 0.72) * static_cast<double>(n);
        const double ay = rng.uniform(0.09, 0.20) * static_cast<double>(n);
        const double ax = rng.uniform(0.09, 0.20) * static_cast<double>(n);
        const double theta = rng.uniform(0.0, 3.141592653589793);
        const double intensity = rng.uniform(0.18, 0.38);
        const auto cls = static_cast<std::int32_t>(1 + rng.uniform_int(cfg.classes));
        paint_ellipse(smp.image, *smp.mask, cy, cx, ay, ax, theta, intensity, cls);
    }

    for (auto& px : smp.image.v) px += rng.normal(0.0, cfg.noise_sigma);

    smp.boxes = boxes_from_mask(*smp.mask, cfg.classes);
    return smp;
}

std::vector<Sample> synth_generate(std::uint64_t seed, int n, const SynthConfig& cfg,
                                   const std::string& split, std::int64_t index_offset) {
    if (n < 1) throw ConfigError("sample count must be >= 1");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.push_back(synth_sample(seed, index_offset + i, cfg, split));
    }
    return out;
}

std::vector<std::vector<std::pair<std::int32_t, std::int32_t>>> connected_components(const MaskBuf& mask,
                                                                                     std::int32_t cls) {
    std::vector<std::vector<std::pair<std::int32_t, std::int32_t>>> comps;
    std::vector<char> seen(mask.v.size(), 0);
    for (std::int64_t y = 0; y < mask.h; ++y) {
        for (std::int64_t x = 0; x < mask.w; ++x) {
            const auto start = static_cast<std::size_t>(y * mask.w + x);
            if (seen[start] || mask.v[start] != cls) continue;
            std::vector<std::pair<std::int32_t, std::int32_t>> comp;
            std::deque<std::pair<std::int64_t, std::int64_t>> queue{{y, x}};
            seen[start] = 1;
            while (!queue.empty()) {
                const auto [cy, cx] = queue.front();
                queue.pop_front();
                comp.emplace_back(static_cast<std::int32_t>(cy), static_cast<std::int32_t>(cx));
                const std::pair<std::int64_t, std::int64_t> nbrs[4] = {
                    {cy - 1, cx}, {cy + 1, cx}, {cy, cx - 1}, {cy, cx + 1}};
                for (const auto& [ny, nx] : nbrs) {
                    if (ny < 0 || ny >= mask.h || nx < 0 || nx >= mask.w) continue;
                    const auto ni = static_cast<std::size_t>(ny * mask.w + nx);
                    if (!seen[ni] && mask.v[ni] == cls) {
                        seen[ni] = 1;
                        queue.emplace_back(ny, nx);
                    }
                }
            }
            comps.push_back(std::move(comp));
        }
    }
    return comps;
}

Box mask_to_bbox(const std::vector<std::pair<std::int32_t, std::int32_t>>& component, int class_id) {
    if (component.empty()) throw DataError("mask_to_bbox of an empty component");
    std::int32_t ymin = component[0].first, ymax = component[0].first;
    std::int32_t xmin = component[0].second, xmax = component[0].second;
    for (const auto& [y, x] : component) {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    Box b;
    b.x_min = xmin;
    b.y_min = ymin;
    b.x_max = xmax + 1;
    b.y_max = ymax + 1;
    b.class_id = class_id;
    return b;
}

std::vector<Box> boxes_from_mask(const MaskBuf& mask, int classes) {
    std::vector<Box> out;
    for (int c = 1; c <= classes; ++c) {
        for (const auto& comp : connected_components(mask, c)) {
            out.push_back(mask_to_bbox(comp, c));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

ImageBuf flip_h(const ImageBuf& im) {
    ImageBuf out = im;
    for (std::int64_t y = 0; y < im.h; ++y) {
        for (std::int64_t x = 0; x < im.w; ++x) out.at(y, x) = im.at(y, im.w - 1 - x);
    }
    return out;
}

ImageBuf flip_v(const ImageBuf& im) {
    ImageBuf out = im;
    for (std::int64_t y = 0; y < im.h; ++y) {
        for (std::int64_t x = 0; x < im.w; ++x) out.at(y, x) = im.at(im.h - 1 - y, x);
    }
    return out;
}

MaskBuf flip_h(const MaskBuf& m) {
    MaskBuf out = m;
    for (std::int64_t y = 0; y < m.h; ++y) {
        for (std::int64_t x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, m.w - 1 - x);
    }
    return out;
}

MaskBuf flip_v(const MaskBuf& m) {
    MaskBuf out = m;
    for (std::int64_t y = 0; y < m.h; ++y) {
        for (std::int64_t x = 0; x < m.w; ++x) out.at(y, x) = m.at(m.h - 1 - y, x);
    }
    return out;
}

Box flip_box_h(const Box& b, std::int64_t w) {
    Box out = b;
    out.x_min = static_cast<double>(w) - b.x_max;
    out.x_max = static_cast<double>(w) - b.x_min;
    return out;
}

Box flip_box_v(const Box& b, std::int64_t h) {
    Box out = b;
    out.y_min = static_cast<double>(h) - b.y_max;
    out.y_max = static_cast<double>(h) - b.y_min;
    return out;
}

namespace {

// Centroid of the target used to anchor the crop: foreground mask pixels when
// a mask is usable, otherwise the center of the union of the boxes. Falls
// back to the image center when the sample has no annotation at all.
std::pair<double, double> target_centroid(const Sample& s) {
    if (s.kind == Kind::kStrong && s.mask.has_value()) {
        double sy = 0.0, sx = 0.0;
        std::int64_t cnt = 0;
        for (std::int64_t y = 0; y < s.mask->h; ++y) {
            for (std::int64_t x = 0; x < s.mask->w; ++x) {
                if (s.mask->at(y, x) > 0) {
                    sy += static_cast<double>(y);
                    sx += static_cast<double>(x);
                    ++cnt;
                }
            }
        }
        if (cnt > 0) return {sy / static_cast<double>(cnt) + 0.5, sx / static_cast<double>(cnt) + 0.5};
    }
    if (!s.boxes.empty()) {
        double x0 = s.boxes[0].x_min, x1 = s.boxes[0].x_max;
        double y0 = s.boxes[0].y_min, y1 = s.boxes[0].y_max;
        for (const auto& b : s.boxes) {
            x0 = std::min(x0, b.x_min);
            x1 = std::max(x1, b.x_max);
            y0 = std::min(y0, b.y_min);
            y1 = std::max(y1, b.y_max);
        }
        return {0.5 * (y0 + y1), 0.5 * (x0 + x1)};
    }
    return {static_cast<double>(s.image.h) / 2.0, static_cast<double>(s.image.w) / 2.0};
}

// Offsets o such that the centroid lies within the central half of the crop
// window, clamped into the image; when that band is empty (target near the
// border) the nearest in-window offset is used.
std::int64_t crop_offset(double centroid, std::int64_t size, std::int64_t crop, Rng& rng) {
    const std::int64_t max_off = size - crop;
    auto lo = static_cast<std::int64_t>(std::ceil(centroid - 0.75 * static_cast<double>(crop)));
    auto hi = static_cast<std::int64_t>(std::floor(centroid - 0.25 * static_cast<double>(crop)));
    lo = std::max<std::int64_t>(lo, 0);
    hi = std::min(hi, max_off);
    if (lo > hi) {
        const auto ideal = static_cast<std::int64_t>(std::llround(centroid - static_cast<double>(crop) / 2.0));
        return std::clamp<std::int64_t>(ideal, 0, max_off);
    }
    return lo + rng.uniform_int(hi - lo + 1);
}

}  // namespace

Sample augment(const Sample& s, std::uint64_t seed, const AugmentConfig& cfg, int classes) {
    const std::int64_t crop = cfg.crop > 0 ? cfg.crop : s.image.h;
    if (crop > s.image.h || crop > s.image.w) {
        throw ConfigError("crop " + std::to_string(crop) + " larger than image " + std::to_string(s.image.h));
    }

    Rng rng(seed);
    Sample out = s;

    const bool hflip = cfg.flips && rng.bernoulli(0.5);
    const bool vflip = cfg.flips && rng.bernoulli(0.5);
    if (hflip) {
        out.image = flip_h(out.image);
        if (out.mask) out.mask = flip_h(*out.mask);
        for (auto& b : out.boxes) b = flip_box_h(b, out.image.w);
    }
    if (vflip) {
        out.image = flip_v(out.image);
        if (out.mask) out.mask = flip_v(*out.mask);
        for (auto& b : out.boxes) b = flip_box_v(b, out.image.h);
    }

    const auto [cy, cx] = target_centroid(out);
    const std::int64_t oy = crop_offset(cy, out.image.h, crop, rng);
    const std::int64_t ox = crop_offset(cx, out.image.w, crop, rng);

    if (crop != out.image.h || crop != out.image.w) {
        ImageBuf ci{crop, crop, std::vector<double>(static_cast<std::size_t>(crop * crop))};
        for (std::int64_t y = 0; y < crop; ++y) {
            for (std::int64_t x = 0; x < crop; ++x) ci.at(y, x) = out.image.at(y + oy, x + ox);
        }
        out.image = std::move(ci);
        if (out.mask) {
            MaskBuf cm{crop, crop, std::vector<std::int32_t>(static_cast<std::size_t>(crop * crop))};
            for (std::int64_t y = 0; y < crop; ++y) {
                for (std::int64_t x = 0; x < crop; ++x) cm.at(y, x) = out.mask->at(y + oy, x + ox);
            }
            out.mask = std::move(cm);
        }
        std::vector<Box> kept;
        for (auto b : out.boxes) {
            b.x_min = std::max(b.x_min - static_cast<double>(ox), 0.0);
            b.x_max = std::min(b.x_max - static_cast<double>(ox), static_cast<double>(crop));
            b.y_min = std::max(b.y_min - static_cast<double>(oy), 0.0);
            b.y_max = std::min(b.y_max - static_cast<double>(oy), static_cast<double>(crop));
            if (b.valid()) kept.push_back(b);
        }
        out.boxes = std::move(kept);
    }

    // Strong boxes are tight bounds by contract; a crop can clip a component
    // so they are recomputed from the transformed mask.
    if (out.kind == Kind::kStrong && out.mask.has_value()) {
        out.boxes = boxes_from_mask(*out.mask, classes);
    }

    if (cfg.noise_sigma > 0.0) {
        for (auto& px : out.image.v) px += rng.normal(0.0, cfg.noise_sigma);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stats, normalization, split
// ---------------------------------------------------------------------------

DatasetStats compute_stats(const std::vector<Sample>& samples) {
    if (samples.empty()) throw DataError("compute_stats over an empty sample set");
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& s : samples) {
        for (double px : s.image.v) sum += px;
        count += static_cast<std::int64_t>(s.image.v.size());
    }
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const auto& s : samples) {
        for (double px : s.image.v) ss += (px - mean) * (px - mean);
    }
    const double var = ss / static_cast<double>(count);
    if (var <= 0.0) throw DataError("training pixels have zero variance; cannot normalize");
    return {mean, std::sqrt(var)};
}

void normalize_image(ImageBuf& im, const DatasetStats& stats) {
    if (stats.stddev <= 0.0) throw DataError("normalization stddev must be > 0");
    for (auto& px : im.v) px = (px - stats.mean) / stats.stddev;
}

void split_strong_weak(std::vector<Sample>& samples, int n_strong, std::uint64_t seed) {
    const int n = static_cast<int>(samples.size());
    if (n_strong < 0 || n_strong > n) {
        throw ConfigError("n_strong " + std::to_string(n_strong) + " out of range for " + std::to_string(n) +
                          " samples");
    }
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(order);
    for (int i = 0; i < n; ++i) {
        samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].kind =
            i < n_strong ? Kind::kStrong : Kind::kWeak;
    }
}

}  // namespace msdn
