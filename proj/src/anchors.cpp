#include "msdn/anchors.hpp"

#include <cmath>

#include "msdn/errors.hpp"

namespace msdn {

std::vector<double> anchor_base_sizes(std::int64_t image_size) {
    const double k = static_cast<double>(image_size) / 64.0;
    return {32.0 * k, 16.0 * k, 8.0 * k, 4.0 * k};
}

std::vector<Box> generate_stage_anchors(std::int64_t h, std::int64_t w, std::int64_t img_h,
                                        std::int64_t img_w, double base_size) {
    if (h <= 0 || w <= 0 || img_h <= 0 || img_w <= 0) {
        throw DimensionError("anchor grid dims must be positive");
    }
    const double stride_y = static_cast<double>(img_h) / static_cast<double>(h);
    const double stride_x = static_cast<double>(img_w) / static_cast<double>(w);
    std::vector<Box> anchors;
    anchors.reserve(static_cast<std::size_t>(h * w * kAnchorsPerCell));
    for (std::int64_t i = 0; i < h; ++i) {
        const double cy = (static_cast<double>(i) + 0.5) * stride_y;
        for (std::int64_t j = 0; j < w; ++j) {
            const double cx = (static_cast<double>(j) + 0.5) * stride_x;
            for (double s : kAnchorScales) {
                for (double r : kAnchorRatios) {
                    const double aw = base_size * s / std::sqrt(r);
                    const double ah = base_size * s * std::sqrt(r);
                    Box b;
                    b.x_min = cx - 0.5 * aw;
                    b.x_max = cx + 0.5 * aw;
                    b.y_min = cy - 0.5 * ah;
                    b.y_max = cy + 0.5 * ah;
                    anchors.push_back(b);
                }
            }
        }
    }
    return anchors;
}

std::vector<std::vector<Box>> generate_pyramid_anchors(std::int64_t image_size) {
    const auto bases = anchor_base_sizes(image_size);
    std::vector<std::vector<Box>> out;
    std::int64_t cells = image_size / 8;
    for (double base : bases) {
        out.push_back(generate_stage_anchors(cells, cells, image_size, image_size, base));
        cells *= 2;
    }
    return out;
}

}  // namespace msdn
