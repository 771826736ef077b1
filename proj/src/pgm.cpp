#include "msdn/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "msdn/errors.hpp"

namespace msdn {

void write_pgm(const std::filesystem::path& path, const ImageBuf& im) {
    double lo = im.v[0], hi = im.v[0];
    for (double v : im.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << "P5\n" << im.w << " " << im.h << "\n255\n";
    for (double v : im.v) {
        const auto b = static_cast<unsigned char>(std::lround((v - lo) / span * 255.0));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
}

void write_mask_pgm(const std::filesystem::path& path, const MaskBuf& mask, int classes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    for (std::int32_t v : mask.v) {
        const auto b = static_cast<unsigned char>(std::clamp(v * 255 / std::max(classes, 1), 0, 255));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
}

void draw_box_outline(ImageBuf& im, const Box& b, double value) {
    const auto x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(b.x_min)), 0, im.w - 1);
    const auto x1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(b.x_max)) - 1, 0, im.w - 1);
    const auto y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(b.y_min)), 0, im.h - 1);
    const auto y1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(b.y_max)) - 1, 0, im.h - 1);
    for (std::int64_t x = x0; x <= x1; ++x) {
        im.at(y0, x) = value;
        im.at(y1, x) = value;
    }
    for (std::int64_t y = y0; y <= y1; ++y) {
        im.at(y, x0) = value;
        im.at(y, x1) = value;
    }
}

}  // namespace msdn
