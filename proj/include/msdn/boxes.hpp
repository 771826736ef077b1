#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace msdn {

// Axis-aligned box in continuous pixel coordinates, max side exclusive.
struct Box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
    int class_id = 1;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double cx() const { return 0.5 * (x_min + x_max); }
    double cy() const { return 0.5 * (y_min + y_max); }
    double area() const { return width() * height(); }
    bool valid() const { return x_min < x_max && y_min < y_max; }
};

double iou(const Box& a, const Box& b);

// Anchor-relative offsets (dx, dy, dw, dh):
//   dx = (cx_g - cx_a) / w_a    dw = ln(w_g / w_a)
//   dy = (cy_g - cy_a) / h_a    dh = ln(h_g / h_a)
struct BoxOffsets {
    double dx = 0.0;
    double dy = 0.0;
    double dw = 0.0;
    double dh = 0.0;
};

BoxOffsets encode_box(const Box& anchor, const Box& gt);

// Exact inverse of encode_box. Throws DataError on non-finite offsets.
Box decode_box(const Box& anchor, const BoxOffsets& offsets);

enum class MatchState : std::uint8_t { kNegative = 0, kPositive = 1, kIgnore = 2 };

// Per-anchor assignment produced by match_and_encode.
struct BoxTargets {
    std::vector<MatchState> state;
    std::vector<int> cls;                    // 0-based class index, -1 for non-positives
    std::vector<BoxOffsets> offsets;         // defined for positives only
    int num_positive = 0;
};

// IoU >= pos_iou -> positive against the highest-IoU gt; IoU < neg_iou ->
// negative; in between -> ignore. Additionally every gt claims its single
// highest-IoU anchor as positive (ties resolved to the first anchor),
// provided that IoU is > 0. An empty gt list yields all negatives.
BoxTargets match_and_encode(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                            double pos_iou = 0.5, double neg_iou = 0.4);

// Greedy NMS for rendering predicted boxes; returns kept indices.
std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                             double iou_threshold, std::size_t max_keep);

}  // namespace msdn
