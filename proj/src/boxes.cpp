#include "msdn/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "msdn/errors.hpp"

namespace msdn {

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

BoxOffsets encode_box(const Box& anchor, const Box& gt) {
    BoxOffsets o;
    o.dx = (gt.cx() - anchor.cx()) / anchor.width();
    o.dy = (gt.cy() - anchor.cy()) / anchor.height();
    o.dw = std::log(gt.width() / anchor.width());
    o.dh = std::log(gt.height() / anchor.height());
    return o;
}

Box decode_box(const Box& anchor, const BoxOffsets& o) {
    if (!std::isfinite(o.dx) || !std::isfinite(o.dy) || !std::isfinite(o.dw) || !std::isfinite(o.dh)) {
        throw DataError("non-finite box offsets");
    }
    const double cx = o.dx * anchor.width() + anchor.cx();
    const double cy = o.dy * anchor.height() + anchor.cy();
    const double w = anchor.width() * std::exp(o.dw);
    const double h = anchor.height() * std::exp(o.dh);
    Box b;
    b.x_min = cx - 0.5 * w;
    b.x_max = cx + 0.5 * w;
    b.y_min = cy - 0.5 * h;
    b.y_max = cy + 0.5 * h;
    b.class_id = anchor.class_id;
    return b;
}

BoxTargets match_and_encode(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                            double pos_iou, double neg_iou) {
    const std::size_t n = anchors.size();
    BoxTargets t;
    t.state.assign(n, MatchState::kNegative);
    t.cls.assign(n, -1);
    t.offsets.assign(n, BoxOffsets{});

    if (gts.empty()) return t;

    std::vector<double> best_iou(n, 0.0);
    std::vector<int> best_gt(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(anchors[i], gts[g]);
            if (v > best_iou[i]) {
                best_iou[i] = v;
                best_gt[i] = static_cast<int>(g);
            }
        }
        if (best_iou[i] >= pos_iou) {
            t.state[i] = MatchState::kPositive;
        } else if (best_iou[i] < neg_iou) {
            t.state[i] = MatchState::kNegative;
        } else {
            t.state[i] = MatchState::kIgnore;
        }
    }

    // Forced matching: each gt claims its best anchor so no annotated box is
    // left without a positive. A later gt only displaces an earlier claim if
    // its IoU with that anchor is strictly higher.
    std::vector<double> claimed_iou(n, -1.0);
    for (std::size_t g = 0; g < gts.size(); ++g) {
        double best = 0.0;
        std::ptrdiff_t best_anchor = -1;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = iou(anchors[i], gts[g]);
            if (v > best) {
                best = v;
                best_anchor = static_cast<std::ptrdiff_t>(i);
            }
        }
        if (best_anchor < 0) continue;  // gt overlaps nothing
        const auto i = static_cast<std::size_t>(best_anchor);
        if (t.state[i] == MatchState::kPositive && claimed_iou[i] < 0.0) {
            // threshold-matched; keep its own argmax gt
            continue;
        }
        if (best > claimed_iou[i]) {
            t.state[i] = MatchState::kPositive;
            best_gt[i] = static_cast<int>(g);
            claimed_iou[i] = best;
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (t.state[i] != MatchState::kPositive) continue;
        const Box& g = gts[static_cast<std::size_t>(best_gt[i])];
        t.cls[i] = g.class_id - 1;
        t.offsets[i] = encode_box(anchors[i], g);
        ++t.num_positive;
    }
    return t;
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                             double iou_threshold, std::size_t max_keep) {
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::size_t> keep;
    for (std::size_t idx : order) {
        bool ok = true;
        for (std::size_t k : keep) {
            if (iou(boxes[idx], boxes[k]) > iou_threshold) {
                ok = false;
                break;
            }
        }
        if (ok) {
            keep.push_back(idx);
            if (keep.size() >= max_keep) break;
        }
    }
    return keep;
}

}  // namespace msdn
