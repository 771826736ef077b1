#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "msdn/anchors.hpp"
#include "msdn/boxes.hpp"
#include "msdn/errors.hpp"
#include "msdn/tensor.hpp"

namespace msdn {

// ---------------------------------------------------------------------------
// Dice loss (squared-denominator form, smoothing s), averaged over
// foreground classes; background is excluded.
//   L = 1 - mean_c (2 sum p_c g_c + s) / (sum p_c^2 + sum g_c^2 + s)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> dice_loss(Tape<T>& tape, const Tensor<T>& probs, const std::vector<std::int32_t>& labels,
                    T smooth = static_cast<T>(1e-5)) {
    if (probs.rank() != 4) {
        throw DimensionError("dice_loss expects probs [N,C+1,H,W], got " + shape_str(probs.shape()));
    }
    const std::int64_t n = probs.dim(0), ch = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
    const int classes = static_cast<int>(ch) - 1;
    if (static_cast<std::int64_t>(labels.size()) != n * hw) {
        throw DimensionError("dice_loss label map size " + std::to_string(labels.size()) +
                             " does not match probs " + shape_str(probs.shape()));
    }
    for (auto l : labels) {
        if (l < 0 || l > classes) {
            throw DataError("mask label " + std::to_string(l) + " outside 0.." + std::to_string(classes));
        }
    }

    Tensor<T> acc = Tensor<T>::scalar(T(0));
    for (int c = 1; c <= classes; ++c) {
        auto p = slice_channels(tape, probs, c, c + 1);  // [N,1,H,W]
        Tensor<T> g = Tensor<T>::zeros(p.shape());
        T gsq = T(0);
        for (std::int64_t i = 0; i < n * hw; ++i) {
            if (labels[static_cast<std::size_t>(i)] == c) {
                g.data()[i] = T(1);
                gsq += T(1);
            }
        }
        auto inter = sum(tape, mul(tape, p, g));
        auto psq = sum(tape, mul(tape, p, p));
        auto num = add_scalar(tape, scale(tape, inter, T(2)), smooth);
        auto den = add_scalar(tape, psq, gsq + smooth);
        acc = add(tape, acc, div(tape, num, den));
    }
    return add_scalar(tape, scale(tape, acc, T(-1) / static_cast<T>(classes)), T(1));
}

// ---------------------------------------------------------------------------
// Focal loss over one detection stage.
//
// cls_probs: [N, C*A, h, w] with channel a*C + c holding the class-c
// probability of per-cell anchor a; the flattened anchor list of the stage
// is indexed (y*w + x)*A + a, matching generate_stage_anchors. Ignore-state
// anchors contribute nothing. The sum is normalized by num_pos (already
// clamped to >= 1 by the caller across all stages of the batch).
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> focal_loss(Tape<T>& tape, const Tensor<T>& cls_probs, const std::vector<BoxTargets>& per_sample,
                     int classes, T alpha, T gamma, std::int64_t num_pos) {
    if (cls_probs.rank() != 4) {
        throw DimensionError("focal_loss expects cls probs [N,C*A,h,w], got " + shape_str(cls_probs.shape()));
    }
    const std::int64_t n = cls_probs.dim(0), ca = cls_probs.dim(1), h = cls_probs.dim(2), w = cls_probs.dim(3);
    const std::int64_t a = ca / classes;
    if (ca != a * classes) throw DimensionError("cls channel count not divisible by classes");
    if (static_cast<std::int64_t>(per_sample.size()) != n) {
        throw DimensionError("focal_loss needs one BoxTargets per sample");
    }

    // Constant masks: t in {0,1} per (anchor, class) entry, and weight
    // alpha_t on included entries, 0 on ignore entries.
    Tensor<T> target = Tensor<T>::zeros(cls_probs.shape());
    Tensor<T> weight = Tensor<T>::zeros(cls_probs.shape());
    for (std::int64_t in = 0; in < n; ++in) {
        const auto& bt = per_sample[static_cast<std::size_t>(in)];
        if (static_cast<std::int64_t>(bt.state.size()) != h * w * a) {
            throw DimensionError("BoxTargets size does not match stage anchor count");
        }
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                for (std::int64_t ai = 0; ai < a; ++ai) {
                    const auto anchor_idx = static_cast<std::size_t>((y * w + x) * a + ai);
                    if (bt.state[anchor_idx] == MatchState::kIgnore) continue;
                    for (int c = 0; c < classes; ++c) {
                        const std::int64_t ch = ai * classes + c;
                        const std::int64_t i = ((in * ca + ch) * h + y) * w + x;
                        const bool is_target = bt.state[anchor_idx] == MatchState::kPositive && bt.cls[anchor_idx] == c;
                        target.data()[i] = is_target ? T(1) : T(0);
                        weight.data()[i] = is_target ? alpha : (T(1) - alpha);
                    }
                }
            }
        }
    }

    // p_t = t*p + (1-t)*(1-p) = (2t-1)*p + (1-t)
    auto coeff = add_scalar(tape, scale(tape, target, T(2)), T(-1));
    auto offset = sub(tape, Tensor<T>::ones(target.shape()), target);
    auto p_t = add(tape, mul(tape, coeff, cls_probs), offset);
    auto focal = mul(tape, pow_scalar(tape, sub(tape, Tensor<T>::ones(p_t.shape()), p_t), gamma),
                     vlog(tape, clamp_min(tape, p_t, static_cast<T>(1e-7))));
    auto weighted = mul(tape, weight, focal);
    return scale(tape, sum(tape, weighted), T(-1) / static_cast<T>(num_pos));
}

// ---------------------------------------------------------------------------
// Smooth-L1 box regression over one stage. box_preds: [N, 4*A, h, w] with
// channel a*4 + k holding coordinate k of per-cell anchor a. Only positive
// anchors contribute; the sum is normalized by num_pos.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> smooth_l1(Tape<T>& tape, const Tensor<T>& box_preds, const std::vector<BoxTargets>& per_sample,
                    T beta, std::int64_t num_pos) {
    if (beta <= T(0)) throw ConfigError("smooth_l1 beta must be > 0");
    if (box_preds.rank() != 4) {
        throw DimensionError("smooth_l1 expects box preds [N,4*A,h,w], got " + shape_str(box_preds.shape()));
    }
    const std::int64_t n = box_preds.dim(0), c4 = box_preds.dim(1), h = box_preds.dim(2), w = box_preds.dim(3);
    const std::int64_t a = c4 / 4;
    if (c4 != 4 * a) throw DimensionError("box channel count not divisible by 4");
    if (static_cast<std::int64_t>(per_sample.size()) != n) {
        throw DimensionError("smooth_l1 needs one BoxTargets per sample");
    }

    Tensor<T> out = Tensor<T>::scalar(T(0));
    T acc = T(0);
    const T* pp = box_preds.data();
    // forward value plus a saved list of (flat index, residual) for backward
    auto hits = std::make_shared<std::vector<std::pair<std::int64_t, T>>>();
    for (std::int64_t in = 0; in < n; ++in) {
        const auto& bt = per_sample[static_cast<std::size_t>(in)];
        if (static_cast<std::int64_t>(bt.state.size()) != h * w * a) {
            throw DimensionError("BoxTargets size does not match stage anchor count");
        }
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                for (std::int64_t ai = 0; ai < a; ++ai) {
                    const auto anchor_idx = static_cast<std::size_t>((y * w + x) * a + ai);
                    if (bt.state[anchor_idx] != MatchState::kPositive) continue;
                    const auto& of = bt.offsets[anchor_idx];
                    const T tgt[4] = {static_cast<T>(of.dx), static_cast<T>(of.dy), static_cast<T>(of.dw),
                                      static_cast<T>(of.dh)};
                    for (int k = 0; k < 4; ++k) {
                        const std::int64_t i = ((in * c4 + ai * 4 + k) * h + y) * w + x;
                        const T d = pp[i] - tgt[k];
                        const T ad = std::abs(d);
                        acc += ad < beta ? T(0.5) * d * d / beta : ad - T(0.5) * beta;
                        hits->emplace_back(i, d);
                    }
                }
            }
        }
    }
    out.data()[0] = acc / static_cast<T>(num_pos);
    if (detail::track(tape, box_preds)) {
        out.mark_output_of(tape);
        tape.record("smooth_l1", [box_preds, out, hits, beta, num_pos]() {
            const T g = out.grad()[0] / static_cast<T>(num_pos);
            T* gx = box_preds.grad();
            for (const auto& [i, d] : *hits) {
                const T dd = std::abs(d) < beta ? d / beta : (d > T(0) ? T(1) : T(-1));
                gx[i] += dd * g;
            }
        });
    }
    return out;
}

// Unweighted total: seg + cls + box.
template <class T>
Tensor<T> total_loss(Tape<T>& tape, const Tensor<T>& seg_loss, const Tensor<T>& det_cls_loss,
                     const Tensor<T>& det_box_loss) {
    return add(tape, seg_loss, add(tape, det_cls_loss, det_box_loss));
}

// ---------------------------------------------------------------------------
// Detection loss over the 4 decoder stages: joint anchor matching across the
// concatenated pyramid, focal + smooth-L1 per stage, summed over stages with
// a shared positive-count normalizer.
// ---------------------------------------------------------------------------

template <class T>
struct DetStageOut {
    Tensor<T> cls;  // [N, C*A, h, w], sigmoid probabilities
    Tensor<T> box;  // [N, 4*A, h, w]
};

template <class T>
struct DetectionLossParams {
    T focal_alpha = static_cast<T>(0.25);
    T focal_gamma = static_cast<T>(2.0);
    T l1_beta = static_cast<T>(1.0);
};

template <class T>
struct DetectionLoss {
    Tensor<T> cls;
    Tensor<T> box;
};

template <class T>
DetectionLoss<T> detection_loss(Tape<T>& tape, const std::array<DetStageOut<T>, 4>& stages,
                                const std::vector<std::vector<Box>>& gt_boxes,
                                const std::vector<std::vector<Box>>& stage_anchors, int classes,
                                const DetectionLossParams<T>& params = {}) {
    const std::int64_t n = stages[0].cls.dim(0);

    // one joint matching over all pyramid anchors per sample
    std::vector<Box> all_anchors;
    for (const auto& sa : stage_anchors) all_anchors.insert(all_anchors.end(), sa.begin(), sa.end());

    std::vector<BoxTargets> joint;
    joint.reserve(static_cast<std::size_t>(n));
    std::int64_t num_pos = 0;
    for (std::int64_t in = 0; in < n; ++in) {
        joint.push_back(match_and_encode(all_anchors, gt_boxes[static_cast<std::size_t>(in)]));
        num_pos += joint.back().num_positive;
    }
    num_pos = std::max<std::int64_t>(num_pos, 1);

    // split joint targets back into per-stage views
    std::array<std::vector<BoxTargets>, 4> per_stage;
    for (std::int64_t in = 0; in < n; ++in) {
        std::size_t offset = 0;
        for (std::size_t s = 0; s < 4; ++s) {
            const std::size_t count = stage_anchors[s].size();
            BoxTargets bt;
            bt.state.assign(joint[static_cast<std::size_t>(in)].state.begin() + static_cast<std::ptrdiff_t>(offset),
                            joint[static_cast<std::size_t>(in)].state.begin() + static_cast<std::ptrdiff_t>(offset + count));
            bt.cls.assign(joint[static_cast<std::size_t>(in)].cls.begin() + static_cast<std::ptrdiff_t>(offset),
                          joint[static_cast<std::size_t>(in)].cls.begin() + static_cast<std::ptrdiff_t>(offset + count));
            bt.offsets.assign(joint[static_cast<std::size_t>(in)].offsets.begin() + static_cast<std::ptrdiff_t>(offset),
                              joint[static_cast<std::size_t>(in)].offsets.begin() + static_cast<std::ptrdiff_t>(offset + count));
            for (const auto st : bt.state) bt.num_positive += st == MatchState::kPositive;
            per_stage[s].push_back(std::move(bt));
            offset += count;
        }
    }

    DetectionLoss<T> out;
    out.cls = Tensor<T>::scalar(T(0));
    out.box = Tensor<T>::scalar(T(0));
    for (std::size_t s = 0; s < 4; ++s) {
        out.cls = add(tape, out.cls,
                      focal_loss(tape, stages[s].cls, per_stage[s], classes, params.focal_alpha,
                                 params.focal_gamma, num_pos));
        out.box = add(tape, out.box, smooth_l1(tape, stages[s].box, per_stage[s], params.l1_beta, num_pos));
    }
    return out;
}

}  // namespace msdn
