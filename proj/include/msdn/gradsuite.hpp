#pragma once

#include <string>
#include <utility>
#include <vector>

#include "msdn/gradcheck.hpp"
#include "msdn/layers.hpp"
#include "msdn/losses.hpp"
#include "msdn/se.hpp"

namespace msdn {

struct GradSuiteEntry {
    std::string op;
    double max_err = 0.0;
};

// Finite-difference sweep over every differentiable op: `instances` random
// shapes/seeds per op, double precision, central differences with eps=1e-5.
// Inputs are kept away from the non-differentiable points of relu, max_pool
// and smooth_l1 so the comparison is meaningful.
inline std::vector<GradSuiteEntry> run_gradient_suite(int instances = 20, double eps = 1e-5) {
    std::vector<GradSuiteEntry> results;

    auto record = [&](const std::string& op, double err) {
        for (auto& r : results) {
            if (r.op == op) {
                r.max_err = std::max(r.max_err, err);
                return;
            }
        }
        results.push_back({op, err});
    };

    auto rand_shape4 = [](Rng& rng, std::int64_t max_c, std::int64_t max_hw) {
        return Shape{1 + rng.uniform_int(2), 1 + rng.uniform_int(max_c), 2 + rng.uniform_int(max_hw),
                     2 + rng.uniform_int(max_hw)};
    };

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9000, "gradsuite", static_cast<std::uint64_t>(k)));
        const Shape shape = rand_shape4(rng, 3, 4);
        auto a = Tensor<double>::randn(shape, rng);
        auto b = Tensor<double>::randn(shape, rng);
        auto probe = Tensor<double>::randn(shape, rng);
        auto reduce = [&](Tape<double>& t, Tensor<double> y) { return sum(t, mul(t, y, probe)); };

        record("elementwise_add", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return reduce(t, add(t, v, b));
               }, a, eps));
        record("elementwise_sub", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return reduce(t, sub(t, b, v));
               }, a, eps));
        record("elementwise_hadamard", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return reduce(t, mul(t, v, b));
               }, a, eps));
        record("elementwise_scale", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return reduce(t, scale(t, v, 1.37));
               }, a, eps));

        // broadcast route: per-pixel map against a full feature block
        Shape bshape = shape;
        bshape[1] = 1;
        auto bb = Tensor<double>::randn(bshape, rng);
        record("elementwise_hadamard", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return reduce(t, mul(t, v, bb));
               }, a, eps));

        record("sigmoid", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return reduce(t, sigmoid(t, v));
               }, a, eps));

        auto off_kink = a.clone();
        for (std::int64_t i = 0; i < off_kink.numel(); ++i) {
            if (std::abs(off_kink.data()[i]) < 0.05) off_kink.data()[i] += 0.25;
        }
        record("relu", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return reduce(t, relu(t, v));
               }, off_kink, eps));

        record("channel_softmax", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return reduce(t, channel_softmax(t, v));
               }, a, eps));
    }

    // convolution with the schedule's dilation values
    for (std::int64_t dil : {1, 2, 4}) {
        const std::string op = "conv2d_d" + std::to_string(dil);
        for (int k = 0; k < instances; ++k) {
            Rng rng(derive_seed(9100 + static_cast<std::uint64_t>(dil), "conv", static_cast<std::uint64_t>(k)));
            const std::int64_t ci = 1 + rng.uniform_int(2);
            const std::int64_t co = 1 + rng.uniform_int(2);
            const std::int64_t hw = 2 * dil + 2 + rng.uniform_int(3);
            auto x = Tensor<double>::randn({1, ci, hw, hw}, rng);
            auto w = Tensor<double>::randn({co, ci, 3, 3}, rng);
            auto bias = Tensor<double>::randn({co}, rng);
            auto probe = Tensor<double>::randn({1, co, hw, hw}, rng);
            auto run = [&](Tape<double>& t, const Tensor<double>& xx, const Tensor<double>& ww,
                           const Tensor<double>& bv) {
                return sum(t, mul(t, conv2d<double>(t, xx, ww, &bv, 1, dil, dil), probe));
            };
            record(op, gradcheck([&](Tape<double>& t, const Tensor<double>& v) { return run(t, v, w, bias); },
                                 x, eps));
            record(op, gradcheck([&](Tape<double>& t, const Tensor<double>& v) { return run(t, x, v, bias); },
                                 w, eps));
            record(op, gradcheck([&](Tape<double>& t, const Tensor<double>& v) { return run(t, x, w, v); },
                                 bias, eps));
        }
    }

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9200, "bn", static_cast<std::uint64_t>(k)));
        const std::int64_t c = 1 + rng.uniform_int(3);
        auto x = Tensor<double>::randn({2, c, 3, 3}, rng);
        auto probe = Tensor<double>::randn({2, c, 3, 3}, rng);
        record("batch_norm", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   BatchNorm2d<double> bn(c);
                   return sum(t, mul(t, bn.forward(t, v, Mode::kTrain), probe));
               }, x, eps));
    }

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9300, "pool", static_cast<std::uint64_t>(k)));
        auto x = Tensor<double>::randn({1, 1 + rng.uniform_int(2), 4, 4}, rng);
        for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] += static_cast<double>(i) * 0.037;
        auto probe = Tensor<double>::randn({x.dim(0), x.dim(1), 2, 2}, rng);
        record("max_pool", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return sum(t, mul(t, max_pool_2x2(t, v), probe));
               }, x, eps));
    }

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9400, "ups", static_cast<std::uint64_t>(k)));
        const std::int64_t ci = 1 + rng.uniform_int(2);
        const std::int64_t co = 1 + rng.uniform_int(2);
        auto x = Tensor<double>::randn({1, ci, 2, 2}, rng);
        auto w = Tensor<double>::randn({ci, co, 2, 2}, rng);
        auto bias = Tensor<double>::randn({co}, rng);
        auto probe = Tensor<double>::randn({1, co, 4, 4}, rng);
        auto run = [&](Tape<double>& t, const Tensor<double>& xx, const Tensor<double>& ww,
                       const Tensor<double>& bv) {
            return sum(t, mul(t, conv_transpose_2x2<double>(t, xx, ww, &bv), probe));
        };
        record("upsample", gradcheck([&](Tape<double>& t, const Tensor<double>& v) { return run(t, v, w, bias); },
                                     x, eps));
        record("upsample", gradcheck([&](Tape<double>& t, const Tensor<double>& v) { return run(t, x, v, bias); },
                                     w, eps));
    }

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9500, "sse", static_cast<std::uint64_t>(k)));
        const std::int64_t c = 1 + rng.uniform_int(3);
        auto u1 = Tensor<double>::randn({1, 2, 3, 3}, rng);
        auto u2 = Tensor<double>::randn({1, c, 3, 3}, rng);
        SseWeights<double> w(c);
        for (std::int64_t i = 0; i < c; ++i) w.w_sq.data()[i] = rng.normal();
        SseWeights<double> wu(2);
        for (std::int64_t i = 0; i < 2; ++i) wu.w_sq.data()[i] = rng.normal();

        record("sse_unary", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return sum(t, sse_unary(t, v, wu));
               }, u1, eps));
        record("sse_binary", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return sum(t, sse_binary(t, v, u2, w));
               }, u1, eps));
        record("sse_binary", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return sum(t, sse_binary(t, u1, v, w));
               }, u2, eps));
        auto wflat = Tensor<double>::zeros({c});
        for (std::int64_t i = 0; i < c; ++i) wflat.data()[i] = w.w_sq.data()[i];
        record("sse_binary", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   SseWeights<double> wv(c);
                   wv.w_sq = reshape(t, v, {1, c, 1, 1});
                   return sum(t, sse_binary(t, u1, u2, wv));
               }, wflat, eps));
    }

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9600, "cse", static_cast<std::uint64_t>(k)));
        auto u = Tensor<double>::randn({1, 4, 3, 3}, rng);
        CseWeights<double> w(4, 2, derive_seed(9601, "csew", static_cast<std::uint64_t>(k)));
        record("cse", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return sum(t, cse(t, v, w));
               }, u, eps));
    }

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9700, "dice", static_cast<std::uint64_t>(k)));
        const int classes = 1 + static_cast<int>(rng.uniform_int(2));
        auto logits = Tensor<double>::randn({1, classes + 1, 4, 4}, rng);
        std::vector<std::int32_t> labels(16);
        for (auto& l : labels) l = static_cast<std::int32_t>(rng.uniform_int(classes + 1));
        record("dice_loss", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return dice_loss(t, channel_softmax(t, v), labels, 1e-5);
               }, logits, eps));
    }

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9800, "focal", static_cast<std::uint64_t>(k)));
        auto logits = Tensor<double>::randn({1, 9, 2, 2}, rng);
        BoxTargets bt;
        bt.state.assign(36, MatchState::kNegative);
        bt.cls.assign(36, -1);
        bt.offsets.assign(36, BoxOffsets{});
        const auto pos = static_cast<std::size_t>(rng.uniform_int(36));
        bt.state[pos] = MatchState::kPositive;
        bt.cls[pos] = 0;
        bt.state[(pos + 5) % 36] = MatchState::kIgnore;
        bt.num_positive = 1;
        record("focal_loss", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return focal_loss(t, sigmoid(t, v), std::vector<BoxTargets>{bt}, 1, 0.25, 2.0, 1);
               }, logits, eps));
    }

    for (int k = 0; k < instances; ++k) {
        Rng rng(derive_seed(9900, "sl1", static_cast<std::uint64_t>(k)));
        auto preds = Tensor<double>::zeros({1, 36, 1, 1});
        for (std::int64_t i = 0; i < preds.numel(); ++i) {
            double d = rng.uniform(-3, 3);
            if (std::abs(std::abs(d) - 1.0) < 0.05) d += 0.2;
            preds.data()[i] = d;
        }
        BoxTargets bt;
        bt.state.assign(9, MatchState::kNegative);
        bt.cls.assign(9, -1);
        bt.offsets.assign(9, BoxOffsets{});
        bt.state[static_cast<std::size_t>(rng.uniform_int(9))] = MatchState::kPositive;
        bt.num_positive = 1;
        record("smooth_l1", gradcheck([&](Tape<double>& t, const Tensor<double>& v) {
                   return smooth_l1(t, v, std::vector<BoxTargets>{bt}, 1.0, 1);
               }, preds, eps));
    }

    return results;
}

}  // namespace msdn
