#pragma once

#include "msdn/layers.hpp"
#include "msdn/tensor.hpp"

namespace msdn {

// Channel squeeze / spatial excitation. The squeeze is a bias-less 1x1
// convolution collapsing C channels to one; its sigmoid is a per-pixel
// attention map multiplied into every channel of the recalibrated input.

template <class T>
struct SseWeights {
    Tensor<T> w_sq;  // [1, C, 1, 1]

    SseWeights() = default;

    // Zero init: the attention map starts at 0.5 everywhere, a uniform
    // pass-through at half scale.
    explicit SseWeights(std::int64_t channels) { w_sq = Tensor<T>::zeros({1, channels, 1, 1}); }

    std::int64_t channels() const { return w_sq.dim(1); }
};

// Attention map sigma(w_sq * u) with shape [N,1,H,W].
template <class T>
Tensor<T> sse_attention(Tape<T>& tape, const Tensor<T>& u, const SseWeights<T>& w) {
    if (u.rank() != 4 || u.dim(1) != w.channels()) {
        throw DimensionError("sse squeeze expects [N," + std::to_string(w.channels()) + ",H,W], got " +
                             shape_str(u.shape()));
    }
    return sigmoid(tape, conv2d(tape, u, w.w_sq, static_cast<const Tensor<T>*>(nullptr), 1, 0, 1));
}

// Unary form: u is squeezed and recalibrates itself.
template <class T>
Tensor<T> sse_unary(Tape<T>& tape, const Tensor<T>& u, const SseWeights<T>& w) {
    return mul(tape, u, sse_attention(tape, u, w));
}

// Binary form: u2 is squeezed and recalibrates u1.
template <class T>
Tensor<T> sse_binary(Tape<T>& tape, const Tensor<T>& u1, const Tensor<T>& u2, const SseWeights<T>& w) {
    if (u1.rank() != 4 || u2.rank() != 4 || u1.dim(0) != u2.dim(0) || u1.dim(2) != u2.dim(2) ||
        u1.dim(3) != u2.dim(3)) {
        throw DimensionError("sse_binary needs matching N,H,W: " + shape_str(u1.shape()) + " vs " +
                             shape_str(u2.shape()));
    }
    return mul(tape, u1, sse_attention(tape, u2, w));
}

// Spatial squeeze / channel excitation: global average pool, a bottleneck
// gate with reduction ratio r, and per-channel rescaling.
template <class T>
struct CseWeights {
    Tensor<T> w1;  // [C/r, C]
    Tensor<T> w2;  // [C, C/r]
    std::int64_t r = 2;

    CseWeights() = default;

    CseWeights(std::int64_t channels, std::int64_t reduction, std::uint64_t seed) : r(reduction) {
        if (reduction < 1 || channels % reduction != 0) {
            throw ConfigError("cse reduction " + std::to_string(reduction) + " must divide channels " +
                              std::to_string(channels));
        }
        Rng rng(seed);
        const std::int64_t mid = channels / reduction;
        w1 = Tensor<T>::randn({mid, channels}, rng, T(0), static_cast<T>(std::sqrt(2.0 / static_cast<double>(channels))));
        w2 = Tensor<T>::randn({channels, mid}, rng, T(0), static_cast<T>(std::sqrt(2.0 / static_cast<double>(mid))));
    }
};

template <class T>
Tensor<T> cse(Tape<T>& tape, const Tensor<T>& u, const CseWeights<T>& w) {
    if (u.rank() != 4 || u.dim(1) != w.w1.dim(1)) {
        throw DimensionError("cse expects [N," + std::to_string(w.w1.dim(1)) + ",H,W], got " +
                             shape_str(u.shape()));
    }
    auto z = global_avg_pool(tape, u);                       // [N, C]
    auto gate = sigmoid(tape, linear(tape, relu(tape, linear(tape, z, w.w1)), w.w2));
    auto gate4 = reshape(tape, gate, {u.dim(0), u.dim(1), 1, 1});
    return mul(tape, u, gate4);
}

}  // namespace msdn
