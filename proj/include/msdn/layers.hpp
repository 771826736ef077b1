#pragma once

#include <cstdint>
#include <vector>

#include "msdn/errors.hpp"
#include "msdn/parallel.hpp"
#include "msdn/rng.hpp"
#include "msdn/tensor.hpp"

namespace msdn {

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with stride / zero padding / dilation.
// ---------------------------------------------------------------------------

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad,
                                 std::int64_t dilation) {
    return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

namespace detail {

// Zero-padded copy of one image [C,H,W] -> [C,H+2p,W+2p].
template <class T>
void pad_image(const T* src, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t pad,
               std::vector<T>& dst) {
    const std::int64_t hp = h + 2 * pad, wp = w + 2 * pad;
    dst.assign(static_cast<std::size_t>(c * hp * wp), T(0));
    for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t y = 0; y < h; ++y) {
            const T* s = src + (ci * h + y) * w;
            T* d = dst.data() + (ci * hp + y + pad) * wp + pad;
            std::copy(s, s + w, d);
        }
    }
}

}  // namespace detail

// x: [N,C_in,H,W], w: [C_out,C_in,kH,kW], bias: [C_out] or null.
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                 std::int64_t stride, std::int64_t pad, std::int64_t dilation) {
    if (x.rank() != 4 || w.rank() != 4) {
        throw DimensionError("conv2d expects x [N,C,H,W] and w [O,C,kH,kW], got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(1)) {
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                             shape_str(w.shape()));
    }
    if (stride < 1 || pad < 0 || dilation < 1) throw ConfigError("conv2d needs stride>=1, pad>=0, dilation>=1");
    const std::int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (bias && (bias->rank() != 1 || bias->dim(0) != c_out)) {
        throw DimensionError("conv2d bias must be [C_out], got " + shape_str(bias->shape()));
    }
    const std::int64_t span_h = dilation * (kh - 1) + 1;
    const std::int64_t span_w = dilation * (kw - 1) + 1;
    if (h + 2 * pad < span_h || wd + 2 * pad < span_w) {
        throw DimensionError("dilated kernel span exceeds padded input: input " + shape_str(x.shape()) +
                             ", kernel " + shape_str(w.shape()) + ", pad " + std::to_string(pad) +
                             ", dilation " + std::to_string(dilation));
    }
    const std::int64_t ho = conv_out_dim(h, kh, stride, pad, dilation);
    const std::int64_t wo = conv_out_dim(wd, kw, stride, pad, dilation);
    const std::int64_t hp = h + 2 * pad, wp = wd + 2 * pad;

    Tensor<T> out = Tensor<T>::zeros({n, c_out, ho, wo});
    const T* px = x.data();
    const T* pw = w.data();
    const T* pb = bias ? bias->data() : nullptr;
    T* po = out.data();

    // pad the whole batch once, then fan out over (image, out-channel) pairs
    std::vector<T> xpad_all;
    const T* xbase = px;
    std::int64_t xn_stride = c_in * h * wd;
    if (pad > 0) {
        xpad_all.resize(static_cast<std::size_t>(n * c_in * hp * wp));
        parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
            std::vector<T> one;
            for (std::int64_t in = lo; in < hi; ++in) {
                detail::pad_image(px + in * c_in * h * wd, c_in, h, wd, pad, one);
                std::copy(one.begin(), one.end(), xpad_all.begin() + static_cast<std::ptrdiff_t>(in * c_in * hp * wp));
            }
        });
        xbase = xpad_all.data();
        xn_stride = c_in * hp * wp;
    }

    parallel_for(n * c_out, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t job = lo; job < hi; ++job) {
            const std::int64_t in = job / c_out;
            const std::int64_t co = job % c_out;
            const T* xn = xbase + in * xn_stride;
            T* on = po + (in * c_out + co) * ho * wo;
            const T bv = pb ? pb[co] : T(0);
            std::fill(on, on + ho * wo, bv);
            const T* wc = pw + co * c_in * kh * kw;
            for (std::int64_t ci = 0; ci < c_in; ++ci) {
                const T* xc = xn + ci * hp * wp;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const T wval = wc[ci * kh * kw + ky * kw + kx];
                        for (std::int64_t y = 0; y < ho; ++y) {
                            const T* xrow = xc + (y * stride + ky * dilation) * wp + kx * dilation;
                            T* orow = on + y * wo;
                            if (stride == 1) {
                                for (std::int64_t xo = 0; xo < wo; ++xo) orow[xo] += wval * xrow[xo];
                            } else {
                                for (std::int64_t xo = 0; xo < wo; ++xo) orow[xo] += wval * xrow[xo * stride];
                            }
                        }
                    }
                }
            }
        }
    });

    const bool need_wg = w.requires_grad() || (bias && bias->requires_grad());
    if (detail::track(tape, x, w) || (tape.recording() && need_wg)) {
        out.mark_output_of(tape);
        Tensor<T> b = bias ? *bias : Tensor<T>();
        tape.record("conv2d", [x, w, b, out, n, c_in, h, wd, c_out, kh, kw, stride, pad, dilation, ho, wo, hp,
                               wp]() {
            const T* go = out.grad();
            const T* px2 = x.data();
            const T* pw2 = w.data();

            if (b.defined() && b.grad()) {
                T* gb = b.grad();
                for (std::int64_t in = 0; in < n; ++in) {
                    for (std::int64_t co = 0; co < c_out; ++co) {
                        const T* gn = go + (in * c_out + co) * ho * wo;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < ho * wo; ++i) acc += gn[i];
                        gb[co] += acc;
                    }
                }
            }

            std::vector<T> xpad_all;
            const T* xbase = px2;
            std::int64_t xn_stride = c_in * h * wd;
            if (pad > 0 && (w.grad() || x.grad())) {
                xpad_all.resize(static_cast<std::size_t>(n * c_in * hp * wp));
                parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
                    std::vector<T> one;
                    for (std::int64_t in = lo; in < hi; ++in) {
                        detail::pad_image(px2 + in * c_in * h * wd, c_in, h, wd, pad, one);
                        std::copy(one.begin(), one.end(),
                                  xpad_all.begin() + static_cast<std::ptrdiff_t>(in * c_in * hp * wp));
                    }
                });
                xbase = xpad_all.data();
                xn_stride = c_in * hp * wp;
            }

            if (w.grad()) {
                T* gw = w.grad();
                parallel_for(c_out, [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t co = lo; co < hi; ++co) {
                        for (std::int64_t in = 0; in < n; ++in) {
                            const T* gn = go + (in * c_out + co) * ho * wo;
                            const T* xn = xbase + in * xn_stride;
                            for (std::int64_t ci = 0; ci < c_in; ++ci) {
                                const T* xc = xn + ci * hp * wp;
                                for (std::int64_t ky = 0; ky < kh; ++ky) {
                                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                                        T acc = T(0);
                                        for (std::int64_t y = 0; y < ho; ++y) {
                                            const T* xrow = xc + (y * stride + ky * dilation) * wp + kx * dilation;
                                            const T* grow = gn + y * wo;
                                            if (stride == 1) {
                                                for (std::int64_t xo = 0; xo < wo; ++xo) acc += xrow[xo] * grow[xo];
                                            } else {
                                                for (std::int64_t xo = 0; xo < wo; ++xo)
                                                    acc += xrow[xo * stride] * grow[xo];
                                            }
                                        }
                                        gw[((co * c_in + ci) * kh + ky) * kw + kx] += acc;
                                    }
                                }
                            }
                        }
                    }
                });
            }

            if (x.grad()) {
                T* gx = x.grad();
                parallel_for(n * c_in, [&](std::int64_t lo, std::int64_t hi) {
                    std::vector<T> gplane;
                    for (std::int64_t job = lo; job < hi; ++job) {
                        const std::int64_t in = job / c_in;
                        const std::int64_t ci = job % c_in;
                        gplane.assign(static_cast<std::size_t>(hp * wp), T(0));
                        for (std::int64_t co = 0; co < c_out; ++co) {
                            const T* gn = go + (in * c_out + co) * ho * wo;
                            const T* wc = pw2 + co * c_in * kh * kw;
                            for (std::int64_t ky = 0; ky < kh; ++ky) {
                                for (std::int64_t kx = 0; kx < kw; ++kx) {
                                    const T wval = wc[ci * kh * kw + ky * kw + kx];
                                    for (std::int64_t y = 0; y < ho; ++y) {
                                        T* grow = gplane.data() + (y * stride + ky * dilation) * wp + kx * dilation;
                                        const T* gorow = gn + y * wo;
                                        if (stride == 1) {
                                            for (std::int64_t xo = 0; xo < wo; ++xo) grow[xo] += wval * gorow[xo];
                                        } else {
                                            for (std::int64_t xo = 0; xo < wo; ++xo)
                                                grow[xo * stride] += wval * gorow[xo];
                                        }
                                    }
                                }
                            }
                        }
                        T* gxc = gx + (in * c_in + ci) * h * wd;
                        for (std::int64_t y = 0; y < h; ++y) {
                            const T* s = gplane.data() + (y + pad) * wp + pad;
                            for (std::int64_t xw = 0; xw < wd; ++xw) gxc[y * wd + xw] += s[xw];
                        }
                    }
                });
            }
        });
    }
    return out;
}

// Trainable convolution layer; 3x3 stage convs are configured with
// pad == dilation so output spatial size equals input size.
template <class T>
struct ConvLayer {
    Tensor<T> weight;  // [C_out, C_in, k, k]
    Tensor<T> bias;    // [C_out]; undefined when bias-less
    std::int64_t stride = 1;
    std::int64_t pad = 0;
    std::int64_t dilation = 1;

    ConvLayer() = default;

    // init_std 0 selects He initialization sqrt(2 / fan_in).
    ConvLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t stride_, std::int64_t pad_,
              std::int64_t dilation_, std::uint64_t seed, double init_std = 0.0)
        : stride(stride_), pad(pad_), dilation(dilation_) {
        Rng rng(seed);
        const T std_dev = init_std > 0.0 ? static_cast<T>(init_std)
                                         : static_cast<T>(std::sqrt(2.0 / static_cast<double>(c_in * k * k)));
        weight = Tensor<T>::randn({c_out, c_in, k, k}, rng, T(0), std_dev);
        bias = Tensor<T>::zeros({c_out});
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        return conv2d(tape, x, weight, bias.defined() ? &bias : nullptr, stride, pad, dilation);
    }
};

// ---------------------------------------------------------------------------
// Batch normalization over N,H,W per channel.
// ---------------------------------------------------------------------------

template <class T>
struct BatchNorm2d {
    Tensor<T> gamma, beta;              // trainable
    Tensor<T> running_mean, running_var;  // state
    T eps = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.1);

    BatchNorm2d() = default;

    explicit BatchNorm2d(std::int64_t channels) {
        gamma = Tensor<T>::ones({channels});
        beta = Tensor<T>::zeros({channels});
        running_mean = Tensor<T>::zeros({channels});
        running_var = Tensor<T>::ones({channels});
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
        if (x.rank() != 4 || x.dim(1) != gamma.dim(0)) {
            throw DimensionError("batch_norm expects [N," + std::to_string(gamma.dim(0)) + ",H,W], got " +
                                 shape_str(x.shape()));
        }
        const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::int64_t m = n * h * w;
        const std::int64_t hw = h * w;
        if (mode == Mode::kTrain && m < 2) {
            throw DataError("batch_norm train mode needs at least 2 values per channel, got " +
                            std::to_string(m));
        }

        std::vector<T> mu(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
        const T* px = x.data();
        if (mode == Mode::kTrain) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                T acc = T(0);
                for (std::int64_t in = 0; in < n; ++in) {
                    const T* p = px + (in * c + ci) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
                }
                mu[static_cast<std::size_t>(ci)] = acc / static_cast<T>(m);
            }
            for (std::int64_t ci = 0; ci < c; ++ci) {
                T acc = T(0);
                const T mc = mu[static_cast<std::size_t>(ci)];
                for (std::int64_t in = 0; in < n; ++in) {
                    const T* p = px + (in * c + ci) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const T d = p[i] - mc;
                        acc += d * d;
                    }
                }
                var[static_cast<std::size_t>(ci)] = acc / static_cast<T>(m);
            }
            // running <- (1 - momentum) * running + momentum * batch
            for (std::int64_t ci = 0; ci < c; ++ci) {
                running_mean.data()[ci] =
                    (T(1) - momentum) * running_mean.data()[ci] + momentum * mu[static_cast<std::size_t>(ci)];
                running_var.data()[ci] =
                    (T(1) - momentum) * running_var.data()[ci] + momentum * var[static_cast<std::size_t>(ci)];
            }
        } else {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                mu[static_cast<std::size_t>(ci)] = running_mean.data()[ci];
                var[static_cast<std::size_t>(ci)] = running_var.data()[ci];
            }
        }

        std::vector<T> invstd(static_cast<std::size_t>(c));
        for (std::int64_t ci = 0; ci < c; ++ci) {
            invstd[static_cast<std::size_t>(ci)] = T(1) / std::sqrt(var[static_cast<std::size_t>(ci)] + eps);
        }

        Tensor<T> out = Tensor<T>::zeros(x.shape());
        auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
        T* po = out.data();
        T* ph = xhat->data();
        for (std::int64_t in = 0; in < n; ++in) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T mc = mu[static_cast<std::size_t>(ci)];
                const T is = invstd[static_cast<std::size_t>(ci)];
                const T g = gamma.data()[ci];
                const T bt = beta.data()[ci];
                const std::int64_t base = (in * c + ci) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const T xn = (px[base + i] - mc) * is;
                    ph[base + i] = xn;
                    po[base + i] = xn * g + bt;
                }
            }
        }

        const bool need = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        if (tape.recording() && need) {
            out.mark_output_of(tape);
            Tensor<T> g = gamma;
            Tensor<T> bt = beta;
            Tensor<T> xc = x;
            const bool batch_stats = mode == Mode::kTrain;
            tape.record("batch_norm", [xc, g, bt, out, xhat, invstd, n, c, hw, batch_stats]() {
                const T* go = out.grad();
                const T* ph2 = xhat->data();
                const std::int64_t m = n * hw;

                std::vector<T> sum_dy(static_cast<std::size_t>(c), T(0));
                std::vector<T> sum_dy_xhat(static_cast<std::size_t>(c), T(0));
                for (std::int64_t in = 0; in < n; ++in) {
                    for (std::int64_t ci = 0; ci < c; ++ci) {
                        const std::int64_t base = (in * c + ci) * hw;
                        T s1 = T(0), s2 = T(0);
                        for (std::int64_t i = 0; i < hw; ++i) {
                            s1 += go[base + i];
                            s2 += go[base + i] * ph2[base + i];
                        }
                        sum_dy[static_cast<std::size_t>(ci)] += s1;
                        sum_dy_xhat[static_cast<std::size_t>(ci)] += s2;
                    }
                }
                if (bt.grad()) {
                    for (std::int64_t ci = 0; ci < c; ++ci) bt.grad()[ci] += sum_dy[static_cast<std::size_t>(ci)];
                }
                if (g.grad()) {
                    for (std::int64_t ci = 0; ci < c; ++ci)
                        g.grad()[ci] += sum_dy_xhat[static_cast<std::size_t>(ci)];
                }
                if (xc.grad()) {
                    T* gx = xc.grad();
                    for (std::int64_t in = 0; in < n; ++in) {
                        for (std::int64_t ci = 0; ci < c; ++ci) {
                            const std::int64_t base = (in * c + ci) * hw;
                            const T gv = g.data()[ci];
                            const T is = invstd[static_cast<std::size_t>(ci)];
                            if (batch_stats) {
                                const T sdy = sum_dy[static_cast<std::size_t>(ci)];
                                const T sdyx = sum_dy_xhat[static_cast<std::size_t>(ci)];
                                const T k = gv * is / static_cast<T>(m);
                                for (std::int64_t i = 0; i < hw; ++i) {
                                    gx[base + i] +=
                                        k * (static_cast<T>(m) * go[base + i] - sdy - ph2[base + i] * sdyx);
                                }
                            } else {
                                const T k = gv * is;
                                for (std::int64_t i = 0; i < hw; ++i) gx[base + i] += k * go[base + i];
                            }
                        }
                    }
                }
            });
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Ties route the gradient to the first window
// element in row-major order.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> max_pool_2x2(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("max_pool_2x2 expects [N,C,H,W], got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("max_pool_2x2 needs even spatial dims, got " + shape_str(x.shape()));
    }
    const std::int64_t ho = h / 2, wo = w / 2;
    Tensor<T> out = Tensor<T>::zeros({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    const T* px = x.data();
    T* po = out.data();
    std::int64_t* pa = argmax->data();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const T* xc = px + nc * h * w;
        T* oc = po + nc * ho * wo;
        std::int64_t* ac = pa + nc * ho * wo;
        for (std::int64_t y = 0; y < ho; ++y) {
            for (std::int64_t xw = 0; xw < wo; ++xw) {
                const std::int64_t base = 2 * y * w + 2 * xw;
                std::int64_t best = base;
                T bv = xc[base];
                const std::int64_t cand[3] = {base + 1, base + w, base + w + 1};
                for (std::int64_t k : cand) {
                    if (xc[k] > bv) {
                        bv = xc[k];
                        best = k;
                    }
                }
                oc[y * wo + xw] = bv;
                ac[y * wo + xw] = nc * h * w + best;
            }
        }
    }
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("max_pool", [x, out, argmax]() {
            const T* go = out.grad();
            T* gx = x.grad();
            const auto& am = *argmax;
            for (std::size_t i = 0; i < am.size(); ++i) gx[am[i]] += go[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2x2 transposed convolution with stride 2 (exact spatial doubling; windows
// do not overlap). w: [C_in, C_out, 2, 2].
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv_transpose_2x2(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != 2 || w.dim(3) != 2) {
        throw DimensionError("conv_transpose_2x2 expects x [N,C,H,W] and w [C,C',2,2], got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(0)) {
        throw DimensionError("conv_transpose_2x2 channel mismatch: " + shape_str(x.shape()) + " vs " +
                             shape_str(w.shape()));
    }
    const std::int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t c_out = w.dim(1);
    if (bias && (bias->rank() != 1 || bias->dim(0) != c_out)) {
        throw DimensionError("conv_transpose_2x2 bias must be [C_out], got " + shape_str(bias->shape()));
    }
    const std::int64_t ho = 2 * h, wo = 2 * wd;
    Tensor<T> out = Tensor<T>::zeros({n, c_out, ho, wo});
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t co = 0; co < c_out; ++co) {
            T* on = po + (in * c_out + co) * ho * wo;
            if (bias) {
                const T bv = bias->data()[co];
                std::fill(on, on + ho * wo, bv);
            }
            for (std::int64_t ci = 0; ci < c_in; ++ci) {
                const T* xc = px + (in * c_in + ci) * h * wd;
                const T* wc = pw + (ci * c_out + co) * 4;
                for (std::int64_t y = 0; y < h; ++y) {
                    for (std::int64_t xw = 0; xw < wd; ++xw) {
                        const T v = xc[y * wd + xw];
                        T* o = on + 2 * y * wo + 2 * xw;
                        o[0] += wc[0] * v;
                        o[1] += wc[1] * v;
                        o[wo] += wc[2] * v;
                        o[wo + 1] += wc[3] * v;
                    }
                }
            }
        }
    }
    const bool need_wg = w.requires_grad() || (bias && bias->requires_grad());
    if (detail::track(tape, x, w) || (tape.recording() && need_wg)) {
        out.mark_output_of(tape);
        Tensor<T> b = bias ? *bias : Tensor<T>();
        tape.record("conv_transpose", [x, w, b, out, n, c_in, c_out, h, wd, ho, wo]() {
            const T* go = out.grad();
            const T* px2 = x.data();
            const T* pw2 = w.data();
            if (b.defined() && b.grad()) {
                T* gb = b.grad();
                for (std::int64_t in = 0; in < n; ++in) {
                    for (std::int64_t co = 0; co < c_out; ++co) {
                        const T* gn = go + (in * c_out + co) * ho * wo;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < ho * wo; ++i) acc += gn[i];
                        gb[co] += acc;
                    }
                }
            }
            for (std::int64_t in = 0; in < n; ++in) {
                for (std::int64_t ci = 0; ci < c_in; ++ci) {
                    const T* xc = px2 + (in * c_in + ci) * h * wd;
                    T* gxc = x.grad() ? x.grad() + (in * c_in + ci) * h * wd : nullptr;
                    for (std::int64_t co = 0; co < c_out; ++co) {
                        const T* gn = go + (in * c_out + co) * ho * wo;
                        const T* wc = pw2 + (ci * c_out + co) * 4;
                        T* gw = w.grad() ? w.grad() + (ci * c_out + co) * 4 : nullptr;
                        for (std::int64_t y = 0; y < h; ++y) {
                            for (std::int64_t xw = 0; xw < wd; ++xw) {
                                const T* g = gn + 2 * y * wo + 2 * xw;
                                if (gxc) {
                                    gxc[y * wd + xw] +=
                                        wc[0] * g[0] + wc[1] * g[1] + wc[2] * g[wo] + wc[3] * g[wo + 1];
                                }
                                if (gw) {
                                    const T v = xc[y * wd + xw];
                                    gw[0] += v * g[0];
                                    gw[1] += v * g[1];
                                    gw[2] += v * g[wo];
                                    gw[3] += v * g[wo + 1];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
struct UpsampleLayer {
    Tensor<T> weight;  // [C_in, C_out, 2, 2]
    Tensor<T> bias;    // [C_out]

    UpsampleLayer() = default;

    UpsampleLayer(std::int64_t c_in, std::int64_t c_out, std::uint64_t seed) {
        Rng rng(seed);
        const T std_dev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(c_in * 4)));
        weight = Tensor<T>::randn({c_in, c_out, 2, 2}, rng, T(0), std_dev);
        bias = Tensor<T>::zeros({c_out});
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        return conv_transpose_2x2(tape, x, weight, &bias);
    }
};

// ---------------------------------------------------------------------------
// Inverted dropout; the mask is a pure function of the seed.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double p, std::uint64_t seed, Mode mode) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout p must be in [0,1), got " + std::to_string(p));
    if (mode == Mode::kEval || p == 0.0) return x;

    const T inv_keep = static_cast<T>(1.0 / (1.0 - p));
    Rng rng(seed);
    auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    T* pm = mask->data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const T m = rng.bernoulli(p) ? T(0) : inv_keep;
        pm[i] = m;
        po[i] = px[i] * m;
    }
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("dropout", [x, out, mask, n]() {
            const T* go = out.grad();
            const T* pm2 = mask->data();
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i] * pm2[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Global average pool [N,C,H,W] -> [N,C] and a bias-less linear map.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("global_avg_pool expects [N,C,H,W], got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out = Tensor<T>::zeros({n, c});
    const T* px = x.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < n * c; ++i) {
        T acc = T(0);
        const T* p = px + i * hw;
        for (std::int64_t k = 0; k < hw; ++k) acc += p[k];
        po[i] = acc / static_cast<T>(hw);
    }
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("global_avg_pool", [x, out, n, c, hw]() {
            const T* go = out.grad();
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n * c; ++i) {
                const T g = go[i] / static_cast<T>(hw);
                T* p = gx + i * hw;
                for (std::int64_t k = 0; k < hw; ++k) p[k] += g;
            }
        });
    }
    return out;
}

// x: [N,F], w: [G,F] -> [N,G]
template <class T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw DimensionError("linear expects x [N,F] and w [G,F], got " + shape_str(x.shape()) + " and " +
                             shape_str(w.shape()));
    }
    const std::int64_t n = x.dim(0), f = x.dim(1), g = w.dim(0);
    Tensor<T> out = Tensor<T>::zeros({n, g});
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t og = 0; og < g; ++og) {
            T acc = T(0);
            const T* xr = px + in * f;
            const T* wr = pw + og * f;
            for (std::int64_t k = 0; k < f; ++k) acc += xr[k] * wr[k];
            po[in * g + og] = acc;
        }
    }
    if (detail::track(tape, x, w)) {
        out.mark_output_of(tape);
        tape.record("linear", [x, w, out, n, f, g]() {
            const T* go = out.grad();
            const T* px2 = x.data();
            const T* pw2 = w.data();
            if (x.grad()) {
                T* gx = x.grad();
                for (std::int64_t in = 0; in < n; ++in) {
                    for (std::int64_t og = 0; og < g; ++og) {
                        const T gv = go[in * g + og];
                        const T* wr = pw2 + og * f;
                        T* xr = gx + in * f;
                        for (std::int64_t k = 0; k < f; ++k) xr[k] += gv * wr[k];
                    }
                }
            }
            if (w.grad()) {
                T* gw = w.grad();
                for (std::int64_t in = 0; in < n; ++in) {
                    for (std::int64_t og = 0; og < g; ++og) {
                        const T gv = go[in * g + og];
                        const T* xr = px2 + in * f;
                        T* wr = gw + og * f;
                        for (std::int64_t k = 0; k < f; ++k) wr[k] += gv * xr[k];
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace msdn
