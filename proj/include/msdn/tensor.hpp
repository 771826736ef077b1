#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msdn/errors.hpp"
#include "msdn/rng.hpp"

namespace msdn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (std::int64_t i = static_cast<std::int64_t>(s.size()) - 2; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i + 1)] * s[static_cast<std::size_t>(i + 1)];
    }
    return st;
}

template <class T>
class Tape;

// Dense row-major tensor. Copies share the underlying value/grad buffers;
// all ops are functional and produce fresh tensors, so sharing is safe and
// keeps tape closures cheap. Gradients live in a separate same-size buffer
// allocated only for tensors that participate in autodiff.
template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.check_dims();
        t.data_ = std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(t.shape_)), T(0));
        return t;
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), value);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

    static Tensor scalar(T value) { return full({1}, value); }

    static Tensor from_data(Shape shape, std::vector<T> values) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.check_dims();
        if (static_cast<std::int64_t>(values.size()) != shape_numel(t.shape_)) {
            throw DimensionError("tensor data size " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(t.shape_));
        }
        t.data_ = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, T mean = T(0), T stddev = T(1)) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : *t.data_) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }
    std::vector<T>& values() { return *data_; }
    const std::vector<T>& values() const { return *data_; }

    T item() const {
        if (numel() != 1) {
            throw ContractError("item() requires a single-element tensor, got shape " + shape_str(shape_));
        }
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }
    bool is_leaf() const { return leaf_; }

    Tensor& set_requires_grad(bool flag) {
        if (!leaf_) throw ContractError("set_requires_grad is only valid on leaf tensors");
        requires_grad_ = flag;
        if (flag && !grad_) {
            grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
        }
        return *this;
    }

    bool has_grad() const { return grad_ != nullptr; }
    // Grad buffers are shared accumulation state, mutable through const views.
    T* grad() const { return grad_ ? grad_->data() : nullptr; }
    const std::shared_ptr<std::vector<T>>& grad_buffer() const { return grad_; }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }

    // Deep copy of values; grad/tracking state is not carried over.
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_->size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        return Tensor<U>::from_data(shape_, std::move(out));
    }

    // Marks this tensor as the tracked output of a recorded op: it becomes a
    // non-leaf whose grad buffer is reset at the start of every backward pass.
    void mark_output_of(Tape<T>& tape);

private:
    void check_dims() const {
        for (auto d : shape_) {
            if (d <= 0) throw DimensionError("non-positive dim in shape " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_;
    bool requires_grad_ = false;
    bool leaf_ = true;
};

// Define-by-run gradient tape. Ops append backward closures in execution
// order; replaying them in reverse visits every node after all of its
// consumers, so a plain linear replay is a valid reverse topological order.
// Leaf gradients accumulate across backward calls; non-leaf buffers are
// scratch and are cleared at the start of each call.
template <class T>
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return entries_.size(); }

    void record(const char* op, std::function<void()> backward) {
        entries_.push_back(Entry{op, std::move(backward)});
    }

    void register_node(std::shared_ptr<std::vector<T>> grad_buf) {
        node_grads_.push_back(std::move(grad_buf));
    }

    void backward(const Tensor<T>& root) {
        if (root.numel() != 1) {
            throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
        }
        if (!root.requires_grad()) return;
        for (auto& g : node_grads_) std::fill(g->begin(), g->end(), T(0));
        root.grad()[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    }

    void clear() {
        entries_.clear();
        node_grads_.clear();
    }

private:
    struct Entry {
        const char* op;
        std::function<void()> backward;
    };

    bool recording_ = true;
    std::vector<Entry> entries_;
    std::vector<std::shared_ptr<std::vector<T>>> node_grads_;
};

template <class T>
void Tensor<T>::mark_output_of(Tape<T>& tape) {
    leaf_ = false;
    requires_grad_ = true;
    if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
    tape.register_node(grad_);
}

namespace detail {

template <class T>
inline bool track(const Tape<T>& tape, const Tensor<T>& a) {
    return tape.recording() && a.requires_grad();
}

template <class T>
inline bool track(const Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    return tape.recording() && (a.requires_grad() || b.requires_grad());
}

template <class T>
inline bool track(const Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
    return tape.recording() && (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

// Broadcast support: equal shapes, a single-element tensor on either side,
// or equal-rank shapes differing only in singleton dims.
inline Shape broadcast_result_shape(const Shape& a, const Shape& b) {
    if (a == b) return a;
    if (shape_numel(b) == 1) return a;
    if (shape_numel(a) == 1) return b;
    if (a.size() != b.size()) {
        throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    }
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) {
            out[i] = a[i];
        } else if (a[i] == 1) {
            out[i] = b[i];
        } else if (b[i] == 1) {
            out[i] = a[i];
        } else {
            throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
        }
    }
    return out;
}

// Element strides of `in` viewed through `out`'s index space (0 on expanded dims).
inline std::vector<std::int64_t> strides_into(const Shape& in, const Shape& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    if (shape_numel(in) == 1) return st;
    auto real = row_major_strides(in);
    for (std::size_t i = 0; i < out.size(); ++i) {
        st[i] = (in[i] == out[i]) ? real[i] : 0;
    }
    return st;
}

// Odometer iteration over `out_shape`, calling f(io, ia, ib) with flat
// offsets into out, a and b. Deterministic row-major order.
template <class F>
inline void for_each_broadcast(const Shape& out_shape, const Shape& as, const Shape& bs, F&& f) {
    const std::int64_t total = shape_numel(out_shape);
    if (as == out_shape && bs == out_shape) {
        for (std::int64_t i = 0; i < total; ++i) f(i, i, i);
        return;
    }
    const auto sa = strides_into(as, out_shape);
    const auto sb = strides_into(bs, out_shape);
    const int r = static_cast<int>(out_shape.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t ia = 0;
    std::int64_t ib = 0;
    for (std::int64_t io = 0; io < total; ++io) {
        f(io, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            ++idx[du];
            ia += sa[du];
            ib += sb[du];
            if (idx[du] < out_shape[du]) break;
            ia -= sa[du] * out_shape[du];
            ib -= sb[du] * out_shape[du];
            idx[du] = 0;
        }
    }
}

// If one side is a single-element tensor of different rank, view it with the
// other side's rank so the odometer can run. Same-rank inputs pass through.
inline Shape effective_shape(const Shape& self, const Shape& other) {
    if (self.size() == other.size()) return self;
    if (shape_numel(self) == 1) return Shape(other.size(), 1);
    throw DimensionError("shapes " + shape_str(self) + " and " + shape_str(other) + " are not broadcastable");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (broadcast by singleton dims or scalar tensor)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = detail::effective_shape(a.shape(), b.shape());
    const Shape bs = detail::effective_shape(b.shape(), a.shape());
    const Shape os = detail::broadcast_result_shape(as, bs);
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    detail::for_each_broadcast(os, as, bs, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
        po[io] = pa[ia] + pb[ib];
    });
    if (detail::track(tape, a, b)) {
        out.mark_output_of(tape);
        tape.record("add", [a, b, out, os, as, bs]() {
            const T* g = out.grad();
            T* ga = a.grad();
            T* gb = b.grad();
            detail::for_each_broadcast(os, as, bs, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                if (ga) ga[ia] += g[io];
                if (gb) gb[ib] += g[io];
            });
        });
    }
    return out;
}

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = detail::effective_shape(a.shape(), b.shape());
    const Shape bs = detail::effective_shape(b.shape(), a.shape());
    const Shape os = detail::broadcast_result_shape(as, bs);
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    detail::for_each_broadcast(os, as, bs, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
        po[io] = pa[ia] - pb[ib];
    });
    if (detail::track(tape, a, b)) {
        out.mark_output_of(tape);
        tape.record("sub", [a, b, out, os, as, bs]() {
            const T* g = out.grad();
            T* ga = a.grad();
            T* gb = b.grad();
            detail::for_each_broadcast(os, as, bs, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                if (ga) ga[ia] += g[io];
                if (gb) gb[ib] -= g[io];
            });
        });
    }
    return out;
}

// Hadamard product
template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = detail::effective_shape(a.shape(), b.shape());
    const Shape bs = detail::effective_shape(b.shape(), a.shape());
    const Shape os = detail::broadcast_result_shape(as, bs);
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    detail::for_each_broadcast(os, as, bs, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
        po[io] = pa[ia] * pb[ib];
    });
    if (detail::track(tape, a, b)) {
        out.mark_output_of(tape);
        tape.record("mul", [a, b, out, os, as, bs]() {
            const T* g = out.grad();
            const T* pa2 = a.data();
            const T* pb2 = b.data();
            T* ga = a.grad();
            T* gb = b.grad();
            detail::for_each_broadcast(os, as, bs, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                if (ga) ga[ia] += pb2[ib] * g[io];
                if (gb) gb[ib] += pa2[ia] * g[io];
            });
        });
    }
    return out;
}

template <class T>
Tensor<T> div(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = detail::effective_shape(a.shape(), b.shape());
    const Shape bs = detail::effective_shape(b.shape(), a.shape());
    const Shape os = detail::broadcast_result_shape(as, bs);
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    detail::for_each_broadcast(os, as, bs, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
        po[io] = pa[ia] / pb[ib];
    });
    if (detail::track(tape, a, b)) {
        out.mark_output_of(tape);
        tape.record("div", [a, b, out, os, as, bs]() {
            const T* g = out.grad();
            const T* pa2 = a.data();
            const T* pb2 = b.data();
            T* ga = a.grad();
            T* gb = b.grad();
            detail::for_each_broadcast(os, as, bs, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                const T bv = pb2[ib];
                if (ga) ga[ia] += g[io] / bv;
                if (gb) gb[ib] -= pa2[ia] / (bv * bv) * g[io];
            });
        });
    }
    return out;
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T s) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    if (detail::track(tape, a)) {
        out.mark_output_of(tape);
        tape.record("scale", [a, out, s, n]() {
            const T* g = out.grad();
            T* ga = a.grad();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += s * g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& a, T s) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + s;
    if (detail::track(tape, a)) {
        out.mark_output_of(tape);
        tape.record("add_scalar", [a, out, n]() {
            const T* g = out.grad();
            T* ga = a.grad();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations and pointwise functions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    // outputs stay strictly inside (0,1); the saturated tails round to the
    // nearest representable interior values
    const T lo = std::numeric_limits<T>::min();
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    for (std::int64_t i = 0; i < n; ++i) {
        const T v = px[i];
        T y;
        if (v >= T(0)) {
            y = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y = e / (T(1) + e);
        }
        po[i] = std::min(hi, std::max(lo, y));
    }
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("sigmoid", [x, out, n]() {
            const T* g = out.grad();
            const T* py = out.data();
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += py[i] * (T(1) - py[i]) * g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("relu", [x, out, n]() {
            const T* g = out.grad();
            const T* px2 = x.data();
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) {
                if (px2[i] > T(0)) gx[i] += g[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> vlog(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = std::log(px[i]);
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("log", [x, out, n]() {
            const T* g = out.grad();
            const T* px2 = x.data();
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] / px2[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> clamp_min(Tape<T>& tape, const Tensor<T>& x, T lo) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > lo ? px[i] : lo;
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("clamp_min", [x, out, lo, n]() {
            const T* g = out.grad();
            const T* px2 = x.data();
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) {
                if (px2[i] > lo) gx[i] += g[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> pow_scalar(Tape<T>& tape, const Tensor<T>& x, T p) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    if (p == T(0)) {
        for (std::int64_t i = 0; i < n; ++i) po[i] = T(1);
    } else if (p == T(1)) {
        for (std::int64_t i = 0; i < n; ++i) po[i] = px[i];
    } else if (p == T(2)) {
        for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] * px[i];
    } else {
        for (std::int64_t i = 0; i < n; ++i) po[i] = std::pow(px[i], p);
    }
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("pow", [x, out, p, n]() {
            if (p == T(0)) return;
            const T* g = out.grad();
            const T* px2 = x.data();
            T* gx = x.grad();
            if (p == T(1)) {
                for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
            } else if (p == T(2)) {
                for (std::int64_t i = 0; i < n; ++i) gx[i] += T(2) * px2[i] * g[i];
            } else {
                for (std::int64_t i = 0; i < n; ++i) gx[i] += p * std::pow(px2[i], p - T(1)) * g[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
    T acc = T(0);
    const T* px = x.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += px[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("sum", [x, out, n]() {
            const T g = out.grad()[0];
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    T acc = T(0);
    const T* px = x.data();
    for (std::int64_t i = 0; i < n; ++i) acc += px[i];
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("mean", [x, out, n]() {
            const T g = out.grad()[0] / static_cast<T>(n);
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> sum_axes(Tape<T>& tape, const Tensor<T>& x, const std::vector<int>& axes, bool keepdim = false) {
    const Shape& xs = x.shape();
    std::vector<bool> reduce(xs.size(), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= static_cast<int>(xs.size())) {
            throw DimensionError("axis " + std::to_string(ax) + " out of range for shape " + shape_str(xs));
        }
        reduce[static_cast<std::size_t>(ax)] = true;
    }
    Shape kept(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) kept[i] = reduce[i] ? 1 : xs[i];

    Tensor<T> out = Tensor<T>::zeros(kept);
    const T* px = x.data();
    T* po = out.data();
    detail::for_each_broadcast(xs, kept, xs, [&](std::int64_t, std::int64_t io, std::int64_t ix) {
        po[io] += px[ix];
    });
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("sum_axes", [x, out, xs, kept]() {
            const T* g = out.grad();
            T* gx = x.grad();
            detail::for_each_broadcast(xs, kept, xs, [&](std::int64_t, std::int64_t io, std::int64_t ix) {
                gx[ix] += g[io];
            });
        });
    }
    if (!keepdim) {
        Shape squeezed;
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (!reduce[i]) squeezed.push_back(kept[i]);
        }
        if (squeezed.empty()) squeezed.push_back(1);
        return reshape(tape, out, squeezed);
    }
    return out;
}

template <class T>
Tensor<T> mean_axes(Tape<T>& tape, const Tensor<T>& x, const std::vector<int>& axes, bool keepdim = false) {
    std::int64_t k = 1;
    for (int ax : axes) {
        if (ax < 0 || ax >= x.rank()) {
            throw DimensionError("axis " + std::to_string(ax) + " out of range for shape " + shape_str(x.shape()));
        }
        k *= x.dim(ax);
    }
    return scale(tape, sum_axes(tape, x, axes, keepdim), T(1) / static_cast<T>(k));
}

// Softmax over the channel axis of an [N,C,H,W] tensor, max-subtracted.
template <class T>
Tensor<T> channel_softmax(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4) {
        throw DimensionError("channel_softmax expects an [N,C,H,W] tensor, got " + shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = h * w;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (std::int64_t in = 0; in < n; ++in) {
        const std::int64_t nb = in * c * hw;
        for (std::int64_t s = 0; s < hw; ++s) {
            T mx = px[nb + s];
            for (std::int64_t ic = 1; ic < c; ++ic) mx = std::max(mx, px[nb + ic * hw + s]);
            T z = T(0);
            for (std::int64_t ic = 0; ic < c; ++ic) {
                const T e = std::exp(px[nb + ic * hw + s] - mx);
                po[nb + ic * hw + s] = e;
                z += e;
            }
            const T inv = T(1) / z;
            for (std::int64_t ic = 0; ic < c; ++ic) po[nb + ic * hw + s] *= inv;
        }
    }
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("channel_softmax", [x, out, n, c, hw]() {
            const T* g = out.grad();
            const T* py = out.data();
            T* gx = x.grad();
            for (std::int64_t in = 0; in < n; ++in) {
                const std::int64_t nb = in * c * hw;
                for (std::int64_t s = 0; s < hw; ++s) {
                    T dot = T(0);
                    for (std::int64_t ic = 0; ic < c; ++ic) {
                        const std::int64_t i = nb + ic * hw + s;
                        dot += g[i] * py[i];
                    }
                    for (std::int64_t ic = 0; ic < c; ++ic) {
                        const std::int64_t i = nb + ic * hw + s;
                        gx[i] += py[i] * (g[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

// Same elements in row-major order under a new shape.
template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(new_shape));
    }
    Tensor<T> out = Tensor<T>::zeros(new_shape);
    std::copy(x.data(), x.data() + x.numel(), out.data());
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        const std::int64_t n = x.numel();
        tape.record("reshape", [x, out, n]() {
            const T* g = out.grad();
            T* gx = x.grad();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw DimensionError("concat_channels needs matching N,H,W: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
    Tensor<T> out = Tensor<T>::zeros({n, ca + cb, a.dim(2), a.dim(3)});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::int64_t in = 0; in < n; ++in) {
        std::copy(pa + in * ca * hw, pa + (in + 1) * ca * hw, po + in * (ca + cb) * hw);
        std::copy(pb + in * cb * hw, pb + (in + 1) * cb * hw, po + in * (ca + cb) * hw + ca * hw);
    }
    if (detail::track(tape, a, b)) {
        out.mark_output_of(tape);
        tape.record("concat", [a, b, out, n, ca, cb, hw]() {
            const T* g = out.grad();
            T* ga = a.grad();
            T* gb = b.grad();
            for (std::int64_t in = 0; in < n; ++in) {
                const T* gn = g + in * (ca + cb) * hw;
                if (ga) {
                    T* gan = ga + in * ca * hw;
                    for (std::int64_t i = 0; i < ca * hw; ++i) gan[i] += gn[i];
                }
                if (gb) {
                    T* gbn = gb + in * cb * hw;
                    for (std::int64_t i = 0; i < cb * hw; ++i) gbn[i] += gn[ca * hw + i];
                }
            }
        });
    }
    return out;
}

// Channels [c0, c1) of an [N,C,H,W] tensor.
template <class T>
Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& x, std::int64_t c0, std::int64_t c1) {
    if (x.rank() != 4 || c0 < 0 || c1 <= c0 || c1 > x.dim(1)) {
        throw DimensionError("invalid channel slice [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") of " + shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3), cs = c1 - c0;
    Tensor<T> out = Tensor<T>::zeros({n, cs, x.dim(2), x.dim(3)});
    const T* px = x.data();
    T* po = out.data();
    for (std::int64_t in = 0; in < n; ++in) {
        std::copy(px + (in * c + c0) * hw, px + (in * c + c1) * hw, po + in * cs * hw);
    }
    if (detail::track(tape, x)) {
        out.mark_output_of(tape);
        tape.record("slice", [x, out, n, c, c0, cs, hw]() {
            const T* g = out.grad();
            T* gx = x.grad();
            for (std::int64_t in = 0; in < n; ++in) {
                T* gxn = gx + (in * c + c0) * hw;
                const T* gn = g + in * cs * hw;
                for (std::int64_t i = 0; i < cs * hw; ++i) gxn[i] += gn[i];
            }
        });
    }
    return out;
}

}  // namespace msdn
