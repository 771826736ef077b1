#pragma once

#include <cmath>
#include <vector>

#include "msdn/errors.hpp"
#include "msdn/tensor.hpp"

namespace msdn {

// Central finite-difference check of a scalar-valued tensor function.
// Returns max over elements of |analytic - numeric| / max(1, |analytic|, |numeric|).
// Run in double precision; single precision makes the differences unreliable.
template <class F>
double gradcheck(F&& f, const Tensor<double>& x0, double eps = 1e-5) {
    if (eps <= 0.0) throw ContractError("gradcheck eps must be > 0");

    Tensor<double> x = x0.clone();
    x.set_requires_grad(true);

    Tape<double> tape;
    Tensor<double> y = f(tape, x);
    if (y.numel() != 1) {
        throw ContractError("gradcheck requires a scalar-valued function, got shape " + shape_str(y.shape()));
    }
    tape.backward(y);
    std::vector<double> analytic(x.grad(), x.grad() + x.numel());

    double worst = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double saved = x.data()[i];
        Tape<double> silent(false);
        x.data()[i] = saved + eps;
        const double yp = f(silent, x).item();
        x.data()[i] = saved - eps;
        const double ym = f(silent, x).item();
        x.data()[i] = saved;
        const double numeric = (yp - ym) / (2.0 * eps);
        const double a = analytic[static_cast<std::size_t>(i)];
        const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace msdn
