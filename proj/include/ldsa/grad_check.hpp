#pragma once

// Finite-difference gradient verification. The numeric side rebuilds the
// function from scratch for every perturbed evaluation, so it shares no code
// path with the reverse-mode sweep it is checking.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "ldsa/tensor.hpp"

namespace ldsa {

struct GradCheckResult {
    double max_rel_error = 0.0;
    int worst_coord = -1;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// f: callable (Tape&, Tensor x) -> Tensor, scalar output. Returns the max over
// coordinates of |analytic - central_difference| / max(1, |central_difference|).
template <class F>
GradCheckResult grad_check_detail(F&& f, Shape xshape, std::span<const double> x0, double h = 1e-5) {
    auto eval = [&](std::span<const double> x) -> double {
        Tape tape;
        Tensor xt = tape.leaf(xshape, x);
        Tensor y = f(tape, xt);
        double v = y.scalar();
        if (!std::isfinite(v)) throw std::runtime_error("grad_check: function value is not finite");
        return v;
    };

    std::vector<double> analytic;
    {
        Tape tape;
        Tensor xt = tape.leaf(xshape, x0);
        Tensor y = f(tape, xt);
        if (!std::isfinite(y.scalar())) throw std::runtime_error("grad_check: function value is not finite");
        tape.backward(y);
        auto g = xt.grad();
        analytic.assign(g.begin(), g.end());
    }

    GradCheckResult res;
    std::vector<double> x(x0.begin(), x0.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = eval(x);
        x[i] = orig - h;
        const double fm = eval(x);
        x[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max(1.0, std::abs(numeric));
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (rel > res.max_rel_error || res.worst_coord < 0) {
            res.max_rel_error = rel;
            res.worst_coord = static_cast<int>(i);
            res.analytic_at_worst = analytic[i];
            res.numeric_at_worst = numeric;
        }
    }
    return res;
}

template <class F>
double grad_check(F&& f, Shape xshape, std::span<const double> x0, double h = 1e-5) {
    return grad_check_detail(std::forward<F>(f), std::move(xshape), x0, h).max_rel_error;
}

}  // namespace ldsa
