#pragma once

#include <cmath>
#include <functional>

#include "mstcn/errors.hpp"
#include "mstcn/tensor.hpp"

namespace mstcn {

/// Central-difference gradient of a scalar function of a tensor:
/// g[i] = (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps).
///
/// This is the numeric oracle every analytic backward pass in the library
/// is tested against; it deliberately shares no code with those passes.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps = 1e-5) {
    if (!(eps > 0.0)) {
        throw DomainError("finite_diff_grad: eps must be positive");
    }
    Tensor grad = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double saved = probe[i];
        probe[i] = saved + eps;
        double up = f(probe);
        probe[i] = saved - eps;
        double down = f(probe);
        probe[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: objective is not finite near x");
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

/// Relative error between an analytic and a numeric gradient, as
/// ||a - n||_2 / (||a||_2 + ||n||_2). Zero if both vanish.
inline double gradient_rel_error(const Tensor& analytic, const Tensor& numeric) {
    require_shape(numeric, analytic, "gradient_rel_error");
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.numel(); ++i) {
        double d = analytic[i] - numeric[i];
        diff += d * d;
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    double denom = std::sqrt(na) + std::sqrt(nn);
    if (denom < 1e-12) return 0.0;
    return std::sqrt(diff) / denom;
}

} // namespace mstcn
