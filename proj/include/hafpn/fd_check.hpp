#pragma once

// Central-finite-difference gradient oracle. Double precision only; single
// precision has too little headroom for eps-sized probes.

#include <cmath>
#include <functional>
#include <stdexcept>

#include "hafpn/tensor.hpp"

namespace hafpn {

using ScalarFn = std::function<double(const Tensor<double>&)>;

/// Per-coordinate central differences (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps).
template <typename F>
Tensor<double> fd_grad(F&& f, const Tensor<double>& x, double eps) {
    require(eps > 0.0, "fd_grad: eps must be positive");
    Tensor<double> grad = zeros_like(x);
    Tensor<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = f(probe);
        probe[i] = orig - eps;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("fd_grad: non-finite function value");
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

/// Worst-case scaled error between an analytic gradient and the fd oracle:
/// max_i |a_i - g_i| / max(1, |a_i|, |g_i|). The unit floor keeps zero-valued
/// coordinates from blowing up the quotient while staying a relative measure
/// for gradients of ordinary magnitude.
inline double max_scaled_error(const Tensor<double>& analytic,
                               const Tensor<double>& numeric) {
    require(analytic.same_shape(numeric), "max_scaled_error: shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom =
            std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

}  // namespace hafpn
