#pragma once

#include <functional>

#include "pathcons/tensor.hpp"

namespace pathcons {

/// Central finite differences of a scalar-valued function, evaluated
/// coordinate by coordinate: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// Deliberately independent of the compute graph; acts as the gradient
/// oracle everywhere analytic gradients are checked.
inline DenseTensor finite_diff_gradient(const std::function<double(const DenseTensor&)>& f,
                                        const DenseTensor& point, double eps) {
    if (!(eps > 0.0)) throw ConfigError("finite_diff_gradient: eps must be positive");
    DenseTensor probe = point;
    Eigen::ArrayXd grad(point.size());
    for (std::int64_t i = 0; i < point.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        const double hi = f(probe);
        probe[i] = saved - eps;
        const double lo = f(probe);
        probe[i] = saved;
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    return DenseTensor(point.shape(), std::move(grad));
}

/// ||a - b|| / max(||a||, ||b||, floor): the relative-error metric used by
/// the gradient-fidelity checks.
inline double relative_error(const DenseTensor& a, const DenseTensor& b, double floor = 1e-12) {
    if (a.shape() != b.shape()) throw ConfigError("relative_error: shape mismatch");
    const double diff = (a.data() - b.data()).matrix().norm();
    const double denom = std::max({a.data().matrix().norm(), b.data().matrix().norm(), floor});
    return diff / denom;
}

}  // namespace pathcons
