#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mgp/tensor.hpp"

namespace mgp {

/// Compares the analytic gradient of a scalar-valued function against
/// central finite differences. Returns the maximum over coordinates of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// Resets the active tape; do not call with a graph in flight.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double h) {
    if (!(h > 0.0)) throw ContractError("grad_check: step h must be positive");

    Tape& tape = Tape::active();
    tape.reset();
    Tensor p = point.clone();
    p.set_requires_grad(true);
    Tensor y = f(p);
    if (!std::isfinite(y.item()))
        throw NumericError("grad_check: function is not finite at the evaluation point");
    backward(y);
    std::vector<double> analytic(point.numel(), 0.0);
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    tape.reset();

    NoGradGuard no_grad;
    double max_err = 0.0;
    Tensor probe = point.clone();
    for (std::size_t i = 0; i < point.numel(); ++i) {
        const double saved = probe.values()[i];
        probe.values_mut()[i] = saved + h;
        const double fp = f(probe).item();
        probe.values_mut()[i] = saved - h;
        const double fm = f(probe).item();
        probe.values_mut()[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: function is not finite near coordinate " +
                               std::to_string(i));
        const double numeric = (fp - fm) / (2.0 * h);
        const double scale = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        max_err = std::max(max_err, std::abs(analytic[i] - numeric) / scale);
    }
    return max_err;
}

}  // namespace mgp
