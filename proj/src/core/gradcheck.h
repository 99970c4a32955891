#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensor.h"

namespace mef {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool pass = false;
};

// Central-difference audit of a scalar function's reverse-mode gradient with
// respect to `x`: perturbs every element by +/- eps and compares
// (f(x+eps) - f(x-eps)) / 2eps against d f / d x from one backward pass.
// The function must be deterministic; it is evaluated on a fresh tape per
// probe, so it stays independent of whatever graph produced `x`.
//
// rel err = |num - ana| / max(1, |num|, |ana|).
GradCheckReport finite_diff_check(
    const std::function<Tensor(Tape&, const Tensor&)>& f,
    const Shape& x_shape, const std::vector<double>& x_data,
    double eps, double tol);

} // namespace mef
