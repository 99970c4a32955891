#include "gradcheck.h"

#include <cmath>

namespace mef {

GradCheckReport finite_diff_check(
    const std::function<Tensor(Tape&, const Tensor&)>& f,
    const Shape& x_shape, const std::vector<double>& x_data,
    double eps, double tol) {
    if (eps <= 0.0) throw_numeric("finite_diff_check: eps must be positive");
    if (static_cast<int64_t>(x_data.size()) != numel(x_shape))
        throw_numeric("finite_diff_check: data does not match shape " + shape_str(x_shape));

    // One reverse-mode pass for the analytic gradient.
    std::vector<double> analytic(x_data.size(), 0.0);
    {
        Tape tape;
        Tensor x = tape.leaf(x_shape, x_data.data(), true);
        Tensor y = f(tape, x);
        if (y.size() != 1)
            throw_numeric("finite_diff_check: function must be scalar-valued");
        tape.backward(y);
        if (!x.grad().empty()) analytic = x.grad();
    }

    auto eval = [&](const std::vector<double>& data) {
        Tape tape;
        Tensor x = tape.leaf(x_shape, data.data(), false);
        return f(tape, x).scalar();
    };

    GradCheckReport rep;
    std::vector<double> probe = x_data;
    for (size_t i = 0; i < x_data.size(); ++i) {
        probe[i] = x_data[i] + eps;
        double fp = eval(probe);
        probe[i] = x_data[i] - eps;
        double fm = eval(probe);
        probe[i] = x_data[i];
        double num = (fp - fm) / (2.0 * eps);
        double ana = analytic[i];
        double denom = std::max({1.0, std::abs(num), std::abs(ana)});
        double rel = std::abs(num - ana) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = static_cast<int64_t>(i);
            rep.worst_analytic = ana;
            rep.worst_numeric = num;
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

} // namespace mef
