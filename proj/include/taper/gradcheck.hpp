#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "taper/exec.hpp"

namespace taper {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    int worst_index = -1;
};

/// Compares tape gradients of a scalar loss against central finite
/// differences for every element of every listed parameter. build_loss must
/// be deterministic: it is re-evaluated on a fresh tape per perturbation.
/// Relative error uses max(|analytic|, |fd|, floor) in the denominator so
/// near-zero gradients are compared on an absolute scale.
inline GradCheckResult grad_check(const std::vector<ParamTensor*>& params,
                                  const std::function<ad::Var(TapeExec&)>& build_loss,
                                  double h = 1e-4, double floor = 1e-4) {
    if (h < 1e-6 || h > 1e-3) throw ConfigError("grad_check: h must lie in [1e-6, 1e-3]");

    const auto eval = [&]() {
        ad::Tape tape;
        TapeExec ex(tape);
        const ad::Var loss = build_loss(ex);
        const double v = tape.value(loss).data[0];
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
        return v;
    };

    // Analytic pass.
    std::vector<Matrix> analytic(params.size());
    {
        ad::Tape tape;
        TapeExec ex(tape);
        const ad::Var loss = build_loss(ex);
        if (!std::isfinite(tape.value(loss).data[0])) throw NumericError("grad_check: non-finite loss");
        tape.backward(loss);
        for (size_t p = 0; p < params.size(); ++p) {
            const Matrix* g = ex.grad_of(*params[p]);
            analytic[p] = g ? *g : Matrix(params[p]->value.rows, params[p]->value.cols);
        }
    }

    GradCheckResult res;
    for (size_t p = 0; p < params.size(); ++p) {
        Matrix& value = params[p]->value;
        for (int i = 0; i < value.size(); ++i) {
            const double saved = value.data[i];
            value.data[i] = saved + h;
            const double f_plus = eval();
            value.data[i] = saved - h;
            const double f_minus = eval();
            value.data[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[p].data[i];
            const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), floor});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = params[p]->name;
                res.worst_index = i;
            }
        }
    }
    return res;
}

} // namespace taper
