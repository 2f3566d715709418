#pragma once

// Central finite-difference oracle for tape gradients.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rada/autodiff.hpp"
#include "rada/errors.hpp"

namespace rada {

// Builds a scalar objective on `tape` from the given parameter leaves.
using Objective = std::function<Var(Tape& tape, const std::vector<Var>& params)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;
    std::vector<Tensor> analytic;
};

inline double relative_gradient_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

inline double evaluate_objective(const Objective& f, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.constant(p));
    const double v = f(tape, vars).value()[0];
    if (!std::isfinite(v)) throw OracleError("objective evaluated to a non-finite value");
    return v;
}

inline std::vector<Tensor> analytic_gradients(const Objective& f, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
    Var loss = f(tape, vars);
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(vars.size());
    for (Var v : vars) grads.push_back(tape.grad(v));
    return grads;
}

// Max over all coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
inline GradCheckReport finite_diff_check(const Objective& f, const std::vector<Tensor>& params, double h = 1e-5) {
    if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
    GradCheckReport report;
    report.analytic = analytic_gradients(f, params);
    std::vector<Tensor> probe = params;
    for (std::size_t p = 0; p < probe.size(); ++p) {
        for (std::size_t i = 0; i < probe[p].size(); ++i) {
            const double orig = probe[p][i];
            probe[p][i] = orig + h;
            const double up = evaluate_objective(f, probe);
            probe[p][i] = orig - h;
            const double down = evaluate_objective(f, probe);
            probe[p][i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = report.analytic[p][i];
            const double err = relative_gradient_error(analytic, numeric);
            ++report.coordinates;
            if (err > report.max_rel_error || (p == 0 && i == 0)) {
                report.max_rel_error = err;
                report.worst_param = p;
                report.worst_index = i;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace rada
