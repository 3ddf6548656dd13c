#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "touchformer/tape.hpp"

namespace touchformer {

struct GradcheckOptions {
    double step = 1e-5;
    // Denominator floor for the relative error, so entries whose true
    // gradient is ~0 are compared on an absolute scale instead of blowing up.
    double floor = 1e-4;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::string worst;  // "<tensor name>[flat index]"
    std::size_t checked = 0;

    bool passed(double tol) const { return max_rel_error <= tol; }
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares tape gradients with central differences for every entry of every
// named tensor. `loss` must record a scalar on the given tape and bind the
// checked tensors through Tape::parameter, which lets the check perturb them
// in place.
inline GradcheckReport gradcheck(const std::function<Var<double>(Tape<double>&)>& loss,
                                 const std::vector<std::pair<std::string, Tensor<double>*>>& tensors,
                                 const GradcheckOptions& opts = {}) {
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        Var<double> root = loss(tape);
        tape.backward(root);
        for (const auto& [name, t] : tensors) analytic.push_back(tape.parameter_gradient(*t));
    }
    auto eval = [&]() {
        Tape<double> tape(false);
        return loss(tape).value().item();
    };
    GradcheckReport report;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        Tensor<double>& t = *tensors[k].second;
        for (Index i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + opts.step;
            const double up = eval();
            t[i] = saved - opts.step;
            const double down = eval();
            t[i] = saved;
            const double numeric = (up - down) / (2.0 * opts.step);
            const double err = relative_error(analytic[k][i], numeric, opts.floor);
            ++report.checked;
            if (err > report.max_rel_error || report.worst.empty()) {
                report.max_rel_error = err;
                report.worst = tensors[k].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

// Convenience form: the loss receives one leaf per input tensor.
inline GradcheckReport gradcheck_inputs(
    const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& loss,
    std::vector<Tensor<double>> inputs, const GradcheckOptions& opts = {}) {
    std::vector<std::pair<std::string, Tensor<double>*>> named;
    for (std::size_t i = 0; i < inputs.size(); ++i) named.emplace_back("input" + std::to_string(i), &inputs[i]);
    return gradcheck(
        [&](Tape<double>& tape) {
            std::vector<Var<double>> leaves;
            for (auto& in : inputs) leaves.push_back(tape.parameter(in));
            return loss(tape, leaves);
        },
        named, opts);
}

}  // namespace touchformer
