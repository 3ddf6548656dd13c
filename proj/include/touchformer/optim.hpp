#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "touchformer/tensor.hpp"

namespace touchformer {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
    std::vector<Matrix<Scalar>> m;
    std::vector<Matrix<Scalar>> v;
    long t = 0;
};

template <typename Scalar>
using NamedParams = std::vector<std::pair<std::string, Tensor<Scalar>*>>;

// One Adam step with decoupled weight decay:
//   p <- p - lr*wd*p;  m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// Every gradient is checked before any parameter is touched.
template <typename Scalar>
void adam_step(const NamedParams<Scalar>& params, const std::vector<Matrix<Scalar>>& grads, AdamState<Scalar>& state,
               double lr, double weight_decay, const AdamOptions& opt = {}) {
    if (grads.size() != params.size()) {
        throw ValidationError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                              std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i].second->matrix();
        if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols()) {
            throw ShapeError("adam_step", "gradient shape mismatch for " + params[i].first);
        }
        if (!grads[i].allFinite()) throw NumericalError("adam_step: non-finite gradient for " + params[i].first);
    }
    if (state.m.empty()) {
        for (const auto& [name, p] : params) {
            state.m.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
            state.v.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
        }
    } else if (state.m.size() != params.size()) {
        throw ValidationError("adam_step: optimizer state does not match the parameter list");
    }

    ++state.t;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
    const auto b1 = static_cast<Scalar>(opt.beta1);
    const auto b2 = static_cast<Scalar>(opt.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second->matrix();
        const Matrix<Scalar>& g = grads[i];
        if (weight_decay != 0.0) p *= static_cast<Scalar>(1.0 - lr * weight_decay);
        state.m[i] = b1 * state.m[i] + (Scalar(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
        if (lr == 0.0) continue;
        const auto m_hat = state.m[i].array() / static_cast<Scalar>(bc1);
        const auto v_hat = state.v[i].array() / static_cast<Scalar>(bc2);
        p.array() -= static_cast<Scalar>(lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(opt.eps));
    }
}

// Cosine annealing from lr0 at t = 0 down to 0 at t = total; t past the end
// clamps to 0.
inline double lr_at(long t, long total, double lr0) {
    if (total <= 0 || t >= total) return 0.0;
    if (t <= 0) return lr0;
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

}  // namespace touchformer
