#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "touchformer/ops.hpp"

namespace touchformer {

// l2-normalised embeddings z[N x d_e] with their labels.
template <typename Scalar>
struct BatchEmbeddings {
    Tensor<Scalar> z;
    std::vector<int> y;

    void validate(double norm_tol = 1e-4) const {
        if (z.rank() != 2) throw ShapeError("BatchEmbeddings", "z must be [N x d_e], got " + to_string(z.shape()));
        if (static_cast<Index>(y.size()) != z.rows()) {
            throw ValidationError("BatchEmbeddings: " + std::to_string(y.size()) + " labels for " +
                                  std::to_string(z.rows()) + " embeddings");
        }
        for (Index i = 0; i < z.rows(); ++i) {
            const double n = static_cast<double>(z.matrix().row(i).norm());
            if (std::abs(n - 1.0) > norm_tol) {
                throw ValidationError("BatchEmbeddings: row " + std::to_string(i) + " has norm " + std::to_string(n));
            }
        }
    }
};

namespace detail {

inline void check_labels(const std::string& op, std::span<const int> labels, Index rows, Index classes) {
    if (static_cast<Index>(labels.size()) != rows) {
        throw ValidationError(op + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                              " rows");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || (classes > 0 && labels[i] >= classes)) {
            throw ValidationError(op + ": label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                  " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

}  // namespace detail

// Mean softmax cross-entropy over the batch; logits[N x C].
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw ShapeError("cross_entropy", "logits must be [N x C], got " + to_string(s));
    detail::check_labels("cross_entropy", labels, s[0], s[1]);
    const auto& x = logits.matrix();
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_max = x.rowwise().maxCoeff();
    Matrix<Scalar> probs = x;
    probs.colwise() -= row_max;
    probs = probs.array().exp().matrix();
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norm = probs.rowwise().sum();
    probs.array().colwise() /= norm.array();
    const Index n = x.rows();
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) {
        // -log p = lse - x_y, computed from the shifted row for stability.
        total += row_max(i) + std::log(norm(i)) - x(i, labels[static_cast<std::size_t>(i)]);
    }
    std::vector<int> y(labels.begin(), labels.end());
    return logits.tape().record(
        "cross_entropy", Tensor<Scalar>::scalar(total / Scalar(n)), {logits},
        [probs = std::move(probs), y = std::move(y)](const BackwardContext<Scalar>& ctx) {
            const Index n = probs.rows();
            Matrix<Scalar> g = probs;
            for (Index i = 0; i < n; ++i) g(i, y[static_cast<std::size_t>(i)]) -= Scalar(1);
            ctx.grad(0) += g * (ctx.grad_out(0, 0) / Scalar(n));
        });
}

// Cross-instance contrastive loss on unit-norm embeddings z[N x d_e]:
//   L = -(1/|V|) sum_{i in V} log( sum_{j!=i, y_j=y_i} e^{S_ij/tau} / sum_{j!=i} e^{S_ij/tau} )
// with S = z z^T. Anchors without any positive are left out of V; the loss is
// 0 when V is empty.
template <typename Scalar>
Var<Scalar> cer_loss(const Var<Scalar>& z, std::span<const int> labels, double tau) {
    const Shape& s = z.shape();
    if (s.size() != 2) throw ShapeError("cer_loss", "embeddings must be [N x d_e], got " + to_string(s));
    const Index n = s[0];
    if (n < 2) throw ValidationError("cer_loss: batch needs at least 2 embeddings, got " + std::to_string(n));
    if (!(tau > 0.0)) throw ValidationError("cer_loss: temperature must be > 0");
    detail::check_labels("cer_loss", labels, n, 0);

    using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
    Mask others = Mask::Constant(n, n, true);
    Mask positives = Mask::Constant(n, n, false);
    Tensor<Scalar> anchor_weight(Shape{n});
    Index valid = 0;
    for (Index i = 0; i < n; ++i) {
        others(i, i) = false;
        for (Index j = 0; j < n; ++j) {
            positives(i, j) = i != j && labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)];
        }
        if (positives.row(i).any()) {
            anchor_weight[i] = Scalar(1);
            ++valid;
        }
    }
    Tape<Scalar>& tape = z.tape();
    if (valid == 0) return tape.constant(Tensor<Scalar>::scalar(Scalar(0)));
    anchor_weight.matrix() /= Scalar(valid);

    Var<Scalar> sim = scale(matmul(z, transpose(z)), static_cast<Scalar>(1.0 / tau));
    Var<Scalar> per_anchor = sub(masked_logsumexp(sim, others), masked_logsumexp(sim, positives));
    return sum(mul(per_anchor, tape.constant(std::move(anchor_weight))));
}

template <typename Scalar>
Var<Scalar> cer_loss(Tape<Scalar>& tape, const BatchEmbeddings<Scalar>& batch, double tau) {
    batch.validate();
    return cer_loss(tape.constant(batch.z), batch.y, tau);
}

// cross_entropy + lambda * cer_loss; the contrastive term is skipped entirely
// when disabled or lambda == 0.
template <typename Scalar>
Var<Scalar> total_loss(const Var<Scalar>& logits, std::span<const int> labels, const Var<Scalar>& embeddings,
                       double lambda, double tau, bool cer_enabled) {
    if (lambda < 0.0) throw ValidationError("total_loss: lambda must be >= 0");
    Var<Scalar> loss = cross_entropy(logits, labels);
    if (!cer_enabled || lambda == 0.0) return loss;
    if (embeddings.shape().size() != 2 || embeddings.shape()[0] != logits.shape()[0]) {
        throw ShapeError("total_loss", logits.shape(), embeddings.shape());
    }
    return add(loss, scale(cer_loss(embeddings, labels, tau), static_cast<Scalar>(lambda)));
}

}  // namespace touchformer
