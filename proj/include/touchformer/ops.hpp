#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "touchformer/tape.hpp"

namespace touchformer {

enum class Elementwise { Add, Sub, Mul, Scale, Relu, Sigmoid, Exp, Log };
enum class Reduction { Sum, Mean, Max };

namespace detail {

// How the right operand of a binary op lines up with the left one.
enum class Broadcast { Same, Scalar, Column };

inline Broadcast broadcast_mode(const std::string& op, const Shape& a, const Shape& b) {
    if (a == b) return Broadcast::Same;
    if (shape_size(b) == 1) return Broadcast::Scalar;
    // Trailing singleton: b equals a except that its last axis is 1.
    if (a.size() == b.size() && !b.empty() && b.back() == 1 &&
        std::equal(a.begin(), a.end() - 1, b.begin())) {
        return Broadcast::Column;
    }
    throw ShapeError(op, a, b);
}

template <typename Scalar>
Matrix<Scalar> expand(const Matrix<Scalar>& b, Broadcast mode, Index rows, Index cols) {
    switch (mode) {
        case Broadcast::Same:
            return b;
        case Broadcast::Scalar:
            return Matrix<Scalar>::Constant(rows, cols, b(0, 0));
        case Broadcast::Column:
            return b.col(0).replicate(1, cols);
    }
    return b;
}

// Folds a full-size gradient back onto the broadcast operand.
template <typename Scalar>
void reduce_into(Matrix<Scalar>& dst, const Matrix<Scalar>& g, Broadcast mode) {
    switch (mode) {
        case Broadcast::Same:
            dst += g;
            break;
        case Broadcast::Scalar:
            dst(0, 0) += g.sum();
            break;
        case Broadcast::Column:
            dst.col(0) += g.rowwise().sum();
            break;
    }
}

inline void require_matrix_rank(const std::string& op, const Shape& s) {
    if (s.size() > 2) throw ShapeError(op, "expected rank <= 2, got " + to_string(s));
}

// True when `axis` runs along the columns of the 2-D storage view.
inline bool axis_is_last(const std::string& op, const Shape& s, Index axis) {
    require_matrix_rank(op, s);
    const auto rank = static_cast<Index>(s.size());
    if (rank == 0 || axis < 0 || axis >= rank) {
        throw ShapeError(op, "axis " + std::to_string(axis) + " invalid for shape " + to_string(s));
    }
    return axis == rank - 1;
}

inline Shape drop_axis(const Shape& s, Index axis) {
    Shape out = s;
    out.erase(out.begin() + axis);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
    const auto mode = detail::broadcast_mode("add", a.shape(), b.shape());
    const auto& am = a.matrix();
    Matrix<Scalar> out = am + detail::expand(b.matrix(), mode, am.rows(), am.cols());
    return a.tape().record("add", Tensor<Scalar>(a.shape(), std::move(out)), {a, b},
                           [mode](const BackwardContext<Scalar>& ctx) {
                               if (ctx.needs(0)) ctx.grad(0) += ctx.grad_out;
                               if (ctx.needs(1)) detail::reduce_into(ctx.grad(1), ctx.grad_out, mode);
                           });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
    const auto mode = detail::broadcast_mode("sub", a.shape(), b.shape());
    const auto& am = a.matrix();
    Matrix<Scalar> out = am - detail::expand(b.matrix(), mode, am.rows(), am.cols());
    return a.tape().record("sub", Tensor<Scalar>(a.shape(), std::move(out)), {a, b},
                           [mode](const BackwardContext<Scalar>& ctx) {
                               if (ctx.needs(0)) ctx.grad(0) += ctx.grad_out;
                               if (ctx.needs(1)) detail::reduce_into<Scalar>(ctx.grad(1), -ctx.grad_out, mode);
                           });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
    const auto mode = detail::broadcast_mode("mul", a.shape(), b.shape());
    const auto& am = a.matrix();
    Matrix<Scalar> out = am.cwiseProduct(detail::expand(b.matrix(), mode, am.rows(), am.cols()));
    return a.tape().record("mul", Tensor<Scalar>(a.shape(), std::move(out)), {a, b},
                           [mode](const BackwardContext<Scalar>& ctx) {
                               const auto& x = ctx.in(0);
                               if (ctx.needs(0)) {
                                   ctx.grad(0) += ctx.grad_out.cwiseProduct(
                                       detail::expand(ctx.in(1), mode, x.rows(), x.cols()));
                               }
                               if (ctx.needs(1)) {
                                   detail::reduce_into<Scalar>(ctx.grad(1), ctx.grad_out.cwiseProduct(x), mode);
                               }
                           });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
    Matrix<Scalar> out = a.matrix() * s;
    return a.tape().record("scale", Tensor<Scalar>(a.shape(), std::move(out)), {a},
                           [s](const BackwardContext<Scalar>& ctx) { ctx.grad(0) += ctx.grad_out * s; });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
    Matrix<Scalar> out = a.matrix().cwiseMax(Scalar(0));
    return a.tape().record("relu", Tensor<Scalar>(a.shape(), std::move(out)), {a},
                           [](const BackwardContext<Scalar>& ctx) {
                               ctx.grad(0).array() +=
                                   (ctx.in(0).array() > Scalar(0)).select(ctx.grad_out.array(), Scalar(0));
                           });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
    Matrix<Scalar> out = (Scalar(1) + (-a.matrix().array()).exp()).inverse().matrix();
    return a.tape().record("sigmoid", Tensor<Scalar>(a.shape(), std::move(out)), {a},
                           [](const BackwardContext<Scalar>& ctx) {
                               const auto y = ctx.output.matrix().array();
                               ctx.grad(0).array() += ctx.grad_out.array() * y * (Scalar(1) - y);
                           });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
    Matrix<Scalar> out = a.matrix().array().exp().matrix();
    return a.tape().record("exp", Tensor<Scalar>(a.shape(), std::move(out)), {a},
                           [](const BackwardContext<Scalar>& ctx) {
                               ctx.grad(0).array() += ctx.grad_out.array() * ctx.output.matrix().array();
                           });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
    if ((a.matrix().array() <= Scalar(0)).any()) {
        throw DomainError("log: input has non-positive entries (shape " + to_string(a.shape()) + ")");
    }
    Matrix<Scalar> out = a.matrix().array().log().matrix();
    return a.tape().record("log", Tensor<Scalar>(a.shape(), std::move(out)), {a},
                           [](const BackwardContext<Scalar>& ctx) {
                               ctx.grad(0).array() += ctx.grad_out.array() / ctx.in(0).array();
                           });
}

// Dispatching form. Binary kinds need `b`; Scale uses `factor`.
template <typename Scalar>
Var<Scalar> elementwise(Elementwise op, const Var<Scalar>& a,
                        std::optional<std::type_identity_t<Var<Scalar>>> b = std::nullopt,
                        std::type_identity_t<Scalar> factor = Scalar(1)) {
    auto rhs = [&]() -> const Var<Scalar>& {
        if (!b) throw ValidationError("elementwise: binary op requires a second operand");
        return *b;
    };
    switch (op) {
        case Elementwise::Add:
            return add(a, rhs());
        case Elementwise::Sub:
            return sub(a, rhs());
        case Elementwise::Mul:
            return mul(a, rhs());
        case Elementwise::Scale:
            return scale(a, factor);
        case Elementwise::Relu:
            return relu(a);
        case Elementwise::Sigmoid:
            return sigmoid(a);
        case Elementwise::Exp:
            return exp(a);
        case Elementwise::Log:
            return log(a);
    }
    throw ValidationError("elementwise: unknown op");
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }

// x[r x c] + bias[c], bias broadcast over rows.
template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
    detail::require_matrix_rank("add_bias", x.shape());
    if (bias.shape() != Shape{x.value().cols()}) throw ShapeError("add_bias", x.shape(), bias.shape());
    Matrix<Scalar> out = x.matrix().rowwise() + bias.matrix().row(0);
    return x.tape().record("add_bias", Tensor<Scalar>(x.shape(), std::move(out)), {x, bias},
                           [](const BackwardContext<Scalar>& ctx) {
                               if (ctx.needs(0)) ctx.grad(0) += ctx.grad_out;
                               if (ctx.needs(1)) ctx.grad(1) += ctx.grad_out.colwise().sum();
                           });
}

// Inverted dropout: zeroes each entry with probability `rate` and rescales
// survivors by 1/(1-rate). rate == 0 returns `a` unchanged.
template <typename Scalar, typename Generator>
Var<Scalar> dropout(const Var<Scalar>& a, double rate, Generator& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must lie in [0, 1)");
    if (rate == 0.0) return a;
    std::bernoulli_distribution keep(1.0 - rate);
    Tensor<Scalar> mask(a.shape());
    const Scalar scale_up = Scalar(1.0 / (1.0 - rate));
    for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? scale_up : Scalar(0);
    return mul(a, a.tape().constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) throw ShapeError("matmul", sa, sb);
    Matrix<Scalar> out = a.matrix() * b.matrix();
    return a.tape().record("matmul", Tensor<Scalar>::from_matrix(std::move(out)), {a, b},
                           [](const BackwardContext<Scalar>& ctx) {
                               if (ctx.needs(0)) ctx.grad(0).noalias() += ctx.grad_out * ctx.in(1).transpose();
                               if (ctx.needs(1)) ctx.grad(1).noalias() += ctx.in(0).transpose() * ctx.grad_out;
                           });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
    if (a.shape().size() != 2) throw ShapeError("transpose", "expected rank 2, got " + to_string(a.shape()));
    Matrix<Scalar> out = a.matrix().transpose();
    return a.tape().record("transpose", Tensor<Scalar>::from_matrix(std::move(out)), {a},
                           [](const BackwardContext<Scalar>& ctx) { ctx.grad(0) += ctx.grad_out.transpose(); });
}

// ---------------------------------------------------------------------------
// Normalisation and reductions

namespace detail {

// Row-wise softmax in place. Row statistics are materialised first; inside a
// lazy expression Eigen may re-reduce the row once per coefficient.
template <typename Scalar>
void softmax_rows(Matrix<Scalar>& x) {
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_max = x.rowwise().maxCoeff();
    x.colwise() -= row_max;
    x = x.array().exp().matrix();
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_sum = x.rowwise().sum();
    x.array().colwise() /= row_sum.array();
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a, Index axis) {
    const bool along_cols = detail::axis_is_last("softmax", a.shape(), axis);
    // Work on a view where the softmax axis runs along columns.
    Matrix<Scalar> x = along_cols ? a.matrix() : Matrix<Scalar>(a.matrix().transpose());
    detail::softmax_rows(x);
    Matrix<Scalar> y = std::move(x);
    if (!along_cols) y.transposeInPlace();
    return a.tape().record("softmax", Tensor<Scalar>(a.shape(), std::move(y)), {a},
                           [along_cols](const BackwardContext<Scalar>& ctx) {
                               const auto& y = ctx.output.matrix();
                               Matrix<Scalar> gy = ctx.grad_out.cwiseProduct(y);
                               if (along_cols) {
                                   const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> total = gy.rowwise().sum();
                                   ctx.grad(0) += gy - (y.array().colwise() * total.array()).matrix();
                               } else {
                                   const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> total = gy.colwise().sum();
                                   ctx.grad(0) += gy - (y.array().rowwise() * total.array()).matrix();
                               }
                           });
}

template <typename Scalar>
Var<Scalar> reduce(Reduction op, const Var<Scalar>& a, Index axis) {
    const bool along_cols = detail::axis_is_last("reduce", a.shape(), axis);
    const auto& x = a.matrix();
    Shape out_shape = detail::drop_axis(a.shape(), axis);
    Matrix<Scalar> out;
    std::vector<Index> argmax;
    if (along_cols) {
        // Result indexed by row.
        switch (op) {
            case Reduction::Sum:
                out = x.rowwise().sum().transpose();
                break;
            case Reduction::Mean:
                out = (x.rowwise().sum() / Scalar(x.cols())).transpose();
                break;
            case Reduction::Max:
                out.resize(1, x.rows());
                argmax.resize(static_cast<std::size_t>(x.rows()));
                for (Index r = 0; r < x.rows(); ++r) out(0, r) = x.row(r).maxCoeff(&argmax[r]);
                break;
        }
    } else {
        switch (op) {
            case Reduction::Sum:
                out = x.colwise().sum();
                break;
            case Reduction::Mean:
                out = x.colwise().sum() / Scalar(x.rows());
                break;
            case Reduction::Max:
                out.resize(1, x.cols());
                argmax.resize(static_cast<std::size_t>(x.cols()));
                for (Index c = 0; c < x.cols(); ++c) out(0, c) = x.col(c).maxCoeff(&argmax[c]);
                break;
        }
    }
    return a.tape().record(
        "reduce", Tensor<Scalar>(out_shape, std::move(out)), {a},
        [op, along_cols, argmax = std::move(argmax)](const BackwardContext<Scalar>& ctx) {
            auto& g = ctx.grad(0);
            const auto& go = ctx.grad_out;
            if (op == Reduction::Max) {
                for (std::size_t i = 0; i < argmax.size(); ++i) {
                    const auto k = static_cast<Index>(i);
                    if (along_cols) g(k, argmax[i]) += go(0, k);
                    else g(argmax[i], k) += go(0, k);
                }
                return;
            }
            const Scalar w = op == Reduction::Mean ? Scalar(1) / Scalar(along_cols ? g.cols() : g.rows())
                                                    : Scalar(1);
            if (along_cols) g += (go.transpose() * w).replicate(1, g.cols());
            else g += (go * w).replicate(g.rows(), 1);
        });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
    const Scalar total = a.matrix().sum();
    return a.tape().record("sum", Tensor<Scalar>::scalar(total), {a},
                           [](const BackwardContext<Scalar>& ctx) { ctx.grad(0).array() += ctx.grad_out(0, 0); });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
    return scale(sum(a), Scalar(1) / Scalar(a.value().size()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
    Tensor<Scalar> out = a.value().reshaped(std::move(shape));
    return a.tape().record("reshape", std::move(out), {a}, [](const BackwardContext<Scalar>& ctx) {
        auto& g = ctx.grad(0);
        g += Eigen::Map<const Matrix<Scalar>>(ctx.grad_out.data(), g.rows(), g.cols());
    });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
    if (parts.empty()) throw ValidationError("concat: no inputs");
    const Shape& first = parts.front().shape();
    const bool along_cols = detail::axis_is_last("concat", first, axis);
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (static_cast<Index>(i) != axis && s[i] != first[i]) throw ShapeError("concat", first, s);
        }
        out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    }
    Tensor<Scalar> out(out_shape);
    std::vector<Index> offsets;
    Index offset = 0;
    for (const auto& p : parts) {
        const auto& m = p.matrix();
        offsets.push_back(offset);
        if (along_cols) {
            out.matrix().middleCols(offset, m.cols()) = m;
            offset += m.cols();
        } else {
            out.matrix().middleRows(offset, m.rows()) = m;
            offset += m.rows();
        }
    }
    return parts.front().tape().record(
        "concat", std::move(out), parts, [along_cols, offsets](const BackwardContext<Scalar>& ctx) {
            for (std::size_t k = 0; k < offsets.size(); ++k) {
                if (!ctx.needs(k)) continue;
                auto& g = ctx.grad(k);
                if (along_cols) g += ctx.grad_out.middleCols(offsets[k], g.cols());
                else g += ctx.grad_out.middleRows(offsets[k], g.rows());
            }
        });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, Index axis, Index begin, Index length) {
    const bool along_cols = detail::axis_is_last("slice", a.shape(), axis);
    const Index extent = a.shape()[static_cast<std::size_t>(axis)];
    if (begin < 0 || length <= 0 || begin + length > extent) {
        throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(begin + length) +
                                      ") outside axis of length " + std::to_string(extent));
    }
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = length;
    Matrix<Scalar> out = along_cols ? Matrix<Scalar>(a.matrix().middleCols(begin, length))
                                    : Matrix<Scalar>(a.matrix().middleRows(begin, length));
    return a.tape().record("slice", Tensor<Scalar>(out_shape, std::move(out)), {a},
                           [along_cols, begin, length](const BackwardContext<Scalar>& ctx) {
                               if (along_cols) ctx.grad(0).middleCols(begin, length) += ctx.grad_out;
                               else ctx.grad(0).middleRows(begin, length) += ctx.grad_out;
                           });
}

// ---------------------------------------------------------------------------
// Fused ops with hand-written adjoints

// Per-row standardisation followed by gain/shift: x[T x d], gain[d], shift[d].
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& shift, Scalar eps) {
    detail::require_matrix_rank("layer_norm", x.shape());
    const Index d = x.value().cols();
    if (gain.shape() != Shape{d}) throw ShapeError("layer_norm", x.shape(), gain.shape());
    if (shift.shape() != Shape{d}) throw ShapeError("layer_norm", x.shape(), shift.shape());
    const auto& xm = x.matrix();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mu = xm.rowwise().mean();
    Matrix<Scalar> xhat = xm.colwise() - mu;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std =
        ((xhat.array().square().rowwise().sum() / Scalar(d)) + eps).rsqrt().matrix();
    xhat.array().colwise() *= inv_std.array();
    Matrix<Scalar> out = (xhat.array().rowwise() * gain.matrix().row(0).array()).matrix();
    out.rowwise() += shift.matrix().row(0);
    return x.tape().record(
        "layer_norm", Tensor<Scalar>(x.shape(), std::move(out)), {x, gain, shift},
        [xhat = std::move(xhat), inv_std = std::move(inv_std)](const BackwardContext<Scalar>& ctx) {
            const auto& go = ctx.grad_out;
            if (ctx.needs(1)) ctx.grad(1) += go.cwiseProduct(xhat).colwise().sum();
            if (ctx.needs(2)) ctx.grad(2) += go.colwise().sum();
            if (ctx.needs(0)) {
                const Index d = go.cols();
                Matrix<Scalar> dxhat = (go.array().rowwise() * ctx.in(1).row(0).array()).matrix();
                Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m1 = dxhat.rowwise().sum() / Scalar(d);
                Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m2 =
                    dxhat.cwiseProduct(xhat).rowwise().sum() / Scalar(d);
                Matrix<Scalar> dx = dxhat.colwise() - m1;
                dx -= (xhat.array().colwise() * m2.array()).matrix();
                dx.array().colwise() *= inv_std.array();
                ctx.grad(0) += dx;
            }
        });
}

// Scales every row to unit l2 norm. `eps` guards the all-zero row.
template <typename Scalar>
Var<Scalar> l2_normalize(const Var<Scalar>& x, Scalar eps = Scalar(1e-12)) {
    const auto& xm = x.matrix();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norm = (xm.rowwise().squaredNorm().array() + eps).sqrt().matrix();
    Matrix<Scalar> out = xm.array().colwise() / norm.array();
    return x.tape().record("l2_normalize", Tensor<Scalar>(x.shape(), std::move(out)), {x},
                           [norm = std::move(norm)](const BackwardContext<Scalar>& ctx) {
                               const auto& y = ctx.output.matrix();
                               const auto& go = ctx.grad_out;
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = go.cwiseProduct(y).rowwise().sum();
                               Matrix<Scalar> dx = go - (y.array().colwise() * dot.array()).matrix();
                               dx.array().colwise() /= norm.array();
                               ctx.grad(0) += dx;
                           });
}

// Row-wise log-sum-exp over the entries where `mask` is true. Rows with an
// empty mask produce 0 and receive no gradient. Result has shape [rows].
template <typename Scalar>
Var<Scalar> masked_logsumexp(const Var<Scalar>& x, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
    detail::require_matrix_rank("masked_logsumexp", x.shape());
    const auto& xm = x.matrix();
    if (mask.rows() != xm.rows() || mask.cols() != xm.cols()) {
        throw ShapeError("masked_logsumexp", x.shape(), Shape{mask.rows(), mask.cols()});
    }
    const Index rows = xm.rows();
    Matrix<Scalar> out = Matrix<Scalar>::Zero(1, rows);
    // Normalised weights exp(x - lse) on the mask, kept for the adjoint.
    Matrix<Scalar> weights = Matrix<Scalar>::Zero(xm.rows(), xm.cols());
    for (Index r = 0; r < rows; ++r) {
        if (!mask.row(r).any()) continue;
        const Scalar m = mask.row(r).select(xm.row(r).array(), -std::numeric_limits<Scalar>::infinity()).maxCoeff();
        Eigen::Array<Scalar, 1, Eigen::Dynamic> e =
            mask.row(r).select((xm.row(r).array() - m).exp(), Scalar(0));
        const Scalar total = e.sum();
        out(0, r) = m + std::log(total);
        weights.row(r) = (e / total).matrix();
    }
    Shape out_shape{rows};
    return x.tape().record("masked_logsumexp", Tensor<Scalar>(out_shape, std::move(out)), {x},
                           [weights = std::move(weights)](const BackwardContext<Scalar>& ctx) {
                               ctx.grad(0) += (weights.array().colwise() *
                                               ctx.grad_out.row(0).transpose().array())
                                                  .matrix();
                           });
}

// Same-length 1-D convolution over time. x[T x C_in], kernel[k, C_in, d] with
// odd k; zero padding of (k-1)/2 on both ends.
//   y[t, o] = sum_j sum_c x[t + j - pad, c] * kernel[j, c, o]
template <typename Scalar>
Var<Scalar> conv1d(const Var<Scalar>& x, const Var<Scalar>& kernel) {
    const Shape& xs = x.shape();
    const Shape& ks = kernel.shape();
    if (xs.size() != 2 || ks.size() != 3) throw ShapeError("conv1d", xs, ks);
    if (ks[1] != xs[1]) throw ShapeError("conv1d", xs, ks);
    const Index k = ks[0];
    if (k % 2 == 0) throw ShapeError("conv1d", "kernel size must be odd, got " + std::to_string(k));
    const Index T = xs[0];
    const Index c_in = xs[1];
    const Index pad = (k - 1) / 2;

    // im2col: row t holds the k taps feeding output step t.
    Matrix<Scalar> cols = Matrix<Scalar>::Zero(T, k * c_in);
    const auto& xm = x.matrix();
    for (Index t = 0; t < T; ++t) {
        for (Index j = 0; j < k; ++j) {
            const Index src = t + j - pad;
            if (src >= 0 && src < T) cols.block(t, j * c_in, 1, c_in) = xm.row(src);
        }
    }
    Matrix<Scalar> out = cols * kernel.matrix();
    return x.tape().record(
        "conv1d", Tensor<Scalar>::from_matrix(std::move(out)), {x, kernel},
        [cols = std::move(cols), k, c_in, pad](const BackwardContext<Scalar>& ctx) {
            if (ctx.needs(1)) ctx.grad(1).noalias() += cols.transpose() * ctx.grad_out;
            if (ctx.needs(0)) {
                Matrix<Scalar> dcols = ctx.grad_out * ctx.in(1).transpose();
                auto& g = ctx.grad(0);
                const Index T = g.rows();
                for (Index t = 0; t < T; ++t) {
                    for (Index j = 0; j < k; ++j) {
                        const Index src = t + j - pad;
                        if (src >= 0 && src < T) g.row(src) += dcols.block(t, j * c_in, 1, c_in);
                    }
                }
            }
        });
}

// Multi-head scaled dot-product attention on already-projected inputs:
// q[Tq x d], k[Tk x d], v[Tk x d]; head h uses columns [h*dk, (h+1)*dk).
// Output is the per-head softmax(q_h k_h^T / sqrt(dk)) v_h, heads side by side.
template <typename Scalar>
Var<Scalar> scaled_dot_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, Index heads) {
    const Shape& qs = q.shape();
    const Shape& ks = k.shape();
    const Shape& vs = v.shape();
    if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2) throw ShapeError("attention", qs, ks);
    if (qs[1] != ks[1]) throw ShapeError("attention", qs, ks);
    if (ks != vs) throw ShapeError("attention", ks, vs);
    const Index d = qs[1];
    if (heads <= 0 || d % heads != 0) {
        throw ShapeError("attention", std::to_string(heads) + " heads do not divide width " + std::to_string(d));
    }
    const Index dk = d / heads;
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(Scalar(dk));
    const auto& qm = q.matrix();
    const auto& km = k.matrix();
    const auto& vm = v.matrix();

    auto probs = std::make_shared<std::vector<Matrix<Scalar>>>();
    probs->reserve(static_cast<std::size_t>(heads));
    Matrix<Scalar> out(qm.rows(), d);
    for (Index h = 0; h < heads; ++h) {
        Matrix<Scalar> s = (qm.middleCols(h * dk, dk) * km.middleCols(h * dk, dk).transpose()) * inv_sqrt;
        detail::softmax_rows(s);
        out.middleCols(h * dk, dk).noalias() = s * vm.middleCols(h * dk, dk);
        probs->push_back(std::move(s));
    }
    return q.tape().record(
        "attention", Tensor<Scalar>::from_matrix(std::move(out)), {q, k, v},
        [probs, heads, dk, inv_sqrt](const BackwardContext<Scalar>& ctx) {
            const auto& qm = ctx.in(0);
            const auto& km = ctx.in(1);
            const auto& vm = ctx.in(2);
            for (Index h = 0; h < heads; ++h) {
                const Matrix<Scalar>& p = (*probs)[static_cast<std::size_t>(h)];
                const auto go = ctx.grad_out.middleCols(h * dk, dk);
                if (ctx.needs(2)) ctx.grad(2).middleCols(h * dk, dk).noalias() += p.transpose() * go;
                if (!ctx.needs(0) && !ctx.needs(1)) continue;
                Matrix<Scalar> dp = go * vm.middleCols(h * dk, dk).transpose();
                Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot = dp.cwiseProduct(p).rowwise().sum();
                Matrix<Scalar> ds = p.cwiseProduct(dp.colwise() - row_dot) * inv_sqrt;
                if (ctx.needs(0)) ctx.grad(0).middleCols(h * dk, dk).noalias() += ds * km.middleCols(h * dk, dk);
                if (ctx.needs(1)) {
                    ctx.grad(1).middleCols(h * dk, dk).noalias() += ds.transpose() * qm.middleCols(h * dk, dk);
                }
            }
        });
}

}  // namespace touchformer
