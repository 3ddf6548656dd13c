#pragma once

#include <cmath>
#include <random>
#include <string>

#include "touchformer/ops.hpp"

namespace touchformer {

using Rng = std::mt19937_64;

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), drawn in row-major order.
template <typename Scalar>
Tensor<Scalar> fan_in_uniform(Shape shape, Index fan_in, Rng& rng) {
    Tensor<Scalar> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
    return t;
}

template <typename Scalar>
struct LinearLayer {
    Tensor<Scalar> weight;  // [in, out]
    Tensor<Scalar> bias;    // [out]

    LinearLayer() = default;
    LinearLayer(Index in, Index out, Rng& rng)
        : weight(fan_in_uniform<Scalar>({in, out}, in, rng)), bias(Shape{out}) {}

    Index in_features() const { return weight.dim(0); }
    Index out_features() const { return weight.dim(1); }

    // x is [T x in] (one row per time step) or a single [in] vector.
    Var<Scalar> operator()(const Var<Scalar>& x) const {
        Tape<Scalar>& tape = x.tape();
        if (x.shape().size() == 1) {
            Var<Scalar> row = reshape(x, Shape{1, x.shape()[0]});
            return reshape((*this)(row), Shape{out_features()});
        }
        if (x.shape().size() != 2 || x.shape()[1] != in_features()) throw ShapeError("linear", x.shape(), weight.shape());
        return add_bias(matmul(x, tape.parameter(weight)), tape.parameter(bias));
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".weight", weight);
        fn(prefix + ".bias", bias);
    }
};

// Same-length temporal convolution projecting C_in raw channels to width d.
template <typename Scalar>
struct TemporalConv {
    Tensor<Scalar> kernel;  // [k, C_in, d]

    TemporalConv() = default;
    TemporalConv(Index kernel_size, Index in_channels, Index dim, Rng& rng)
        : kernel(fan_in_uniform<Scalar>({kernel_size, in_channels, dim}, kernel_size * in_channels, rng)) {
        if (kernel_size <= 0 || kernel_size % 2 == 0) {
            throw ValidationError("TemporalConv: kernel size must be odd and positive, got " +
                                  std::to_string(kernel_size));
        }
    }

    Index kernel_size() const { return kernel.dim(0); }
    Index in_channels() const { return kernel.dim(1); }
    Index dim() const { return kernel.dim(2); }

    Var<Scalar> operator()(const Var<Scalar>& x) const {
        if (x.shape().size() != 2 || x.shape()[1] != in_channels()) throw ShapeError("conv1d", x.shape(), kernel.shape());
        return conv1d(x, x.tape().parameter(kernel));
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".kernel", kernel);
    }
};

template <typename Scalar>
Var<Scalar> conv1d_forward(const Var<Scalar>& x, const TemporalConv<Scalar>& layer) {
    return layer(x);
}

// Sinusoidal table: PE[t,2i] = sin(t / 10000^(2i/d)), PE[t,2i+1] = cos(same).
template <typename Scalar>
Tensor<Scalar> positional_embedding(Index length, Index dim) {
    if (length <= 0) throw ValidationError("positional_embedding: length must be positive");
    if (dim <= 0 || dim % 2 != 0) {
        throw ValidationError("positional_embedding: dim must be a positive even number, got " + std::to_string(dim));
    }
    Tensor<Scalar> pe({length, dim});
    for (Index i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        for (Index t = 0; t < length; ++t) {
            const double angle = static_cast<double>(t) * freq;
            pe.matrix()(t, 2 * i) = static_cast<Scalar>(std::sin(angle));
            pe.matrix()(t, 2 * i + 1) = static_cast<Scalar>(std::cos(angle));
        }
    }
    return pe;
}

template <typename Scalar>
struct LayerNormBlock {
    Tensor<Scalar> gain;   // [d]
    Tensor<Scalar> shift;  // [d]
    Scalar epsilon = Scalar(1e-5);

    LayerNormBlock() = default;
    explicit LayerNormBlock(Index dim) : gain(Tensor<Scalar>::constant({dim}, Scalar(1))), shift(Shape{dim}) {
        if (dim < 2) throw ValidationError("LayerNormBlock: dim must be >= 2");
    }

    Var<Scalar> operator()(const Var<Scalar>& x) const {
        Tape<Scalar>& tape = x.tape();
        return layer_norm(x, tape.parameter(gain), tape.parameter(shift), epsilon);
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".gain", gain);
        fn(prefix + ".shift", shift);
    }
};

template <typename Scalar>
Var<Scalar> layernorm(const Var<Scalar>& x, const LayerNormBlock<Scalar>& block) {
    return block(x);
}

// Projections are bias-free [d x d] maps applied as x * W.
template <typename Scalar>
struct MultiHeadAttention {
    Index heads = 1;
    Tensor<Scalar> w_q, w_k, w_v, w_o;

    MultiHeadAttention() = default;
    MultiHeadAttention(Index dim, Index num_heads, Rng& rng)
        : heads(num_heads),
          w_q(fan_in_uniform<Scalar>({dim, dim}, dim, rng)),
          w_k(fan_in_uniform<Scalar>({dim, dim}, dim, rng)),
          w_v(fan_in_uniform<Scalar>({dim, dim}, dim, rng)),
          w_o(fan_in_uniform<Scalar>({dim, dim}, dim, rng)) {
        if (num_heads <= 0 || dim % num_heads != 0) {
            throw ValidationError("MultiHeadAttention: " + std::to_string(num_heads) + " heads do not divide d=" +
                                  std::to_string(dim));
        }
    }

    Index dim() const { return w_q.dim(0); }
    Index head_dim() const { return dim() / heads; }

    // Queries from q_in[Tq x d], keys/values from kv_in[Tkv x d]; the two
    // sequences may have different lengths. Output is [Tq x d].
    Var<Scalar> operator()(const Var<Scalar>& q_in, const Var<Scalar>& kv_in) const {
        const Shape& qs = q_in.shape();
        const Shape& ks = kv_in.shape();
        if (qs.size() != 2 || qs[1] != dim()) throw ShapeError("attention", qs, w_q.shape());
        if (ks.size() != 2 || ks[1] != dim()) throw ShapeError("attention", ks, w_k.shape());
        Tape<Scalar>& tape = q_in.tape();
        Var<Scalar> q = matmul(q_in, tape.parameter(w_q));
        Var<Scalar> k = matmul(kv_in, tape.parameter(w_k));
        Var<Scalar> v = matmul(kv_in, tape.parameter(w_v));
        return matmul(scaled_dot_attention(q, k, v, heads), tape.parameter(w_o));
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".w_q", w_q);
        fn(prefix + ".w_k", w_k);
        fn(prefix + ".w_v", w_v);
        fn(prefix + ".w_o", w_o);
    }
};

template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q_in, const Var<Scalar>& kv_in, const MultiHeadAttention<Scalar>& mha) {
    return mha(q_in, kv_in);
}

template <typename Scalar>
struct FeedForward {
    LinearLayer<Scalar> up;
    LinearLayer<Scalar> down;

    FeedForward() = default;
    FeedForward(Index dim, Index hidden, Rng& rng) : up(dim, hidden, rng), down(hidden, dim, rng) {}

    Var<Scalar> operator()(const Var<Scalar>& x) const { return down(relu(up(x))); }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn) {
        up.for_each_parameter(prefix + ".up", fn);
        down.for_each_parameter(prefix + ".down", fn);
    }
};

}  // namespace touchformer
