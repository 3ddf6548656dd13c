#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "touchformer/layers.hpp"

using namespace touchformer;
using touchformer::testing::random_dim;
using touchformer::testing::random_tensor;
using touchformer::testing::weighted_sum;
using namespace touchformer::oracle;

TEST(Linear, ShapesAndInit) {
    Rng rng(1);
    LinearLayer<float> lin(5, 3, rng);
    EXPECT_EQ(lin.weight.shape(), (Shape{5, 3}));
    EXPECT_EQ(lin.bias.shape(), (Shape{3}));
    const float bound = 1.0f / std::sqrt(5.0f);
    EXPECT_LE(lin.weight.matrix().cwiseAbs().maxCoeff(), bound);
    EXPECT_EQ(lin.bias.matrix().cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Linear, VectorAndMatrixInputsAgree) {
    Rng rng(2);
    std::mt19937_64 gen(3);
    LinearLayer<double> lin(4, 2, rng);
    lin.bias = random_tensor({2}, gen);
    Tape<double> tape;
    Tensor<double> x = random_tensor({1, 4}, gen);
    const auto row = lin(tape.constant(x)).value();
    const auto vec = lin(tape.constant(x.reshaped({4}))).value();
    EXPECT_EQ(vec.shape(), (Shape{2}));
    for (Index i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(row[i], vec[i]);
    EXPECT_THROW(lin(tape.constant(Tensor<double>({3, 5}))), ShapeError);
}

TEST(Conv, IdentityKernelReproducesInput) {
    Rng rng(4);
    std::mt19937_64 gen(5);
    TemporalConv<double> conv(1, 3, 3, rng);
    conv.kernel = Tensor<double>({1, 3, 3});
    for (Index c = 0; c < 3; ++c) conv.kernel[c * 3 + c] = 1.0;
    Tape<double> tape;
    Tensor<double> x = random_tensor({7, 3}, gen);
    EXPECT_EQ(conv(tape.constant(x)).value(), x);
}

TEST(Conv, ZeroInputGivesZeroOutput) {
    Rng rng(6);
    TemporalConv<double> conv(5, 2, 4, rng);
    Tape<double> tape;
    const auto y = conv(tape.constant(Tensor<double>({9, 2}))).value();
    EXPECT_EQ(y, Tensor<double>({9, 4}));
}

TEST(Conv, MatchesSlidingWindowOracle) {
    Rng rng(7);
    std::mt19937_64 gen(8);
    TemporalConv<double> conv(3, 3, 4, rng);
    Tensor<double> x = random_tensor({9, 3}, gen);
    Tape<double> tape;
    EXPECT_LE(max_abs_diff(conv(tape.constant(x)).value(), conv_oracle(x, conv.kernel)), 1e-6);
}

TEST(Conv, OracleOnRandomShapes) {
    std::mt19937_64 gen(9);
    for (int trial = 0; trial < 50; ++trial) {
        const Index k = 2 * random_dim(gen, 0, 4) + 1;
        const Index T = random_dim(gen, 1, 20);
        const Index C = random_dim(gen, 1, 5);
        const Index d = random_dim(gen, 1, 6);
        Rng rng(static_cast<std::uint64_t>(trial));
        TemporalConv<double> conv(k, C, d, rng);
        Tensor<double> x = random_tensor({T, C}, gen);
        Tape<double> tape;
        const auto y = conv1d_forward(tape.constant(x), conv).value();
        EXPECT_EQ(y.shape(), (Shape{T, d}));
        EXPECT_LE(max_abs_diff(y, conv_oracle(x, conv.kernel)), 1e-5) << "k=" << k << " T=" << T;
    }
}

TEST(Conv, KernelSizeOneIsRowwiseLinear) {
    std::mt19937_64 gen(10);
    for (int trial = 0; trial < 20; ++trial) {
        const Index T = random_dim(gen, 1, 10), C = random_dim(gen, 1, 6), d = random_dim(gen, 1, 6);
        Rng rng(static_cast<std::uint64_t>(trial));
        TemporalConv<double> conv(1, C, d, rng);
        LinearLayer<double> lin(C, d, rng);
        lin.weight = conv.kernel.reshaped({C, d});
        Tensor<double> x = random_tensor({T, C}, gen);
        Tape<double> tape;
        EXPECT_LE(max_abs_diff(conv(tape.constant(x)).value(), lin(tape.constant(x)).value()), 1e-6);
    }
}

TEST(Conv, ErrorsAreStructured) {
    Rng rng(11);
    EXPECT_THROW(TemporalConv<float>(4, 2, 3, rng), ValidationError);
    TemporalConv<float> conv(3, 2, 3, rng);
    Tape<float> tape;
    EXPECT_THROW(conv(tape.constant(Tensor<float>({5, 3}))), ShapeError);
}

TEST(PositionalEmbedding, Examples) {
    const auto pe = positional_embedding<double>(6, 8);
    for (Index i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(pe.matrix()(0, i), i % 2 == 0 ? 0.0 : 1.0);
    EXPECT_NEAR(pe.matrix()(1, 0), 0.841471, 1e-6);
    EXPECT_LE(pe.matrix().cwiseAbs().maxCoeff(), 1.0);
    EXPECT_THROW(positional_embedding<double>(4, 7), ValidationError);
}

TEST(PositionalEmbedding, MatchesFormula) {
    const Index T = 30, d = 12;
    const auto pe = positional_embedding<double>(T, d);
    for (Index t = 0; t < T; ++t) {
        for (Index i = 0; i < d / 2; ++i) {
            const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / d);
            EXPECT_NEAR(pe.matrix()(t, 2 * i), std::sin(angle), 1e-12);
            EXPECT_NEAR(pe.matrix()(t, 2 * i + 1), std::cos(angle), 1e-12);
        }
    }
}

TEST(LayerNorm, Examples) {
    LayerNormBlock<double> block(4);
    Tape<double> tape;
    const auto constant = layernorm(tape.constant(Tensor<double>({1, 4}, {3.0, 3.0, 3.0, 3.0})), block).value();
    EXPECT_EQ(constant, Tensor<double>({1, 4}));

    LayerNormBlock<double> pair(2);
    const auto y = layernorm(tape.constant(Tensor<double>({1, 2}, {1.0, -1.0})), pair).value();
    EXPECT_NEAR(y[0], 1.0, 1e-4);
    EXPECT_NEAR(y[1], -1.0, 1e-4);
    EXPECT_THROW(LayerNormBlock<double>(1), ValidationError);
}

TEST(LayerNorm, RowsAreStandardised) {
    std::mt19937_64 gen(12);
    for (int trial = 0; trial < 20; ++trial) {
        const Index T = random_dim(gen, 1, 8), d = random_dim(gen, 2, 16);
        LayerNormBlock<double> block(d);
        Tape<double> tape;
        const auto y = block(tape.constant(random_tensor({T, d}, gen, -5.0, 5.0))).value();
        for (Index t = 0; t < T; ++t) {
            EXPECT_LE(std::abs(y.matrix().row(t).mean()), 1e-6);
            EXPECT_NEAR(y.matrix().row(t).squaredNorm() / static_cast<double>(d), 1.0, 1e-3);
        }
    }
}

TEST(Attention, SingleKeyGivesWeightOne) {
    Rng rng(13);
    std::mt19937_64 gen(14);
    MultiHeadAttention<double> mha(8, 2, rng);
    Tape<double> tape;
    Tensor<double> kv = random_tensor({1, 8}, gen);
    const auto a = attention(tape.constant(random_tensor({3, 8}, gen)), tape.constant(kv), mha).value();
    const auto b = attention(tape.constant(random_tensor({3, 8}, gen)), tape.constant(kv), mha).value();
    // Output rows are W_O(V row) whatever the queries are.
    const Tensor<double> expected = matmul_oracle(matmul_oracle(kv, mha.w_v), mha.w_o);
    for (Index t = 0; t < 3; ++t) {
        for (Index c = 0; c < 8; ++c) {
            EXPECT_NEAR(a.matrix()(t, c), expected[c], 1e-12);
            EXPECT_NEAR(b.matrix()(t, c), expected[c], 1e-12);
        }
    }
}

TEST(Attention, IdenticalKeysAverageValues) {
    std::mt19937_64 gen(15);
    Tape<double> tape;
    Tensor<double> q = random_tensor({2, 4}, gen);
    Tensor<double> k({5, 4});
    for (Index t = 0; t < 5; ++t) k.matrix().row(t) = Eigen::RowVector4d(0.3, -0.2, 0.7, 0.1);
    Tensor<double> v = random_tensor({5, 4}, gen);
    const auto out = scaled_dot_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2).value();
    const Eigen::RowVectorXd mean = v.matrix().colwise().mean();
    for (Index t = 0; t < 2; ++t) EXPECT_LE((out.matrix().row(t) - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, MatchesNaiveOracle) {
    Rng rng(16);
    std::mt19937_64 gen(17);
    MultiHeadAttention<double> mha(8, 2, rng);
    Tensor<double> q = random_tensor({4, 8}, gen);
    Tensor<double> kv = random_tensor({6, 8}, gen);
    Tape<double> tape;
    EXPECT_LE(max_abs_diff(mha(tape.constant(q), tape.constant(kv)).value(), attention_oracle(q, kv, mha)), 1e-5);
}

TEST(Attention, OracleOnRandomShapes) {
    std::mt19937_64 gen(18);
    for (int trial = 0; trial < 50; ++trial) {
        const Index heads = random_dim(gen, 1, 4);
        const Index d = heads * random_dim(gen, 1, 4);
        const Index tq = random_dim(gen, 1, 12), tk = random_dim(gen, 1, 12);
        Rng rng(static_cast<std::uint64_t>(100 + trial));
        MultiHeadAttention<double> mha(d, heads, rng);
        Tensor<double> q = random_tensor({tq, d}, gen, -2.0, 2.0);
        Tensor<double> kv = random_tensor({tk, d}, gen, -2.0, 2.0);
        Tape<double> tape;
        const auto out = mha(tape.constant(q), tape.constant(kv)).value();
        EXPECT_EQ(out.shape(), (Shape{tq, d}));
        EXPECT_LE(max_abs_diff(out, attention_oracle(q, kv, mha)), 1e-5) << "trial " << trial;
    }
}

TEST(Attention, KeyValuePermutationInvariance) {
    std::mt19937_64 gen(19);
    for (int trial = 0; trial < 20; ++trial) {
        const Index tk = random_dim(gen, 2, 10);
        Rng rng(static_cast<std::uint64_t>(trial));
        MultiHeadAttention<double> mha(8, 4, rng);
        Tensor<double> q = random_tensor({3, 8}, gen);
        Tensor<double> kv = random_tensor({tk, 8}, gen);
        std::vector<Index> perm(static_cast<std::size_t>(tk));
        std::iota(perm.begin(), perm.end(), Index{0});
        std::shuffle(perm.begin(), perm.end(), gen);
        Tensor<double> permuted({tk, 8});
        for (Index t = 0; t < tk; ++t) permuted.matrix().row(t) = kv.matrix().row(perm[static_cast<std::size_t>(t)]);
        Tape<double> tape;
        const auto a = mha(tape.constant(q), tape.constant(kv)).value();
        const auto b = mha(tape.constant(q), tape.constant(permuted)).value();
        EXPECT_LE(max_abs_diff(a, b), 1e-6);
    }
}

TEST(Attention, ErrorsAreStructured) {
    Rng rng(20);
    EXPECT_THROW(MultiHeadAttention<double>(6, 4, rng), ValidationError);
    MultiHeadAttention<double> mha(8, 2, rng);
    Tape<double> tape;
    EXPECT_THROW(mha(tape.constant(Tensor<double>({2, 8})), tape.constant(Tensor<double>({2, 6}))), ShapeError);
}

TEST(LayerGradcheck, EveryLayerPasses) {
    std::mt19937_64 gen(21);
    Rng rng(22);
    LinearLayer<double> lin(3, 4, rng);
    lin.bias = random_tensor({4}, gen);
    TemporalConv<double> conv(3, 2, 4, rng);
    LayerNormBlock<double> norm(4);
    norm.gain = random_tensor({4}, gen, 0.5, 1.5);
    norm.shift = random_tensor({4}, gen);
    MultiHeadAttention<double> mha(4, 2, rng);
    FeedForward<double> ffn(4, 6, rng);
    Tensor<double> x = random_tensor({5, 3}, gen);
    Tensor<double> raw = random_tensor({5, 2}, gen);
    Tensor<double> kv = random_tensor({3, 4}, gen);

    std::vector<std::pair<std::string, Tensor<double>*>> named{{"x", &x}, {"raw", &raw}, {"kv", &kv}};
    lin.for_each_parameter("lin", [&](const std::string& n, Tensor<double>& t) { named.emplace_back(n, &t); });
    conv.for_each_parameter("conv", [&](const std::string& n, Tensor<double>& t) { named.emplace_back(n, &t); });
    norm.for_each_parameter("norm", [&](const std::string& n, Tensor<double>& t) { named.emplace_back(n, &t); });
    mha.for_each_parameter("mha", [&](const std::string& n, Tensor<double>& t) { named.emplace_back(n, &t); });
    ffn.for_each_parameter("ffn", [&](const std::string& n, Tensor<double>& t) { named.emplace_back(n, &t); });

    const auto report = gradcheck(
        [&](Tape<double>& tape) {
            Var<double> h = add(lin(tape.parameter(x)), conv(tape.parameter(raw)));
            h = norm(h);
            h = add(h, mha(h, tape.parameter(kv)));
            return weighted_sum(ffn(h), 23);
        },
        named);
    EXPECT_LE(report.max_rel_error, 1e-4) << report.worst;
}
