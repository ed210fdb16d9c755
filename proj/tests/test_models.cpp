#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace loadtl;
using loadtl::testing::random_matrix;

namespace {

ModelDims small_dims(Architecture arch) {
    ModelDims d;
    d.arch = arch;
    d.features = 4;
    d.window = 6;
    d.hidden = 5;
    d.d_model = 6;
    d.d_attn = 5;
    d.blocks = 2;
    d.mlp_hidden = 7;
    return d;
}

ModelParams random_params(const ModelDims& d, std::uint64_t seed) {
    Rng rng(seed);
    ModelParams p = init_params(d, rng);
    p.for_each([&](const std::string& name, Matrix& m) {
        if (is_bias_like(name))
            for (double& v : m.values()) v += rng.uniform(-0.3, 0.3);
    });
    return p;
}

}  // namespace

TEST(Init, DeterministicAndGlorotBounded) {
    for (auto arch : {Architecture::rnn, Architecture::lstm, Architecture::transformer}) {
        Rng a(5), b(5);
        const auto pa = init_params(small_dims(arch), a);
        const auto pb = init_params(small_dims(arch), b);
        EXPECT_TRUE(pa == pb);
        pa.for_each([&](const std::string& name, const Matrix& m) {
            if (is_bias_like(name)) return;
            const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
            for (double v : m.values()) EXPECT_LE(std::abs(v), limit) << name;
        });
    }
}

TEST(Init, BiasesAndForgetGate) {
    Rng rng(1);
    const auto p = init_params(small_dims(Architecture::lstm), rng);
    const auto& l = std::get<LstmParams>(p.weights);
    for (double v : l.b_f.values()) EXPECT_EQ(v, 1.0);
    for (double v : l.b_i.values()) EXPECT_EQ(v, 0.0);
    Rng rng2(1);
    const auto t = init_params(small_dims(Architecture::transformer), rng2);
    const auto& tw = std::get<TransformerParams>(t.weights);
    for (double v : tw.blocks[0].ln1_gain.values()) EXPECT_EQ(v, 1.0);
    for (double v : tw.blocks[0].ln1_offset.values()) EXPECT_EQ(v, 0.0);
}

TEST(Init, ZeroDimensionRejected) {
    auto d = small_dims(Architecture::rnn);
    d.hidden = 0;
    Rng rng(1);
    EXPECT_THROW(init_params(d, rng), ValidationError);
    auto t = small_dims(Architecture::transformer);
    t.d_model = 0;
    EXPECT_THROW(init_params(t, rng), ValidationError);
}

TEST(Init, TensorNamesAndGroups) {
    const auto p = zero_params(small_dims(Architecture::transformer));
    std::vector<std::string> names;
    p.for_each([&](const std::string& n, const Matrix&) { names.push_back(n); });
    EXPECT_EQ(names.front(), "embed.w");
    EXPECT_EQ(names.back(), "head.b");
    EXPECT_EQ(tensor_group("block1.wq"), "block1");
    const auto& tw = std::get<TransformerParams>(p.weights);
    EXPECT_EQ(tw.pos_table.rows(), 6u);
}

TEST(Rnn, ZeroFixedPoint) {
    RnnWeights<Matrix> p{Matrix(3, 2), Matrix(3, 3), Matrix(3, 1), Matrix(1, 3), Matrix(1, 1)};
    const auto [h, o] = rnn_step(Matrix(2, 1), Matrix(3, 1), p);
    EXPECT_EQ(h, Matrix(3, 1));
    EXPECT_EQ(o, Matrix(1, 1));
}

TEST(Rnn, BiasOnly) {
    RnnWeights<Matrix> p{Matrix(2, 2), Matrix(2, 2), Matrix{{0.3}, {-1.2}}, Matrix(1, 2), Matrix(1, 1)};
    const auto [h, o] = rnn_step(Matrix{{5.0}, {-7.0}}, Matrix{{0.9}, {0.1}}, p);
    EXPECT_EQ(h(0, 0), std::tanh(0.3));
    EXPECT_EQ(h(1, 0), std::tanh(-1.2));
}

TEST(Rnn, ScalarHandOracle) {
    RnnWeights<Matrix> p{Matrix{{1.0}}, Matrix{{0.5}}, Matrix{{0.0}}, Matrix{{2.0}}, Matrix{{0.1}}};
    const auto [h, o] = rnn_step(Matrix{{0.2}}, Matrix{{0.4}}, p);
    EXPECT_NEAR(h[0], 0.37995, 1e-5);
    EXPECT_DOUBLE_EQ(h[0], std::tanh(0.4));
    EXPECT_DOUBLE_EQ(o[0], 2.0 * std::tanh(0.4) + 0.1);
}

TEST(Rnn, ShapeMismatch) {
    RnnWeights<Matrix> p{Matrix(3, 2), Matrix(3, 3), Matrix(3, 1), Matrix(1, 3), Matrix(1, 1)};
    EXPECT_THROW(rnn_step(Matrix(4, 1), Matrix(3, 1), p), DimensionError);
}

TEST(Lstm, ZeroWeightsHalveCell) {
    const std::size_t H = 3, F = 2;
    const Matrix g(H, H + F), b(H, 1);
    LstmWeights<Matrix> p{g, g, g, g, b, b, b, b, Matrix(1, H), Matrix(1, 1)};
    const Matrix c{{0.8}, {-2.0}, {0.0}};
    LstmGates<Matrix> gates;
    const auto s = lstm_step(Matrix{{1.0}, {2.0}}, LstmState<Matrix>{Matrix{{0.3}, {0.1}, {0.2}}, c}, p, &gates);
    for (std::size_t i = 0; i < H; ++i) {
        EXPECT_EQ(gates.i[i], 0.5);
        EXPECT_EQ(gates.f[i], 0.5);
        EXPECT_EQ(gates.o[i], 0.5);
        EXPECT_EQ(gates.candidate[i], 0.0);
        EXPECT_EQ(s.c[i], 0.5 * c[i]);
        EXPECT_EQ(s.h[i], 0.5 * std::tanh(0.5 * c[i]));
    }
    const auto zero = lstm_step(Matrix(F, 1), LstmState<Matrix>{Matrix(H, 1), Matrix(H, 1)}, p);
    EXPECT_EQ(zero.h, Matrix(H, 1));
    EXPECT_EQ(zero.c, Matrix(H, 1));
}

TEST(Lstm, ForgetGateLn3) {
    // Scalar cell, input x = 1; w_f acts on [h_prev; x] = [0; 1].
    const Matrix z(1, 2);
    LstmWeights<Matrix> p{z, Matrix{{0.0, std::log(3.0)}}, z, z, Matrix(1, 1), Matrix(1, 1), Matrix(1, 1), Matrix(1, 1),
                          Matrix(1, 1), Matrix(1, 1)};
    LstmGates<Matrix> gates;
    lstm_step(Matrix{{1.0}}, LstmState<Matrix>{Matrix(1, 1), Matrix(1, 1)}, p, &gates);
    EXPECT_NEAR(gates.f[0], 0.75, 1e-15);
}

TEST(Lstm, GatesAndStateBoundedProperty) {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t H = 4, F = 3;
        const double s = rng.uniform(0.1, 20.0);
        LstmWeights<Matrix> p{random_matrix(rng, H, H + F, -s, s), random_matrix(rng, H, H + F, -s, s),
                              random_matrix(rng, H, H + F, -s, s), random_matrix(rng, H, H + F, -s, s),
                              random_matrix(rng, H, 1, -s, s),     random_matrix(rng, H, 1, -s, s),
                              random_matrix(rng, H, 1, -s, s),     random_matrix(rng, H, 1, -s, s),
                              Matrix(1, H),                        Matrix(1, 1)};
        LstmGates<Matrix> g;
        const auto st = lstm_step(random_matrix(rng, F, 1, -5, 5),
                                  LstmState<Matrix>{random_matrix(rng, H, 1), random_matrix(rng, H, 1, -3, 3)}, p, &g);
        for (std::size_t i = 0; i < H; ++i) {
            for (double v : {g.i[i], g.f[i], g.o[i]}) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
            EXPECT_LE(std::abs(st.h[i]), 1.0);
        }
    }
}

TEST(Attention, IdenticalKeysGiveUniformWeights) {
    Rng rng(2);
    const Matrix k = random_matrix(rng, 1, 3);
    Matrix K(4, 3);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) K(r, c) = k(0, c);
    const Matrix V = random_matrix(rng, 4, 2);
    for (auto kernel : {AttentionKernel::cosine, AttentionKernel::scaled_dot}) {
        const auto res = attention(AttentionInputs<Matrix>{random_matrix(rng, 2, 3), K, V}, kernel);
        for (std::size_t q = 0; q < 2; ++q) {
            for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(res.weights(q, j), 0.25, 1e-15);
            for (std::size_t c = 0; c < 2; ++c) {
                const double mean = (V(0, c) + V(1, c) + V(2, c) + V(3, c)) / 4.0;
                EXPECT_NEAR(res.context(q, c), mean, 1e-15);
            }
        }
    }
}

TEST(Attention, OrthogonalKeyClosedForm) {
    const Matrix Q{{1.0, 0.0}};
    const Matrix K{{1.0, 0.0}, {0.0, 1.0}};
    const Matrix V{{2.0, -1.0}, {4.0, 3.0}};
    const auto res = attention(AttentionInputs<Matrix>{Q, K, V}, AttentionKernel::cosine);
    const double w1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    EXPECT_NEAR(res.weights(0, 0), 0.7311, 1e-4);
    EXPECT_NEAR(res.weights(0, 1), 0.2689, 1e-4);
    EXPECT_NEAR(res.weights(0, 0), w1, 1e-15);
    EXPECT_NEAR(res.context(0, 0), w1 * 2.0 + (1 - w1) * 4.0, 1e-14);
    EXPECT_NEAR(res.context(0, 1), w1 * -1.0 + (1 - w1) * 3.0, 1e-14);
}

TEST(Attention, CosineScaleInvariance) {
    Rng rng(3);
    const Matrix Q = random_matrix(rng, 3, 4), K = random_matrix(rng, 5, 4), V = random_matrix(rng, 5, 2);
    const auto base = attention(AttentionInputs<Matrix>{Q, K, V}, AttentionKernel::cosine);
    for (double s : {10.0, 1024.0, 0.125, 3.7}) {
        Matrix K2 = K, Q2 = Q;
        for (std::size_t c = 0; c < 4; ++c) K2(0, c) *= s, Q2(1, c) *= s;
        const auto scaled = attention(AttentionInputs<Matrix>{Q2, K2, V}, AttentionKernel::cosine);
        const bool exact = std::exp2(std::round(std::log2(s))) == s;
        for (std::size_t i = 0; i < base.weights.size(); ++i) {
            if (exact)
                EXPECT_EQ(scaled.weights[i], base.weights[i]) << s;
            else
                EXPECT_NEAR(scaled.weights[i], base.weights[i], 1e-12) << s;
        }
        if (exact) EXPECT_EQ(scaled.context, base.context);
    }
}

TEST(Attention, RowStochasticProperty) {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t nq = 1 + rng.below(6), nk = 1 + rng.below(6), d = 1 + rng.below(5);
        const double s = rng.uniform(0.01, 100.0);
        const AttentionInputs<Matrix> in{random_matrix(rng, nq, d, -s, s), random_matrix(rng, nk, d, -s, s),
                                         random_matrix(rng, nk, 3)};
        for (auto kernel : {AttentionKernel::cosine, AttentionKernel::scaled_dot}) {
            const auto res = attention(in, kernel);
            for (std::size_t r = 0; r < nq; ++r) {
                double sum = 0;
                for (double w : res.weights.row_span(r)) sum += w;
                EXPECT_NEAR(sum, 1.0, 1e-12);
            }
            EXPECT_EQ(res.context, matmul(res.weights, in.V));
        }
    }
}

TEST(Attention, ZeroNormGuard) {
    const auto res = attention(AttentionInputs<Matrix>{Matrix(1, 2), Matrix{{1.0, 2.0}, {3.0, 1.0}}, Matrix{{1.0}, {3.0}}},
                               AttentionKernel::cosine);
    EXPECT_EQ(res.weights(0, 0), 0.5);
    EXPECT_EQ(res.context(0, 0), 2.0);
}

TEST(Attention, ShapeErrors) {
    EXPECT_THROW(attention(AttentionInputs<Matrix>{Matrix(2, 3), Matrix(2, 4), Matrix(2, 1)}, AttentionKernel::cosine),
                 DimensionError);
    EXPECT_THROW(attention(AttentionInputs<Matrix>{Matrix(2, 3), Matrix(2, 3), Matrix(3, 1)}, AttentionKernel::cosine),
                 DimensionError);
}

TEST(Transformer, ConstantHead) {
    auto p = random_params(small_dims(Architecture::transformer), 7);
    auto& tw = std::get<TransformerParams>(p.weights);
    tw.head_w = Matrix(tw.head_w.rows(), 1);
    tw.head_b = Matrix{{0.42}};
    Rng rng(8);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(predict(p, random_matrix(rng, 6, 4)), 0.42);
}

TEST(Transformer, PermutationSensitivity) {
    Rng rng(9);
    const auto p = random_params(small_dims(Architecture::transformer), 10);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix w = random_matrix(rng, 6, 4);
        Matrix swapped = w;
        for (std::size_t c = 0; c < 4; ++c) std::swap(swapped(1, c), swapped(3, c));
        EXPECT_NE(predict(p, w), predict(p, swapped));
    }
}

TEST(Transformer, EqualPositionsArePermutationInvariant) {
    Rng rng(11);
    auto p = random_params(small_dims(Architecture::transformer), 12);
    auto& tw = std::get<TransformerParams>(p.weights);
    for (std::size_t r = 1; r < tw.pos_table.rows(); ++r)
        for (std::size_t c = 0; c < tw.pos_table.cols(); ++c) tw.pos_table(r, c) = tw.pos_table(0, c);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix w = random_matrix(rng, 6, 4);
        Matrix swapped = w;
        // The last row is pooled, so permute among the others.
        for (std::size_t c = 0; c < 4; ++c) std::swap(swapped(0, c), swapped(2, c));
        EXPECT_NEAR(predict(p, w), predict(p, swapped), 1e-12);
    }
}

TEST(Transformer, VariantsAndKernels) {
    Rng rng(13);
    const Matrix w = random_matrix(rng, 6, 4);
    for (bool residual : {true, false})
        for (bool ln : {true, false})
            for (auto kernel : {AttentionKernel::cosine, AttentionKernel::scaled_dot}) {
                auto d = small_dims(Architecture::transformer);
                d.residual = residual;
                d.layer_norm = ln;
                d.kernel = kernel;
                EXPECT_TRUE(std::isfinite(predict(random_params(d, 14), w)));
            }
}

TEST(Forward, WrongWindowRejected) {
    for (auto arch : {Architecture::rnn, Architecture::lstm, Architecture::transformer}) {
        const auto p = random_params(small_dims(arch), 1);
        EXPECT_THROW(predict(p, Matrix(5, 4)), DimensionError);
        EXPECT_THROW(predict(p, Matrix(6, 3)), DimensionError);
    }
}

TEST(Forward, DeterministicAndStateless) {
    Rng rng(15);
    for (auto arch : {Architecture::rnn, Architecture::lstm, Architecture::transformer}) {
        const auto p = random_params(small_dims(arch), 16);
        std::vector<Matrix> windows;
        for (int i = 0; i < 3; ++i) windows.push_back(random_matrix(rng, 6, 4));
        const auto once = forecast_sequence(p, windows);
        auto doubled = windows;
        doubled.insert(doubled.end(), windows.begin(), windows.end());
        const auto twice = forecast_sequence(p, doubled);
        ASSERT_EQ(twice.size(), 6u);
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_EQ(once[i], predict(p, windows[i]));
            EXPECT_EQ(twice[i], once[i]);
            EXPECT_EQ(twice[i + 3], once[i]);
        }
    }
}

TEST(Forward, WeekOfWindows) {
    Rng rng(17);
    const auto p = random_params(small_dims(Architecture::lstm), 18);
    std::vector<Matrix> windows;
    for (int i = 0; i < 168; ++i) windows.push_back(random_matrix(rng, 6, 4));
    EXPECT_EQ(forecast_sequence(p, windows).size(), 168u);
}

TEST(Forward, TapeMatchesInference) {
    Rng rng(19);
    for (auto arch : {Architecture::rnn, Architecture::lstm, Architecture::transformer}) {
        const auto p = random_params(small_dims(arch), 20);
        const Matrix w = random_matrix(rng, 6, 4);
        Tape tape;
        const double taped = std::visit(
            [&](const auto& weights) { return tape.value(record_forward(tape, p.dims, bind(tape, weights), w))[0]; },
            p.weights);
        EXPECT_EQ(taped, predict(p, w));
    }
}
