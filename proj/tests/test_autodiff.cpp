#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace loadtl;
using loadtl::testing::max_relative_error;
using loadtl::testing::random_matrix;

namespace {

// Contracts the op output with fixed random weights and compares tape
// gradients against central differences of the eager kernel.
using EagerOp = std::function<Matrix(const std::vector<Matrix>&)>;
using TapeOp = std::function<Var(const std::vector<Var>&)>;

void check_op(std::vector<Matrix> inputs, const EagerOp& eager, const TapeOp& taped, std::uint64_t seed = 1) {
    Rng rng(seed);
    const Matrix probe_shape = eager(inputs);
    const Matrix weights = random_matrix(rng, probe_shape.rows(), probe_shape.cols());

    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.leaf(m));
    const Var out = taped(vars);
    ASSERT_EQ(tape.value(out), eager(inputs)) << "tape value differs from eager kernel";
    const Var weighted = hadamard(out, tape.leaf(weights));
    const Var rowsum = matmul(tape.leaf(Matrix(1, probe_shape.rows(), 1.0)), weighted);
    const Var total = matmul(rowsum, tape.leaf(Matrix(probe_shape.cols(), 1, 1.0)));
    tape.backward(total);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix analytic = tape.grad(vars[k]);
        auto f = [&](std::span<const double> theta) {
            auto in = inputs;
            in[k] = Matrix(in[k].rows(), in[k].cols(), std::vector<double>(theta.begin(), theta.end()));
            const Matrix o = eager(in);
            double s = 0.0;
            for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * weights[i];
            return s;
        };
        const auto numeric = finite_diff_grad(f, inputs[k].values(), 1e-6);
        const std::vector<double> a(analytic.values().begin(), analytic.values().end());
        EXPECT_LT(max_relative_error(a, numeric, 1e-6), 1e-6) << "input " << k;
    }
}

}  // namespace

TEST(Tape, Matmul) {
    Rng rng(1);
    check_op({random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)},
             [](auto& m) { return matmul(m[0], m[1]); }, [](auto& v) { return matmul(v[0], v[1]); });
}

TEST(Tape, AddAndBroadcast) {
    Rng rng(2);
    check_op({random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)}, [](auto& m) { return add(m[0], m[1]); },
             [](auto& v) { return add(v[0], v[1]); });
    check_op({random_matrix(rng, 3, 4), random_matrix(rng, 1, 4)},
             [](auto& m) { return add_row_broadcast(m[0], m[1]); },
             [](auto& v) { return add_row_broadcast(v[0], v[1]); });
}

TEST(Tape, HadamardAndActivations) {
    Rng rng(3);
    check_op({random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)}, [](auto& m) { return hadamard(m[0], m[1]); },
             [](auto& v) { return hadamard(v[0], v[1]); });
    for (auto kind : {Activation::sigmoid, Activation::tanh, Activation::relu})
        check_op({random_matrix(rng, 4, 3, -2, 2)}, [kind](auto& m) { return activate(kind, m[0]); },
                 [kind](auto& v) { return activate(kind, v[0]); });
}

TEST(Tape, ConcatSliceTranspose) {
    Rng rng(4);
    check_op({random_matrix(rng, 2, 1), random_matrix(rng, 3, 1)}, [](auto& m) { return concat_rows(m[0], m[1]); },
             [](auto& v) { return concat_rows(v[0], v[1]); });
    check_op({random_matrix(rng, 4, 3)}, [](auto& m) { return slice_row(m[0], 2); },
             [](auto& v) { return slice_row(v[0], 2); });
    check_op({random_matrix(rng, 4, 3)}, [](auto& m) { return transpose(m[0]); },
             [](auto& v) { return transpose(v[0]); });
}

TEST(Tape, SoftmaxRows) {
    Rng rng(5);
    check_op({random_matrix(rng, 3, 5, -3, 3)}, [](auto& m) { return softmax_rows(m[0]); },
             [](auto& v) { return softmax_rows(v[0]); });
}

TEST(Tape, AttentionScoreKernels) {
    Rng rng(6);
    for (auto kernel : {AttentionKernel::cosine, AttentionKernel::scaled_dot})
        check_op({random_matrix(rng, 4, 3), random_matrix(rng, 5, 3)},
                 [kernel](auto& m) { return attention_scores(m[0], m[1], kernel); },
                 [kernel](auto& v) { return attention_scores(v[0], v[1], kernel); });
}

TEST(Tape, CosineZeroNormRowHasZeroScoreAndGradient) {
    Matrix q{{0, 0}, {1, 2}};
    Matrix k{{3, 4}, {0, 0}};
    const Matrix s = cosine_scores(q, k);
    EXPECT_EQ(s(0, 0), 0.0);
    EXPECT_EQ(s(0, 1), 0.0);
    EXPECT_EQ(s(1, 1), 0.0);
    EXPECT_NEAR(s(1, 0), 11.0 / (std::sqrt(5.0) * 5.0), 1e-15);
    Tape t;
    const Var vq = t.leaf(q), vk = t.leaf(k);
    const Var sc = attention_scores(vq, vk, AttentionKernel::cosine);
    t.backward(matmul(matmul(t.leaf(Matrix(1, 2, 1.0)), sc), t.leaf(Matrix(2, 1, 1.0))));
    const Matrix gq = t.grad(vq);
    EXPECT_EQ(gq(0, 0), 0.0);
    EXPECT_EQ(gq(0, 1), 0.0);
}

TEST(Tape, LayerNorm) {
    Rng rng(7);
    check_op({random_matrix(rng, 3, 6), random_matrix(rng, 1, 6, 0.5, 1.5), random_matrix(rng, 1, 6)},
             [](auto& m) { return layer_norm_rows(m[0], m[1], m[2]); },
             [](auto& v) { return layer_norm_rows(v[0], v[1], v[2]); });
}

TEST(Tape, ReusedNodeAccumulatesGradient) {
    Tape t;
    const Var x = t.leaf(Matrix{{3.0}});
    const Var y = hadamard(x, x);  // x^2
    t.backward(add(y, x));         // d/dx (x^2 + x) = 2x + 1
    EXPECT_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(Tape, SquaredErrorGradient) {
    Tape t;
    const Var b = t.leaf(Matrix{{0.3}});
    const Var loss = scaled_squared_error({b}, {1.0}, 1.0);
    t.backward(loss);
    EXPECT_NEAR(t.value(loss)[0], 0.49, 1e-15);
    EXPECT_NEAR(t.grad(b)[0], 2.0 * (0.3 - 1.0), 1e-15);
}

TEST(Tape, BackwardNeedsScalarRoot) {
    Tape t;
    const Var x = t.leaf(Matrix(2, 2));
    EXPECT_THROW(t.backward(x), DimensionError);
}
