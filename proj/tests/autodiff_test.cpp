#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "adrlab/errors.hpp"
#include "adrlab/gradcheck.hpp"
#include "adrlab/gradsuite.hpp"
#include "adrlab/rng.hpp"
#include "adrlab/tape.hpp"

namespace adrlab {
namespace {

TEST(Tensor, ShapeAndScalarViews) {
    const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(m.rows(), 2u);
    EXPECT_EQ(m.cols(), 3u);
    EXPECT_DOUBLE_EQ(m.at(1, 2), 6.0);
    EXPECT_TRUE(Tensor::scalar(3.0).is_scalar());
    EXPECT_TRUE(Tensor({1}, 2.0).is_scalar());
    EXPECT_THROW(m.item(), ShapeError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, MatmulValues) {
    const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    const Tensor b = Tensor::matrix(2, 1, {5, 6});
    const Tensor c = matmul_values(a, b);
    EXPECT_EQ(c, Tensor::matrix(2, 1, {17, 39}));
}

TEST(Tape, MatmulShapeMismatchNamesBothShapes) {
    Tape tape;
    const Var a = tape.leaf(Tensor({2, 3}, 1.0));
    const Var b = tape.leaf(Tensor({2, 3}, 1.0));
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    }
}

TEST(Tape, ParentsPrecedeChildren) {
    Tape tape;
    const Var x = tape.leaf(Tensor::row({1.0, -2.0}));
    const Var y = sum(square(relu(x) + x));
    for (NodeId id = 0; id < tape.size(); ++id) {
        for (auto p : tape.node(id).parents) EXPECT_LT(p, id);
    }
    EXPECT_EQ(y.id(), tape.size() - 1);
}

TEST(Tape, BackwardOfSumOfSquares) {
    Tape tape;
    const Var x = tape.leaf(Tensor::row({1.0, -2.0, 3.0}));
    const GradMap g = tape.backward(sum(square(x)));
    EXPECT_EQ(g.at(x), Tensor::row({2.0, -4.0, 6.0}));
}

TEST(Tape, GradientOfUnusedLeafIsZero) {
    Tape tape;
    const Var x = tape.leaf(Tensor::row({1.0, 2.0}));
    const Var unused = tape.leaf(Tensor::row({3.0, 4.0}));
    const GradMap g = tape.backward(sum(x));
    EXPECT_FALSE(g.contains(unused));
    EXPECT_EQ(g.get(unused), Tensor::row({0.0, 0.0}));
    EXPECT_THROW(g.at(unused), ContractError);
}

TEST(Tape, BackwardNeedsScalarRoot) {
    Tape tape;
    const Var x = tape.leaf(Tensor::row({1.0, 2.0}));
    EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Tape, SharedSubexpressionAccumulates) {
    Tape tape;
    const Var x = tape.leaf(Tensor::scalar(3.0));
    const Var y = mul(x, x) + x;
    EXPECT_DOUBLE_EQ(tape.backward(y).at(x).item(), 7.0);
}

TEST(Tape, NonFiniteValueRaises) {
    Tape tape;
    const Var x = tape.leaf(Tensor::row({800.0}));
    EXPECT_THROW(exp(x), NumericError);
}

TEST(Tape, SoftmaxRowsSumToOne) {
    Tape tape;
    const Var p = softmax(tape.leaf(Tensor::matrix(2, 3, {1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0})));
    for (std::size_t r = 0; r < 2; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 3; ++c) total += p.value().at(r, c);
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Tape, LogFloorBlocksGradient) {
    Tape tape;
    const Var x = tape.leaf(Tensor::row({0.0, 0.5}));
    const Var y = sum(log(x, 1e-8));
    EXPECT_NEAR(y.value().item(), std::log(1e-8) + std::log(0.5), 1e-12);
    const Tensor g = tape.backward(y).at(x);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_DOUBLE_EQ(g[1], 2.0);
}

TEST(Tape, InvertedDropoutScalesKeptUnits) {
    Tape tape;
    const Var x = tape.leaf(Tensor::row({1.0, 2.0, 3.0, 4.0}));
    const Var y = dropout(x, Tensor::row({1.0, 0.0, 1.0, 0.0}), 0.5);
    EXPECT_EQ(y.value(), Tensor::row({2.0, 0.0, 6.0, 0.0}));
    EXPECT_THROW(dropout(x, Tensor::row({1.0, 0.0}), 0.5), ShapeError);
}

TEST(Tape, BatchnormTrainNormalizesAndTracksRunningStats) {
    Tape tape;
    BatchNormStats stats(1);
    const Var x = tape.leaf(Tensor::matrix(4, 1, {1.0, 2.0, 3.0, 4.0}));
    const Var gamma = tape.leaf(Tensor({1}, 1.0));
    const Var beta = tape.leaf(Tensor({1}, 0.0));
    const Var y = batchnorm(x, gamma, beta, stats, BatchNormMode::train);
    double mean = 0.0, sq = 0.0;
    for (double v : y.value().data()) {
        mean += v / 4.0;
        sq += v * v / 4.0;
    }
    EXPECT_NEAR(mean, 0.0, 1e-12);
    // Biased variance 1.25; normalized second moment is 1.25 / (1.25 + eps).
    EXPECT_NEAR(sq, 1.25 / (1.25 + 1e-5), 1e-12);
    EXPECT_NEAR(stats.running_mean[0], 0.1 * 2.5, 1e-15);
    EXPECT_NEAR(stats.running_var[0], 0.9 + 0.1 * 1.25, 1e-15);
}

TEST(Tape, BatchnormEvalUsesRunningStats) {
    Tape tape;
    BatchNormStats stats(1);
    stats.running_mean[0] = 1.0;
    stats.running_var[0] = 4.0;
    const Var x = tape.leaf(Tensor::matrix(2, 1, {3.0, -1.0}));
    const Var y = batchnorm(x, tape.leaf(Tensor({1}, 2.0)), tape.leaf(Tensor({1}, 0.5)), stats, BatchNormMode::eval);
    const double s = std::sqrt(4.0 + 1e-5);
    EXPECT_NEAR(y.value()[0], 2.0 * 2.0 / s + 0.5, 1e-12);
    EXPECT_NEAR(y.value()[1], 2.0 * -2.0 / s + 0.5, 1e-12);
    EXPECT_EQ(stats.running_mean[0], 1.0);
}

TEST(GradCheck, DetectsWrongGradient) {
    // The detached copy hides half of the true gradient.
    const TapeFunction f = [](Tape& tape, std::span<const Var> p) {
        const Var detached = tape.leaf(p[0].value());
        return sum(mul(detached, p[0]));
    };
    const Tensor x = Tensor::row({1.0, 2.0});
    const auto report = grad_check(f, std::span<const Tensor>(&x, 1));
    EXPECT_FALSE(report.passed);
}

TEST(GradCheck, AcceptsCorrectGradient) {
    const TapeFunction f = [](Tape&, std::span<const Var> p) { return sum(mul(p[0], p[0])); };
    const Tensor x = Tensor::row({1.0, -2.0, 0.5});
    const auto report = grad_check(f, std::span<const Tensor>(&x, 1));
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_err(), 1e-6);
}

class PrimitiveGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
    const auto entry = run_grad_case(GetParam(), 20, 7);
    EXPECT_TRUE(entry.passed()) << GetParam() << " max_rel_err " << entry.max_rel_err;
    EXPECT_EQ(entry.instances, 20u);
}

INSTANTIATE_TEST_SUITE_P(AllCases, PrimitiveGradient, ::testing::ValuesIn(grad_suite_cases()),
                         [](const auto& info) { return info.param; });

TEST(GradSuite, CoversEveryPrimitive) {
    const auto cases = grad_suite_cases();
    for (const char* name : {"matmul", "add", "sub", "scalar_mul", "relu", "softmax", "log", "exp", "sum", "mean",
                             "square", "mul", "batchnorm_train", "batchnorm_eval", "dropout"}) {
        EXPECT_NE(std::find(cases.begin(), cases.end(), name), cases.end()) << name;
    }
    EXPECT_THROW(run_grad_case("no_such_case", 1, 0), ContractError);
}

TEST(Rng, SplitIgnoresConsumption) {
    Rng a(5), b(5);
    for (int i = 0; i < 10; ++i) b.next_u64();
    Rng ca = a.split(3), cb = b.split(3);
    EXPECT_EQ(ca.next_u64(), cb.next_u64());
    EXPECT_NE(Rng(5).split(3).next_u64(), Rng(5).split(4).next_u64());
}

TEST(Rng, UniformAndNormalMoments) {
    Rng rng(11);
    double su = 0.0, sn = 0.0, sn2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    EXPECT_NEAR(su / n, 0.5, 0.005);
    EXPECT_NEAR(sn / n, 0.0, 0.01);
    EXPECT_NEAR(sn2 / n, 1.0, 0.01);
}

}  // namespace
}  // namespace adrlab
