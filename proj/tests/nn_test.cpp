#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "adrlab/checkpoint.hpp"
#include "adrlab/errors.hpp"
#include "adrlab/nn.hpp"

namespace adrlab::nn {
namespace {

const std::vector<std::size_t> kGenWidths{2, 5, 5};
const std::vector<std::size_t> kClsWidths{5, 5, 2};

Tensor random_input(Rng& rng, std::size_t n, std::size_t d) {
    Tensor x({n, d});
    for (auto& v : x.data()) v = rng.normal();
    return x;
}

TEST(MlpSpec, ToyArchitectures) {
    const MlpSpec g = feature_extractor_spec(kGenWidths);
    ASSERT_EQ(g.layers.size(), 2u);
    EXPECT_EQ(g.input_width, 2u);
    for (const auto& layer : g.layers) {
        EXPECT_TRUE(layer.batchnorm);
        EXPECT_EQ(layer.activation, Activation::relu);
        EXPECT_FALSE(layer.dropout_after);
    }
    const MlpSpec c = classifier_spec(kClsWidths);
    ASSERT_EQ(c.layers.size(), 2u);
    EXPECT_TRUE(c.layers[0].dropout_after);
    EXPECT_EQ(c.layers[1].activation, Activation::none);
    EXPECT_FALSE(c.layers[1].batchnorm);
    EXPECT_EQ(c.output_width(), 2u);
    EXPECT_EQ(c.dropout_site_widths(), std::vector<std::size_t>{5});
}

TEST(InitMlp, GlorotBoundsAndZeroBiases) {
    Rng rng(3);
    const Mlp net = init_mlp(classifier_spec(kClsWidths), rng);
    for (const auto& [name, t] : net.params) {
        if (name.find("weight") != std::string::npos) {
            const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
            for (double v : t.data()) EXPECT_LE(std::abs(v), bound) << name;
        } else if (name.find("gamma") != std::string::npos) {
            for (double v : t.data()) EXPECT_EQ(v, 1.0);
        } else {
            for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
        }
    }
    EXPECT_FALSE(net.params.contains("l0.bias"));
    EXPECT_TRUE(net.params.contains("l1.bias"));
    EXPECT_EQ(net.bn.at("l0").running_var, Tensor({5}, 1.0));
}

TEST(InitMlp, SameSeedSameParams) {
    Rng a(9), b(9);
    EXPECT_EQ(init_mlp(classifier_spec(kClsWidths), a).params, init_mlp(classifier_spec(kClsWidths), b).params);
}

TEST(MlpForward, TrainModeRequiresMasks) {
    Rng rng(1);
    Mlp net = init_mlp(classifier_spec(kClsWidths), rng);
    Tape tape;
    const auto vars = bind(tape, net.params);
    const Var x = tape.leaf(random_input(rng, 4, 5));
    EXPECT_THROW(mlp_forward(net.spec, vars, net.bn, x, {.mode = ForwardMode::train, .dropout_rate = 0.5}),
                 ContractError);
}

TEST(MlpForward, EvalModeLeavesRunningStatsAlone) {
    Rng rng(2);
    Mlp net = init_mlp(classifier_spec(kClsWidths), rng);
    const BatchNormState before = net.bn;
    Tape tape;
    const auto vars = bind(tape, net.params);
    const std::vector<Tensor> masks{Tensor({4, 5}, 1.0)};
    mlp_forward(net.spec, vars, net.bn, tape.leaf(random_input(rng, 4, 5)),
                {.mode = ForwardMode::eval_dropout, .masks = masks, .dropout_rate = 0.5});
    EXPECT_EQ(net.bn, before);
    mlp_forward(net.spec, vars, net.bn, tape.leaf(random_input(rng, 4, 5)),
                {.mode = ForwardMode::train, .masks = masks, .dropout_rate = 0.5});
    EXPECT_NE(net.bn, before);
}

TEST(MlpForward, AllOnesMaskAtRateZeroMatchesNoDropout) {
    Rng rng(4);
    Mlp net = init_mlp(classifier_spec(kClsWidths), rng);
    const Tensor x = random_input(rng, 6, 5);
    Tape tape;
    const auto vars = bind(tape, net.params);
    BatchNormState bn = net.bn;
    const std::vector<Tensor> masks{Tensor({6, 5}, 1.0)};
    const Var a = mlp_forward(net.spec, vars, bn, tape.leaf(x),
                              {.mode = ForwardMode::eval_dropout, .masks = masks, .dropout_rate = 0.0})
                      .output;
    EXPECT_EQ(a.value(), predict_logits(net, x));
}

TEST(MlpForward, AllOnesProbeMaskIsIdentity) {
    Rng rng(5);
    Mlp net = init_mlp(classifier_spec(kClsWidths), rng);
    const Tensor x = random_input(rng, 6, 5);
    const Tensor probe({5}, 1.0);
    Tape tape;
    const auto vars = bind(tape, net.params);
    BatchNormState bn = net.bn;
    const Var a = mlp_forward(net.spec, vars, bn, tape.leaf(x), {.probe_mask = &probe}).output;
    EXPECT_EQ(a.value(), predict_logits(net, x));
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
    ParamStore params;
    params.add("w", Tensor::row({1.0, 1.0, 1.0}));
    OptimizerState opt = OptimizerState::create(OptimizerKind::adam, 0.01, params);
    optimizer_step(opt, params, {{"w", Tensor::row({2.0, -0.5, 0.0})}});
    const Tensor& w = params.at("w");
    EXPECT_NEAR(w[0], 1.0 - 0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
    EXPECT_NEAR(w[1], 1.0 + 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_EQ(w[2], 1.0);
    EXPECT_EQ(opt.step, 1u);
}

TEST(Optimizer, SgdStep) {
    ParamStore params;
    params.add("w", Tensor::row({1.0, 2.0}));
    OptimizerState opt = OptimizerState::create(OptimizerKind::sgd, 0.1, params);
    optimizer_step(opt, params, {{"w", Tensor::row({1.0, -1.0})}});
    EXPECT_NEAR(params.at("w")[0], 0.9, 1e-15);
    EXPECT_NEAR(params.at("w")[1], 2.1, 1e-15);
}

TEST(Optimizer, MissingGradientLeavesParameterUntouched) {
    ParamStore params;
    params.add("a", Tensor::row({1.0}));
    params.add("b", Tensor::row({2.0}));
    OptimizerState opt = OptimizerState::create(OptimizerKind::adam, 0.1, params);
    optimizer_step(opt, params, {{"a", Tensor::row({1.0})}});
    EXPECT_EQ(params.at("b"), Tensor::row({2.0}));
    EXPECT_NE(params.at("a"), Tensor::row({1.0}));
}

TEST(Optimizer, KindNames) {
    EXPECT_EQ(optimizer_kind_from_string(to_string(OptimizerKind::sgd)), OptimizerKind::sgd);
    EXPECT_THROW(optimizer_kind_from_string("rmsprop"), ContractError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Rng rng(6);
    Mlp net = init_mlp(classifier_spec(kClsWidths), rng);
    for (auto& [name, stats] : net.bn) {
        for (auto& v : stats.running_mean.data()) v = rng.normal() / 3.0;
        for (auto& v : stats.running_var.data()) v = 0.1 + rng.uniform();
    }
    net.params.mutable_at("l1.bias")[0] = 0.1 + 0.2;
    Checkpoint ckpt;
    add_to_checkpoint(ckpt, "C", net);
    std::stringstream buffer;
    write_checkpoint(buffer, ckpt);
    const Mlp back = mlp_from_checkpoint(read_checkpoint(buffer), "C", net.spec);
    EXPECT_EQ(back.params, net.params);
    EXPECT_EQ(back.bn, net.bn);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
    Rng rng(7);
    Mlp net = init_mlp(classifier_spec(kClsWidths), rng);
    Checkpoint ckpt;
    add_to_checkpoint(ckpt, "C", net);
    const std::vector<std::size_t> wider{5, 6, 2};
    EXPECT_THROW(mlp_from_checkpoint(ckpt, "C", classifier_spec(wider)), ShapeError);
    EXPECT_THROW(mlp_from_checkpoint(ckpt, "G", net.spec), ContractError);
}

TEST(Checkpoint, RejectsGarbage) {
    std::stringstream in("not-a-checkpoint 1\n");
    EXPECT_THROW(read_checkpoint(in), ContractError);
}

}  // namespace
}  // namespace adrlab::nn
