#include <gtest/gtest.h>

#include <cmath>

#include "adrlab/errors.hpp"
#include "adrlab/ganssl.hpp"

namespace adrlab::gan {
namespace {

GanConfig short_config(std::uint64_t seed, std::size_t iterations = 40) {
    GanConfig config;
    config.seed = seed;
    config.total_iterations = iterations;
    config.eval_interval = 20;
    config.n_test = 200;
    config.mixture.n_unlabeled = 256;
    return config;
}

struct Fixture {
    GanConfig config;
    GanBundle bundle;
    data::LabeledSet2D labeled;
    Tensor unlabeled;
    Tensor fake;
    CriticMasks masks;
};

Fixture make_fixture(std::uint64_t seed, double rate = 0.5) {
    Fixture f;
    f.config = short_config(seed);
    f.config.dropout_rate = rate;
    Rng rng(seed);
    f.bundle = init_gan_bundle(f.config, rng);
    const auto data = make_gan_data(f.config);
    f.labeled = data.train.labeled;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 32; ++i) idx.push_back(rng.uniform_index(data.train.unlabeled.rows()));
    f.unlabeled = gather_rows(data.train.unlabeled, idx);
    f.fake = generate(f.bundle, 32, rng);
    f.masks.labeled = adr::sample_masks(rng, f.bundle.critic.spec, f.labeled.size(), rate);
    f.masks.unlabeled = adr::sample_twin_masks(rng, f.bundle.critic.spec, 32, rate);
    f.masks.fake = adr::sample_twin_masks(rng, f.bundle.critic.spec, 32, rate);
    return f;
}

TEST(GanConfig, DefaultsAndSpecs) {
    const GanConfig c;
    EXPECT_EQ(c.z_dim, 8u);
    EXPECT_EQ(c.mixture.num_classes, 2u);
    EXPECT_EQ(c.mixture.n_labeled_per_class, 10u);
    EXPECT_EQ(c.mixture.n_unlabeled, 2000u);
    const auto g = c.generator_spec();
    EXPECT_EQ(g.input_width, 8u);
    EXPECT_EQ(g.output_width(), 2u);
    EXPECT_EQ(g.layers[0].width, 64u);
    EXPECT_EQ(g.layers[1].width, 64u);
    const auto critic = c.critic_spec();
    EXPECT_EQ(critic.input_width, 2u);
    EXPECT_EQ(critic.output_width(), 2u);
    EXPECT_EQ(critic.dropout_site_count(), 2u);
}

TEST(GanConfig, ValidateRejectsBadValues) {
    GanConfig c;
    c.z_dim = 0;
    EXPECT_THROW(c.validate(), ContractError);
    c = GanConfig{};
    c.feature_layer = 2;
    EXPECT_THROW(c.validate(), ContractError);
}

TEST(CriticLoss, RateZeroLeavesLabeledPlusBalance) {
    Fixture f = make_fixture(1, 0.0);
    Tape tape;
    const auto vars = nn::bind(tape, f.bundle.critic.params);
    const CriticLoss loss =
        gan_critic_loss(tape, f.bundle.critic, vars, f.labeled, f.unlabeled, f.fake, f.masks, f.config);
    EXPECT_EQ(loss.adv_unlabeled.value().item(), 0.0);
    EXPECT_EQ(loss.adv_fake.value().item(), 0.0);
    EXPECT_DOUBLE_EQ(loss.total.value().item(), loss.labeled.value().item() + loss.balance.value().item());
}

TEST(CriticLoss, IdenticalBatchesCancel) {
    Fixture f = make_fixture(2);
    f.masks.fake = f.masks.unlabeled;
    Tape tape;
    const auto vars = nn::bind(tape, f.bundle.critic.params);
    GanConfig no_balance = f.config;
    no_balance.use_balance = false;
    const CriticLoss loss =
        gan_critic_loss(tape, f.bundle.critic, vars, f.labeled, f.unlabeled, f.unlabeled, f.masks, no_balance);
    EXPECT_GT(loss.adv_unlabeled.value().item(), 0.0);
    EXPECT_EQ(loss.total.value().item(), loss.labeled.value().item());
}

TEST(CriticLoss, SignsFollowTheFlag) {
    Fixture f = make_fixture(3);
    GanConfig flipped = f.config;
    flipped.flip_adversarial_signs = true;
    flipped.use_balance = false;
    GanConfig literal = flipped;
    literal.flip_adversarial_signs = false;
    nn::Mlp c1 = f.bundle.critic, c2 = f.bundle.critic;
    Tape tape;
    const auto vars = nn::bind(tape, f.bundle.critic.params);
    const CriticLoss a = gan_critic_loss(tape, c1, vars, f.labeled, f.unlabeled, f.fake, f.masks, literal);
    const CriticLoss b = gan_critic_loss(tape, c2, vars, f.labeled, f.unlabeled, f.fake, f.masks, flipped);
    const double u = a.adv_unlabeled.value().item(), g = a.adv_fake.value().item();
    EXPECT_NEAR(a.total.value().item(), a.labeled.value().item() + (u - g), 1e-12);
    EXPECT_NEAR(b.total.value().item(), b.labeled.value().item() + (g - u), 1e-12);
}

TEST(CriticLoss, PerfectLabeledPredictionsCostNothing) {
    Fixture f = make_fixture(4);
    // Huge output weights make every prediction an exact one-hot; relabel to match them.
    for (auto& v : f.bundle.critic.params.mutable_at("l2.weight").data()) v *= 1e9;
    nn::BatchNormState bn = f.bundle.critic.bn;
    Tape probe;
    const auto probe_vars = nn::bind(probe, f.bundle.critic.params);
    const Var logits =
        nn::mlp_forward(f.bundle.critic.spec, probe_vars, bn, probe.leaf(f.labeled.points),
                        {.mode = nn::ForwardMode::train, .masks = f.masks.labeled, .dropout_rate = 0.5})
            .output;
    data::LabeledSet2D relabeled = f.labeled;
    relabeled.labels = adr::argmax_rows(softmax(logits).value());

    Tape tape;
    const auto vars = nn::bind(tape, f.bundle.critic.params);
    const CriticLoss loss =
        gan_critic_loss(tape, f.bundle.critic, vars, relabeled, f.unlabeled, f.fake, f.masks, f.config);
    EXPECT_LT(loss.labeled.value().item(), 1e-8);
}

TEST(CriticLoss, EmptyBatchIsAContractError) {
    Fixture f = make_fixture(5);
    Tape tape;
    const auto vars = nn::bind(tape, f.bundle.critic.params);
    data::LabeledSet2D empty;
    EXPECT_THROW(gan_critic_loss(tape, f.bundle.critic, vars, empty, f.unlabeled, f.fake, f.masks, f.config),
                 ContractError);
}

TEST(GeneratorLoss, FakeEqualToRealHasNoFeatureTerm) {
    Fixture f = make_fixture(6);
    Tape tape;
    const auto vars = nn::bind(tape, f.bundle.critic.params);
    nn::BatchNormState bn = f.bundle.critic.bn;
    const GeneratorLoss loss =
        gan_generator_loss(f.bundle.critic, vars, bn, tape.leaf(f.unlabeled), f.unlabeled, f.masks.unlabeled, f.config);
    EXPECT_EQ(loss.feature_matching.value().item(), 0.0);
    EXPECT_EQ(loss.total.value().item(), loss.adv_fake.value().item());
}

TEST(GeneratorLoss, RateZeroReducesToFeatureMatching) {
    Fixture f = make_fixture(7, 0.0);
    Tape tape;
    const auto vars = nn::bind(tape, f.bundle.critic.params);
    nn::BatchNormState bn = f.bundle.critic.bn;
    const GeneratorLoss loss =
        gan_generator_loss(f.bundle.critic, vars, bn, tape.leaf(f.fake), f.unlabeled, f.masks.fake, f.config);
    EXPECT_EQ(loss.adv_fake.value().item(), 0.0);
    EXPECT_EQ(loss.total.value().item(), loss.feature_matching.value().item());
    EXPECT_GT(loss.feature_matching.value().item(), 0.0);
}

TEST(GeneratorLoss, ScratchBatchnormKeepsCriticStateUntouched) {
    Fixture f = make_fixture(8);
    Tape tape;
    const auto g_vars = nn::bind(tape, f.bundle.generator.params);
    const auto c_vars = nn::bind(tape, f.bundle.critic.params);
    Rng rng(1);
    const Var fake = nn::mlp_forward(f.bundle.generator.spec, g_vars, f.bundle.generator.bn,
                                     tape.leaf(sample_noise(rng, 32, f.config.z_dim)),
                                     {.mode = nn::ForwardMode::train})
                         .output;
    nn::BatchNormState scratch = f.bundle.critic.bn;
    const nn::BatchNormState before = f.bundle.critic.bn;
    const GeneratorLoss loss = gan_generator_loss(f.bundle.critic, c_vars, scratch, fake, f.unlabeled, f.masks.fake,
                                                  f.config);
    EXPECT_EQ(f.bundle.critic.bn, before);
    const GradMap grads = tape.backward(loss.total);
    EXPECT_EQ(nn::collect_grads(grads, g_vars).size(), f.bundle.generator.params.size());
}

TEST(Training, SameSeedIdenticalMetrics) {
    const GanConfig c = short_config(9);
    const auto data = make_gan_data(c);
    const auto a = train_gan_ssl(c, data.train.labeled, data.train.unlabeled, data.test);
    const auto b = train_gan_ssl(c, data.train.labeled, data.train.unlabeled, data.test);
    ASSERT_FALSE(a.diverged);
    EXPECT_EQ(a.metrics, b.metrics);
    EXPECT_EQ(a.bundle.critic.params, b.bundle.critic.params);
    std::vector<std::size_t> its;
    for (const auto& m : a.metrics) its.push_back(m.iteration);
    EXPECT_EQ(its, (std::vector<std::size_t>{0, 20, 40}));
    for (const auto& m : a.metrics) {
        EXPECT_NEAR(m.test_accuracy + m.test_error, 1.0, 1e-12);
        EXPECT_GE(m.feature_matching, 0.0);
        EXPECT_GE(m.adv_fake, 0.0);
        EXPECT_FALSE(m.aux_test_accuracy.has_value());
    }
}

TEST(Training, TermsOffMatchesLabeledOnlyBitForBit) {
    GanConfig c = short_config(10, 60);
    c.use_adversarial = false;
    c.use_balance = false;
    const auto data = make_gan_data(c);
    const auto gan = train_gan_ssl(c, data.train.labeled, data.train.unlabeled, data.test);
    const auto plain = train_labeled_only(c, data.train.labeled, data.test);
    EXPECT_EQ(gan.bundle.critic.params, plain.bundle.critic.params);
    EXPECT_EQ(gan.bundle.critic.bn, plain.bundle.critic.bn);
    ASSERT_EQ(gan.metrics.size(), plain.metrics.size());
    for (std::size_t i = 0; i < gan.metrics.size(); ++i) {
        EXPECT_EQ(gan.metrics[i].test_accuracy, plain.metrics[i].test_accuracy);
        EXPECT_EQ(gan.metrics[i].labeled_loss, plain.metrics[i].labeled_loss);
    }
}

TEST(Training, EachStepTouchesOnlyItsOwnNetwork) {
    GanConfig c = short_config(11, 10);
    c.optimizer = nn::OptimizerKind::sgd;
    const auto data = make_gan_data(c);
    Rng init_rng = Rng(c.seed).split(1);
    const GanBundle initial = init_gan_bundle(c, init_rng);

    GanConfig frozen_generator = c;
    frozen_generator.generator_learning_rate = 0.0;
    const auto a = train_gan_ssl(frozen_generator, data.train.labeled, data.train.unlabeled, data.test);
    EXPECT_EQ(a.bundle.generator.params, initial.generator.params);
    EXPECT_NE(a.bundle.critic.params, initial.critic.params);

    GanConfig frozen_critic = c;
    frozen_critic.critic_learning_rate = 0.0;
    const auto b = train_gan_ssl(frozen_critic, data.train.labeled, data.train.unlabeled, data.test);
    EXPECT_EQ(b.bundle.critic.params, initial.critic.params);
    EXPECT_NE(b.bundle.generator.params, initial.generator.params);
}

TEST(Training, AuxHeadIsReported) {
    GanConfig c = short_config(12);
    c.use_aux_head = true;
    const auto data = make_gan_data(c);
    const auto r = train_gan_ssl(c, data.train.labeled, data.train.unlabeled, data.test);
    ASSERT_TRUE(r.bundle.aux_head.has_value());
    for (const auto& m : r.metrics) ASSERT_TRUE(m.aux_test_accuracy.has_value());
}

TEST(Training, GeneratedMeanNearDataMean) {
    GanConfig c;
    c.seed = 0;
    c.total_iterations = 2000;
    c.eval_interval = 500;
    const auto data = make_gan_data(c);
    const auto r = train_gan_ssl(c, data.train.labeled, data.train.unlabeled, data.test);
    ASSERT_FALSE(r.diverged);
    Rng rng(3);
    const Tensor samples = generate(r.bundle, 2000, rng);
    double gx = 0.0, gy = 0.0, ux = 0.0, uy = 0.0;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        gx += samples.at(i, 0) / static_cast<double>(samples.rows());
        gy += samples.at(i, 1) / static_cast<double>(samples.rows());
    }
    const Tensor& u = data.train.unlabeled;
    for (std::size_t i = 0; i < u.rows(); ++i) {
        ux += u.at(i, 0) / static_cast<double>(u.rows());
        uy += u.at(i, 1) / static_cast<double>(u.rows());
    }
    const double limit = 3.0 * c.mixture.noise_std;
    EXPECT_LT(std::hypot(gx - ux, gy - uy), limit) << "generated mean (" << gx << ", " << gy << ") vs (" << ux
                                                   << ", " << uy << ")";
}

TEST(Data, MakeGanDataShapes) {
    const GanConfig c = short_config(13);
    const auto d = make_gan_data(c);
    EXPECT_EQ(d.train.labeled.size(), 20u);
    EXPECT_EQ(d.train.unlabeled.rows(), 256u);
    EXPECT_EQ(d.test.size(), 200u);
    EXPECT_EQ(make_gan_data(c).test, d.test);
}

}  // namespace
}  // namespace adrlab::gan
