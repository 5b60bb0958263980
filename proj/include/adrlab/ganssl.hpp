#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adrlab/adr.hpp"
#include "adrlab/datasets.hpp"
#include "adrlab/losses.hpp"
#include "adrlab/nn.hpp"

namespace adrlab::gan {

struct GanConfig {
    data::MixtureConfig mixture;
    std::size_t n_test = 2000;
    std::size_t z_dim = 8;
    std::vector<std::size_t> generator_hidden{64, 64};
    /// Hidden widths of the critic; input width is 2, output width is K.
    std::vector<std::size_t> critic_hidden{32, 32};
    /// Critic hidden layer whose activation is f in the feature-matching term.
    std::size_t feature_layer = 0;
    double dropout_rate = 0.5;
    double critic_learning_rate = 2e-4;
    double generator_learning_rate = 2e-4;
    nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
    std::size_t batch_size_labeled = 20;
    std::size_t batch_size_unlabeled = 64;
    std::size_t batch_size_fake = 64;
    std::size_t total_iterations = 2000;
    std::size_t eval_interval = 100;
    adr::BalanceVariant balance_variant = adr::BalanceVariant::marginal;
    bool use_adversarial = true;
    bool use_balance = true;
    /// Flips the signs of both sensitivity terms in the critic objective.
    bool flip_adversarial_signs = false;
    /// Extra linear head on f, trained on labeled data only.
    bool use_aux_head = false;
    std::uint64_t seed = 0;

    void validate() const;
    nn::MlpSpec generator_spec() const;
    nn::MlpSpec critic_spec() const;
};

struct GanBundle {
    nn::Mlp generator;
    nn::Mlp critic;
    std::optional<nn::Mlp> aux_head;
    nn::OptimizerState generator_opt;
    nn::OptimizerState critic_opt;
    std::optional<nn::OptimizerState> aux_opt;
};

GanBundle init_gan_bundle(const GanConfig& config, Rng& rng);

/// `[n, z_dim]` standard normal noise.
Tensor sample_noise(Rng& rng, std::size_t n, std::size_t z_dim);

struct CriticMasks {
    std::vector<Tensor> labeled;
    adr::TwinMasks unlabeled;
    adr::TwinMasks fake;
};

struct CriticLoss {
    Var total;
    Var labeled;
    Var adv_unlabeled;
    Var adv_fake;
    Var balance;
};

/// CE(labeled) + (L_adv(unlabeled) - L_adv(fake)) + balance(unlabeled),
/// with each L_adv the twin-dropout sensitivity of the train-mode critic.
/// The sensitivity difference is formed before the other terms are added,
/// so identical unlabeled and fake inputs cancel exactly.
CriticLoss gan_critic_loss(Tape& tape, nn::Mlp& critic, const nn::ParamVars& critic_vars,
                           const data::LabeledSet2D& labeled, const Tensor& unlabeled, const Tensor& fake,
                           const CriticMasks& masks, const GanConfig& config);

struct GeneratorLoss {
    Var total;
    Var adv_fake;
    Var feature_matching;
};

/// L_adv(fake) + ||mean f(fake) - mean f(unlabeled)||^2, f read from the
/// eval-mode critic. `critic_bn` is the batchnorm state used by the
/// train-mode twin forwards; pass a copy to leave the critic untouched.
GeneratorLoss gan_generator_loss(const nn::Mlp& critic, const nn::ParamVars& critic_vars,
                                 nn::BatchNormState& critic_bn, const Var& fake, const Tensor& unlabeled,
                                 const adr::TwinMasks& masks, const GanConfig& config);

/// Activation of critic hidden layer `layer` in eval mode.
Var critic_features(const nn::Mlp& critic, const nn::ParamVars& vars, const Var& x, std::size_t layer);

struct GanMetricsRecord {
    std::size_t iteration = 0;
    double test_accuracy = 0.0;
    double test_error = 0.0;
    double labeled_loss = 0.0;
    double adv_unlabeled = 0.0;
    double adv_fake = 0.0;
    double feature_matching = 0.0;
    std::optional<double> aux_test_accuracy;

    friend bool operator==(const GanMetricsRecord&, const GanMetricsRecord&) = default;
};

struct GanResult {
    GanBundle bundle;
    std::vector<GanMetricsRecord> metrics;
    bool diverged = false;
    std::string diagnostic;
};

/// Test accuracy of the eval-mode critic.
double critic_accuracy(const nn::Mlp& critic, const data::LabeledSet2D& set);

/// `n` generator samples in eval mode.
Tensor generate(const GanBundle& bundle, std::size_t n, Rng& rng);

/// One critic step then one generator step per iteration.
GanResult train_gan_ssl(const GanConfig& config, const data::LabeledSet2D& labeled, const Tensor& unlabeled,
                        const data::LabeledSet2D& test);

/// The critic trained on the labeled data alone, with the same seed
/// streams as `train_gan_ssl`. The generator is initialized but never used.
GanResult train_labeled_only(const GanConfig& config, const data::LabeledSet2D& labeled,
                             const data::LabeledSet2D& test);

struct GanData {
    data::MixtureData train;
    data::LabeledSet2D test;
};

GanData make_gan_data(const GanConfig& config);

void write_samples_csv(const std::filesystem::path& path, const Tensor& samples);

}  // namespace adrlab::gan
