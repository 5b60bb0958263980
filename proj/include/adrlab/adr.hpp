#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adrlab/datasets.hpp"
#include "adrlab/losses.hpp"
#include "adrlab/nn.hpp"

namespace adrlab::adr {

/// Which adversarial signal drives Steps 2 and 3.
enum class Method {
    /// Dropout sensitivity between twin classifiers (ADR).
    adr,
    /// Per-sample prediction entropy (ENT baseline).
    ent,
    /// Step 1 only.
    source_only,
};

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct AdrConfig {
    Method method = Method::adr;
    double dropout_rate = 0.5;
    std::size_t n_step3_repeats = 4;
    double learning_rate = 2e-4;
    nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
    std::size_t batch_size_source = 64;
    std::size_t batch_size_target = 64;
    std::size_t total_outer_iterations = 3000;
    BalanceVariant entropy_term_variant = BalanceVariant::marginal;
    std::size_t eval_interval = 100;
    std::uint64_t seed = 0;
    /// Input width first, e.g. {2, 5, 5}.
    std::vector<std::size_t> generator_widths{2, 5, 5};
    /// Feature width first, e.g. {5, 5, 2}; the last entry is K.
    std::vector<std::size_t> classifier_widths{5, 5, 2};

    void validate() const;
    std::size_t num_classes() const { return classifier_widths.back(); }
};

/// G, the critic/classifier C and the auxiliary classifier C' (same
/// architecture as C), each with its own optimizer.
struct ModelBundle {
    nn::Mlp generator;
    nn::Mlp critic;
    nn::Mlp aux_classifier;
    nn::OptimizerState generator_opt;
    nn::OptimizerState critic_opt;
    nn::OptimizerState aux_opt;
};

ModelBundle init_bundle(const AdrConfig& config, Rng& rng);

/// One Bernoulli(keep = 1 - rate) `[rows, width]` mask per dropout site.
std::vector<Tensor> sample_masks(Rng& rng, const nn::MlpSpec& spec, std::size_t rows, double rate);

/// Masks for the two classifiers C1 and C2 sampled from C by dropout.
struct TwinMasks {
    std::vector<Tensor> first;
    std::vector<Tensor> second;
};

TwinMasks sample_twin_masks(Rng& rng, const nn::MlpSpec& spec, std::size_t rows, double rate);

struct Step1Masks {
    std::vector<Tensor> critic;
    std::vector<Tensor> aux;
};

/// Graph of Step 1's two losses. The auxiliary classifier reads a detached
/// copy of G's features, so no path leads from `aux_loss` to `generator`.
struct Step1Graph {
    nn::ParamVars generator;
    nn::ParamVars critic;
    nn::ParamVars aux;
    Var critic_loss;
    Var aux_loss;
};

Step1Graph build_step1(Tape& tape, ModelBundle& bundle, const Tensor& source_x,
                       std::span<const std::size_t> source_labels, const Step1Masks& masks, double rate);

struct StepLosses {
    double objective = 0.0;
    double adversarial = 0.0;
};

/// Cross-entropy step on G and C over the source batch, plus a cross-entropy
/// step on C' over detached features.
StepLosses step1_update(ModelBundle& bundle, const Tensor& source_x, std::span<const std::size_t> source_labels,
                        const Step1Masks& masks, double rate);

/// C-only step minimizing L(Xs, Ys) - L_adv(Xt). For `Method::ent` only
/// `target_masks.first` is used and L_adv is target entropy.
StepLosses step2_update(ModelBundle& bundle, const Tensor& source_x, std::span<const std::size_t> source_labels,
                        const Tensor& target_x, std::span<const Tensor> source_masks, const TwinMasks& target_masks,
                        double rate, Method method = Method::adr);

/// One G-only step per entry of `repeats`, each minimizing
/// L_adv(Xt) + class-balance term on the mean twin prediction.
StepLosses step3_update(ModelBundle& bundle, const Tensor& target_x, std::span<const TwinMasks> repeats, double rate,
                        BalanceVariant variant, Method method = Method::adr);

/// L_adv on `x` for fixed masks, train-mode batch statistics, without
/// touching `bundle` (running statistics included).
double measure_adversarial(const ModelBundle& bundle, const Tensor& x, const TwinMasks& masks, double rate,
                           Method method = Method::adr);

enum class Head { critic, aux };

std::string to_string(Head head);
Head head_from_string(const std::string& name);

struct EvalResult {
    double accuracy = 0.0;
    double mean_entropy = 0.0;
};

/// Class probabilities of `head(G(x))` in eval mode.
Tensor predict_probs(const ModelBundle& bundle, const Tensor& x, Head head);
/// Index of the largest entry per row; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& probs);
EvalResult evaluate(const ModelBundle& bundle, const data::LabeledSet2D& set, Head head);

struct TrainMetricsRecord {
    std::size_t outer_iteration = 0;
    double loss_cls_source = 0.0;
    double sensitivity_target = 0.0;
    double sensitivity_source = 0.0;
    double acc_C_target = 0.0;
    double acc_Cprime_target = 0.0;
    double acc_C_source = 0.0;
    double mean_target_entropy = 0.0;

    friend bool operator==(const TrainMetricsRecord&, const TrainMetricsRecord&) = default;
};

/// Eval-mode metrics. Sensitivities use running batchnorm statistics with
/// dropout twin masks drawn from `rng`.
TrainMetricsRecord measure(const ModelBundle& bundle, const data::LabeledSet2D& source,
                           const data::LabeledSet2D& target, double rate, std::size_t iteration, Rng rng);

struct TrainResult {
    ModelBundle bundle;
    std::vector<TrainMetricsRecord> metrics;
    bool diverged = false;
    std::string diagnostic;
};

/// Runs Steps 1-3 per outer iteration (Step 1 only for `Method::source_only`).
/// Records metrics before training, every `eval_interval` iterations and at
/// the end. With dropout rate 0 the twin classifiers coincide and ADR's
/// adversarial steps are skipped, so the run equals source-only training.
TrainResult train(const AdrConfig& config, const data::LabeledSet2D& source, const data::LabeledSet2D& target);

TrainResult train_adr(AdrConfig config, const data::LabeledSet2D& source, const data::LabeledSet2D& target);
TrainResult train_ent(AdrConfig config, const data::LabeledSet2D& source, const data::LabeledSet2D& target);
TrainResult train_source_only(AdrConfig config, const data::LabeledSet2D& source, const data::LabeledSet2D& target);

/// Re-initializes C' and trains it on frozen G features of the source set.
void retrain_aux_classifier(ModelBundle& bundle, const AdrConfig& config, const data::LabeledSet2D& source,
                            std::size_t iterations, Rng rng);

}  // namespace adrlab::adr
