#include "adrlab/adr.hpp"

#include <cmath>

#include "adrlab/errors.hpp"

namespace adrlab::adr {

using nn::ForwardMode;
using nn::ForwardOptions;

std::string to_string(Method method) {
    switch (method) {
        case Method::adr: return "adr";
        case Method::ent: return "ent";
        case Method::source_only: return "source_only";
    }
    return "unknown";
}

Method method_from_string(const std::string& name) {
    if (name == "adr") return Method::adr;
    if (name == "ent") return Method::ent;
    if (name == "source_only") return Method::source_only;
    throw ContractError("unknown method '" + name + "'");
}

std::string to_string(Head head) {
    return head == Head::critic ? "c" : "cprime";
}

Head head_from_string(const std::string& name) {
    if (name == "c") return Head::critic;
    if (name == "cprime") return Head::aux;
    throw ContractError("unknown head '" + name + "' (expected c or cprime)");
}

void AdrConfig::validate() const {
    require(n_step3_repeats >= 1, "AdrConfig: n_step3_repeats must be at least 1");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "AdrConfig: dropout_rate must lie in [0, 1)");
    require(batch_size_source >= 2 && batch_size_target >= 2, "AdrConfig: batch sizes must be at least 2");
    require(eval_interval >= 1, "AdrConfig: eval_interval must be at least 1");
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), "AdrConfig: learning rate must be finite and >= 0");
    require(generator_widths.size() >= 2 && classifier_widths.size() >= 2,
            "AdrConfig: networks need an input width and at least one layer");
    require(classifier_widths.front() == generator_widths.back(),
            "AdrConfig: classifier input width must equal generator output width");
    require(classifier_widths.back() >= 2, "AdrConfig: need at least two classes");
}

ModelBundle init_bundle(const AdrConfig& config, Rng& rng) {
    config.validate();
    Rng g_rng = rng.split(1), c_rng = rng.split(2), aux_rng = rng.split(3);
    ModelBundle bundle;
    bundle.generator = nn::init_mlp(nn::feature_extractor_spec(config.generator_widths), g_rng);
    bundle.critic = nn::init_mlp(nn::classifier_spec(config.classifier_widths), c_rng);
    bundle.aux_classifier = nn::init_mlp(nn::classifier_spec(config.classifier_widths), aux_rng);
    bundle.generator_opt = nn::OptimizerState::create(config.optimizer, config.learning_rate, bundle.generator.params);
    bundle.critic_opt = nn::OptimizerState::create(config.optimizer, config.learning_rate, bundle.critic.params);
    bundle.aux_opt = nn::OptimizerState::create(config.optimizer, config.learning_rate, bundle.aux_classifier.params);
    return bundle;
}

std::vector<Tensor> sample_masks(Rng& rng, const nn::MlpSpec& spec, std::size_t rows, double rate) {
    require(rate >= 0.0 && rate < 1.0, "sample_masks: rate must lie in [0, 1)");
    const double keep = 1.0 - rate;
    std::vector<Tensor> masks;
    for (auto width : spec.dropout_site_widths()) {
        Tensor mask({rows, width});
        for (auto& m : mask.data()) m = rng.bernoulli(keep) ? 1.0 : 0.0;
        masks.push_back(std::move(mask));
    }
    return masks;
}

TwinMasks sample_twin_masks(Rng& rng, const nn::MlpSpec& spec, std::size_t rows, double rate) {
    TwinMasks twin;
    twin.first = sample_masks(rng, spec, rows, rate);
    twin.second = sample_masks(rng, spec, rows, rate);
    return twin;
}

namespace {

/// G's train-mode features as a plain tensor; advances G's running statistics.
Tensor train_features(nn::Mlp& generator, const Tensor& x) {
    Tape tape;
    const auto vars = nn::bind(tape, generator.params);
    return nn::mlp_forward(generator.spec, vars, generator.bn, tape.leaf(x), {.mode = ForwardMode::train})
        .output.value();
}

Tensor eval_features(const nn::Mlp& generator, const Tensor& x) {
    return nn::predict_logits(generator, x);
}

Var classify(nn::Mlp& net, const nn::ParamVars& vars, const Var& features, ForwardMode mode,
             std::span<const Tensor> masks, double rate) {
    return softmax(nn::mlp_forward(net.spec, vars, net.bn, features,
                                   {.mode = mode, .masks = masks, .dropout_rate = rate})
                       .output);
}

/// L_adv on features already on the tape. ENT uses the first mask set only.
/// `mean_probs` receives the prediction the balance term is applied to.
Var adversarial_term(nn::Mlp& critic, const nn::ParamVars& vars, const Var& features, ForwardMode mode,
                     const TwinMasks& masks, double rate, Method method, Var* mean_probs = nullptr) {
    const Var p1 = classify(critic, vars, features, mode, masks.first, rate);
    if (method == Method::ent) {
        if (mean_probs) *mean_probs = p1;
        return entropy_per_sample(p1);
    }
    const Var p2 = classify(critic, vars, features, mode, masks.second, rate);
    if (mean_probs) *mean_probs = scale(p1 + p2, 0.5);
    return sensitivity(p1, p2);
}

}  // namespace

Step1Graph build_step1(Tape& tape, ModelBundle& bundle, const Tensor& source_x,
                       std::span<const std::size_t> source_labels, const Step1Masks& masks, double rate) {
    Step1Graph graph;
    graph.generator = nn::bind(tape, bundle.generator.params);
    graph.critic = nn::bind(tape, bundle.critic.params);
    graph.aux = nn::bind(tape, bundle.aux_classifier.params);

    const Var x = tape.leaf(source_x);
    const Var features = nn::mlp_forward(bundle.generator.spec, graph.generator, bundle.generator.bn, x,
                                         {.mode = ForwardMode::train})
                             .output;
    graph.critic_loss =
        cross_entropy(classify(bundle.critic, graph.critic, features, ForwardMode::train, masks.critic, rate),
                      source_labels);

    const Var detached = tape.leaf(features.value());
    graph.aux_loss = cross_entropy(
        classify(bundle.aux_classifier, graph.aux, detached, ForwardMode::train, masks.aux, rate), source_labels);
    return graph;
}

StepLosses step1_update(ModelBundle& bundle, const Tensor& source_x, std::span<const std::size_t> source_labels,
                        const Step1Masks& masks, double rate) {
    Tape tape;
    const Step1Graph graph = build_step1(tape, bundle, source_x, source_labels, masks, rate);

    const GradMap main_grads = tape.backward(graph.critic_loss);
    const GradMap aux_grads = tape.backward(graph.aux_loss);
    nn::optimizer_step(bundle.generator_opt, bundle.generator.params, nn::collect_grads(main_grads, graph.generator));
    nn::optimizer_step(bundle.critic_opt, bundle.critic.params, nn::collect_grads(main_grads, graph.critic));
    nn::optimizer_step(bundle.aux_opt, bundle.aux_classifier.params, nn::collect_grads(aux_grads, graph.aux));
    return {graph.critic_loss.value().item(), 0.0};
}

StepLosses step2_update(ModelBundle& bundle, const Tensor& source_x, std::span<const std::size_t> source_labels,
                        const Tensor& target_x, std::span<const Tensor> source_masks, const TwinMasks& target_masks,
                        double rate, Method method) {
    require(method != Method::source_only, "step2_update: source-only training has no Step 2");
    const Tensor source_features = train_features(bundle.generator, source_x);
    const Tensor target_features = train_features(bundle.generator, target_x);

    Tape tape;
    const auto critic_vars = nn::bind(tape, bundle.critic.params);
    const Var classification = cross_entropy(
        classify(bundle.critic, critic_vars, tape.leaf(source_features), ForwardMode::train, source_masks, rate),
        source_labels);
    const Var adversarial = adversarial_term(bundle.critic, critic_vars, tape.leaf(target_features),
                                             ForwardMode::train, target_masks, rate, method);
    const Var objective = classification - adversarial;

    const GradMap grads = tape.backward(objective);
    nn::optimizer_step(bundle.critic_opt, bundle.critic.params, nn::collect_grads(grads, critic_vars));
    return {objective.value().item(), adversarial.value().item()};
}

StepLosses step3_update(ModelBundle& bundle, const Tensor& target_x, std::span<const TwinMasks> repeats, double rate,
                        BalanceVariant variant, Method method) {
    require(method != Method::source_only, "step3_update: source-only training has no Step 3");
    require(!repeats.empty(), "step3_update: n_repeats must be at least 1");
    StepLosses last;
    for (const auto& masks : repeats) {
        Tape tape;
        const auto generator_vars = nn::bind(tape, bundle.generator.params);
        const auto critic_vars = nn::bind(tape, bundle.critic.params);
        const Var features = nn::mlp_forward(bundle.generator.spec, generator_vars, bundle.generator.bn,
                                             tape.leaf(target_x), {.mode = ForwardMode::train})
                                 .output;
        Var mean_probs;
        const Var adversarial = adversarial_term(bundle.critic, critic_vars, features, ForwardMode::train, masks,
                                                 rate, method, &mean_probs);
        const Var objective = adversarial + class_balance_term(mean_probs, variant);

        const GradMap grads = tape.backward(objective);
        nn::optimizer_step(bundle.generator_opt, bundle.generator.params,
                           nn::collect_grads(grads, generator_vars));
        last = {objective.value().item(), adversarial.value().item()};
    }
    return last;
}

double measure_adversarial(const ModelBundle& bundle, const Tensor& x, const TwinMasks& masks, double rate,
                           Method method) {
    nn::Mlp generator = bundle.generator;
    nn::Mlp critic = bundle.critic;
    const Tensor features = train_features(generator, x);
    Tape tape;
    const auto critic_vars = nn::bind(tape, critic.params);
    return adversarial_term(critic, critic_vars, tape.leaf(features), ForwardMode::train, masks, rate, method)
        .value()
        .item();
}

Tensor predict_probs(const ModelBundle& bundle, const Tensor& x, Head head) {
    const Tensor features = eval_features(bundle.generator, x);
    const nn::Mlp& net = head == Head::critic ? bundle.critic : bundle.aux_classifier;
    Tape tape;
    return softmax(tape.leaf(nn::predict_logits(net, features))).value();
}

std::vector<std::size_t> argmax_rows(const Tensor& probs) {
    std::vector<std::size_t> best(probs.rows(), 0);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        for (std::size_t c = 1; c < probs.cols(); ++c) {
            if (probs.at(r, c) > probs.at(r, best[r])) best[r] = c;
        }
    }
    return best;
}

namespace {

EvalResult score(const Tensor& probs, std::span<const std::size_t> labels) {
    const auto predicted = argmax_rows(probs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
    Tape tape;
    const double entropy = entropy_per_sample(tape.leaf(probs)).value().item();
    return {static_cast<double>(correct) / static_cast<double>(labels.size()), entropy};
}

double eval_sensitivity(const ModelBundle& bundle, const Tensor& x, double rate, Rng& rng) {
    const Tensor features = eval_features(bundle.generator, x);
    nn::Mlp critic = bundle.critic;
    const TwinMasks masks = sample_twin_masks(rng, critic.spec, x.rows(), rate);
    Tape tape;
    const auto vars = nn::bind(tape, critic.params);
    return adversarial_term(critic, vars, tape.leaf(features), ForwardMode::eval_dropout, masks, rate, Method::adr)
        .value()
        .item();
}

}  // namespace

EvalResult evaluate(const ModelBundle& bundle, const data::LabeledSet2D& set, Head head) {
    return score(predict_probs(bundle, set.points, head), set.labels);
}

TrainMetricsRecord measure(const ModelBundle& bundle, const data::LabeledSet2D& source,
                           const data::LabeledSet2D& target, double rate, std::size_t iteration, Rng rng) {
    TrainMetricsRecord record;
    record.outer_iteration = iteration;

    const Tensor source_probs = predict_probs(bundle, source.points, Head::critic);
    {
        Tape tape;
        record.loss_cls_source = cross_entropy(tape.leaf(source_probs), source.labels).value().item();
    }
    record.acc_C_source = score(source_probs, source.labels).accuracy;

    const EvalResult critic_target = evaluate(bundle, target, Head::critic);
    record.acc_C_target = critic_target.accuracy;
    record.mean_target_entropy = critic_target.mean_entropy;
    record.acc_Cprime_target = evaluate(bundle, target, Head::aux).accuracy;

    Rng target_rng = rng.split(1), source_rng = rng.split(2);
    record.sensitivity_target = eval_sensitivity(bundle, target.points, rate, target_rng);
    record.sensitivity_source = eval_sensitivity(bundle, source.points, rate, source_rng);
    return record;
}

namespace {

enum StreamKey : std::uint64_t { kInit = 1, kSourceBatches, kTargetBatches, kSteps, kEval };

}  // namespace

TrainResult train(const AdrConfig& config, const data::LabeledSet2D& source, const data::LabeledSet2D& target) {
    config.validate();
    const std::size_t classes = config.num_classes();
    source.validate(classes);
    target.validate(classes);
    require(source.points.cols() == config.generator_widths.front(), "train: input width mismatch");
    require(config.batch_size_source <= source.size() && config.batch_size_target <= target.size(),
            "train: batch size exceeds dataset size");

    const Rng root(config.seed);
    Rng init_rng = root.split(kInit);
    TrainResult result{init_bundle(config, init_rng), {}, false, {}};
    ModelBundle& bundle = result.bundle;

    data::BatchIterator source_batches(source.size(), config.batch_size_source, root.split(kSourceBatches));
    data::BatchIterator target_batches(target.size(), config.batch_size_target, root.split(kTargetBatches));
    const Rng step_root = root.split(kSteps);
    const Rng eval_root = root.split(kEval);
    const double rate = config.dropout_rate;
    const bool adversarial =
        config.method == Method::ent || (config.method == Method::adr && config.dropout_rate > 0.0);

    result.metrics.push_back(measure(bundle, source, target, rate, 0, eval_root.split(0)));

    for (std::size_t it = 1; it <= config.total_outer_iterations; ++it) {
        try {
            const Rng step_rng = step_root.split(it);
            const auto source_idx = *source_batches.next();
            const Tensor source_x = gather_rows(source.points, source_idx);
            std::vector<std::size_t> source_y;
            source_y.reserve(source_idx.size());
            for (auto i : source_idx) source_y.push_back(source.labels[i]);

            Rng step1_rng = step_rng.split(1);
            Step1Masks masks1;
            masks1.critic = sample_masks(step1_rng, bundle.critic.spec, source_x.rows(), rate);
            masks1.aux = sample_masks(step1_rng, bundle.aux_classifier.spec, source_x.rows(), rate);
            step1_update(bundle, source_x, source_y, masks1, rate);

            if (adversarial) {
                const Tensor target_x = gather_rows(target.points, *target_batches.next());
                Rng step2_rng = step_rng.split(2);
                const auto source_masks = sample_masks(step2_rng, bundle.critic.spec, source_x.rows(), rate);
                const auto twin = sample_twin_masks(step2_rng, bundle.critic.spec, target_x.rows(), rate);
                step2_update(bundle, source_x, source_y, target_x, source_masks, twin, rate, config.method);

                const Rng step3_rng = step_rng.split(3);
                std::vector<TwinMasks> repeats;
                for (std::size_t k = 0; k < config.n_step3_repeats; ++k) {
                    Rng repeat_rng = step3_rng.split(k);
                    repeats.push_back(sample_twin_masks(repeat_rng, bundle.critic.spec, target_x.rows(), rate));
                }
                step3_update(bundle, target_x, repeats, rate, config.entropy_term_variant, config.method);
            }

            if (it % config.eval_interval == 0 || it == config.total_outer_iterations) {
                result.metrics.push_back(measure(bundle, source, target, rate, it, eval_root.split(it)));
            }
        } catch (const NumericError& e) {
            result.diverged = true;
            result.diagnostic = "diverged at outer iteration " + std::to_string(it) + ": " + e.what();
            break;
        }
    }
    return result;
}

TrainResult train_adr(AdrConfig config, const data::LabeledSet2D& source, const data::LabeledSet2D& target) {
    config.method = Method::adr;
    return train(config, source, target);
}

TrainResult train_ent(AdrConfig config, const data::LabeledSet2D& source, const data::LabeledSet2D& target) {
    config.method = Method::ent;
    return train(config, source, target);
}

TrainResult train_source_only(AdrConfig config, const data::LabeledSet2D& source,
                              const data::LabeledSet2D& target) {
    config.method = Method::source_only;
    return train(config, source, target);
}

void retrain_aux_classifier(ModelBundle& bundle, const AdrConfig& config, const data::LabeledSet2D& source,
                            std::size_t iterations, Rng rng) {
    Rng init_rng = rng.split(1);
    bundle.aux_classifier = nn::init_mlp(bundle.critic.spec, init_rng);
    bundle.aux_opt = nn::OptimizerState::create(config.optimizer, config.learning_rate, bundle.aux_classifier.params);
    const Tensor features = eval_features(bundle.generator, source.points);
    data::BatchIterator batches(source.size(), std::min(config.batch_size_source, source.size()), rng.split(2));
    const Rng mask_root = rng.split(3);
    for (std::size_t it = 0; it < iterations; ++it) {
        const auto idx = *batches.next();
        std::vector<std::size_t> labels;
        for (auto i : idx) labels.push_back(source.labels[i]);
        Rng mask_rng = mask_root.split(it);
        const auto masks = sample_masks(mask_rng, bundle.aux_classifier.spec, idx.size(), config.dropout_rate);
        Tape tape;
        const auto vars = nn::bind(tape, bundle.aux_classifier.params);
        const Var loss = cross_entropy(classify(bundle.aux_classifier, vars, tape.leaf(gather_rows(features, idx)),
                                                ForwardMode::train, masks, config.dropout_rate),
                                       labels);
        nn::optimizer_step(bundle.aux_opt, bundle.aux_classifier.params,
                           nn::collect_grads(tape.backward(loss), vars));
    }
}

}  // namespace adrlab::adr
