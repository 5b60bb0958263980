#include "adrlab/ganssl.hpp"

#include <cmath>
#include <fstream>

#include "adrlab/errors.hpp"

namespace adrlab::gan {

using nn::ForwardMode;

void GanConfig::validate() const {
    require(mixture.num_classes >= 2, "GanConfig: need at least two classes");
    require(mixture.n_labeled_per_class >= 1, "GanConfig: need at least one labeled point per class");
    require(mixture.n_unlabeled >= 2, "GanConfig: need at least two unlabeled points");
    require(n_test >= 1, "GanConfig: test set must be non-empty");
    require(z_dim >= 1, "GanConfig: z_dim must be at least 1");
    require(!generator_hidden.empty() && !critic_hidden.empty(), "GanConfig: networks need hidden layers");
    require(feature_layer < critic_hidden.size(), "GanConfig: feature_layer must index a critic hidden layer");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "GanConfig: dropout_rate must lie in [0, 1)");
    require(critic_learning_rate >= 0.0 && generator_learning_rate >= 0.0, "GanConfig: learning rates must be >= 0");
    require(batch_size_labeled >= 2 && batch_size_unlabeled >= 2 && batch_size_fake >= 2,
            "GanConfig: batch sizes must be at least 2");
    require(batch_size_labeled <= mixture.num_classes * mixture.n_labeled_per_class,
            "GanConfig: labeled batch exceeds the labeled set");
    require(batch_size_unlabeled <= mixture.n_unlabeled, "GanConfig: unlabeled batch exceeds the unlabeled set");
    require(eval_interval >= 1, "GanConfig: eval_interval must be at least 1");
}

nn::MlpSpec GanConfig::generator_spec() const {
    nn::MlpSpec spec{z_dim, {}};
    for (auto width : generator_hidden) spec.layers.push_back({width, true, nn::Activation::relu, false});
    spec.layers.push_back({2, false, nn::Activation::none, false});
    spec.validate();
    return spec;
}

nn::MlpSpec GanConfig::critic_spec() const {
    std::vector<std::size_t> widths{2};
    widths.insert(widths.end(), critic_hidden.begin(), critic_hidden.end());
    widths.push_back(mixture.num_classes);
    return nn::classifier_spec(widths);
}

GanBundle init_gan_bundle(const GanConfig& config, Rng& rng) {
    config.validate();
    Rng g_rng = rng.split(1), c_rng = rng.split(2), aux_rng = rng.split(3);
    GanBundle bundle;
    bundle.generator = nn::init_mlp(config.generator_spec(), g_rng);
    bundle.critic = nn::init_mlp(config.critic_spec(), c_rng);
    bundle.generator_opt =
        nn::OptimizerState::create(config.optimizer, config.generator_learning_rate, bundle.generator.params);
    bundle.critic_opt = nn::OptimizerState::create(config.optimizer, config.critic_learning_rate, bundle.critic.params);
    if (config.use_aux_head) {
        const nn::MlpSpec spec{config.critic_hidden[config.feature_layer],
                               {{config.mixture.num_classes, false, nn::Activation::none, false}}};
        bundle.aux_head = nn::init_mlp(spec, aux_rng);
        bundle.aux_opt = nn::OptimizerState::create(config.optimizer, config.critic_learning_rate, bundle.aux_head->params);
    }
    return bundle;
}

Tensor sample_noise(Rng& rng, std::size_t n, std::size_t z_dim) {
    Tensor z({n, z_dim});
    for (auto& v : z.data()) v = rng.normal();
    return z;
}

namespace {

Var classify(const nn::MlpSpec& spec, const nn::ParamVars& vars, nn::BatchNormState& bn, const Var& x,
             ForwardMode mode, std::span<const Tensor> masks, double rate) {
    return softmax(mlp_forward(spec, vars, bn, x, {.mode = mode, .masks = masks, .dropout_rate = rate}).output);
}

Var twin_sensitivity(const nn::MlpSpec& spec, const nn::ParamVars& vars, nn::BatchNormState& bn, const Var& x,
                     ForwardMode mode, const adr::TwinMasks& masks, double rate, Var* mean_probs = nullptr) {
    const Var p1 = classify(spec, vars, bn, x, mode, masks.first, rate);
    const Var p2 = classify(spec, vars, bn, x, mode, masks.second, rate);
    if (mean_probs) *mean_probs = scale(p1 + p2, 0.5);
    return adr::sensitivity(p1, p2);
}

Tensor generator_train_output(nn::Mlp& generator, const Tensor& z) {
    Tape tape;
    const auto vars = nn::bind(tape, generator.params);
    return nn::mlp_forward(generator.spec, vars, generator.bn, tape.leaf(z), {.mode = ForwardMode::train})
        .output.value();
}

}  // namespace

CriticLoss gan_critic_loss(Tape& tape, nn::Mlp& critic, const nn::ParamVars& critic_vars,
                           const data::LabeledSet2D& labeled, const Tensor& unlabeled, const Tensor& fake,
                           const CriticMasks& masks, const GanConfig& config) {
    require(labeled.size() > 0 && unlabeled.rows() > 0 && fake.rows() > 0, "gan_critic_loss: empty batch");
    if (unlabeled.cols() != 2 || fake.cols() != 2) throw ShapeError("gan_critic_loss: batches must be [n, 2]");
    const double rate = config.dropout_rate;
    CriticLoss loss;
    loss.labeled = adr::cross_entropy(
        classify(critic.spec, critic_vars, critic.bn, tape.leaf(labeled.points), ForwardMode::train, masks.labeled,
                 rate),
        labeled.labels);
    loss.total = loss.labeled;

    Var unlabeled_mean;
    if (config.use_adversarial) {
        loss.adv_unlabeled = twin_sensitivity(critic.spec, critic_vars, critic.bn, tape.leaf(unlabeled),
                                              ForwardMode::train, masks.unlabeled, rate, &unlabeled_mean);
        loss.adv_fake =
            twin_sensitivity(critic.spec, critic_vars, critic.bn, tape.leaf(fake), ForwardMode::train, masks.fake, rate);
        const Var difference = config.flip_adversarial_signs ? loss.adv_fake - loss.adv_unlabeled
                                                             : loss.adv_unlabeled - loss.adv_fake;
        loss.total = loss.total + difference;
    }
    if (config.use_balance) {
        if (!config.use_adversarial) {
            unlabeled_mean = classify(critic.spec, critic_vars, critic.bn, tape.leaf(unlabeled), ForwardMode::train,
                                      masks.unlabeled.first, rate);
        }
        loss.balance = adr::class_balance_term(unlabeled_mean, config.balance_variant);
        loss.total = loss.total + loss.balance;
    }
    return loss;
}

Var critic_features(const nn::Mlp& critic, const nn::ParamVars& vars, const Var& x, std::size_t layer) {
    require(layer + 1 < critic.spec.layers.size(), "critic_features: layer must be a hidden layer");
    nn::BatchNormState bn = critic.bn;
    return nn::mlp_forward(critic.spec, vars, bn, x, {}).hidden[layer];
}

GeneratorLoss gan_generator_loss(const nn::Mlp& critic, const nn::ParamVars& critic_vars,
                                 nn::BatchNormState& critic_bn, const Var& fake, const Tensor& unlabeled,
                                 const adr::TwinMasks& masks, const GanConfig& config) {
    Tape& tape = fake.tape();
    GeneratorLoss loss;
    loss.feature_matching =
        adr::feature_matching(critic_features(critic, critic_vars, fake, config.feature_layer),
                              critic_features(critic, critic_vars, tape.leaf(unlabeled), config.feature_layer));
    loss.total = loss.feature_matching;
    if (config.use_adversarial) {
        loss.adv_fake = twin_sensitivity(critic.spec, critic_vars, critic_bn, fake, ForwardMode::train, masks,
                                         config.dropout_rate);
        loss.total = loss.adv_fake + loss.feature_matching;
    }
    return loss;
}

double critic_accuracy(const nn::Mlp& critic, const data::LabeledSet2D& set) {
    const auto predicted = adr::argmax_rows(nn::predict_logits(critic, set.points));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i) correct += predicted[i] == set.labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

Tensor generate(const GanBundle& bundle, std::size_t n, Rng& rng) {
    return nn::predict_logits(bundle.generator, sample_noise(rng, n, bundle.generator.spec.input_width));
}

namespace {

enum StreamKey : std::uint64_t { kInit = 1, kLabeledBatches, kUnlabeledBatches, kSteps, kEval };

constexpr std::size_t kEvalFakes = 512;

double aux_accuracy(const GanBundle& bundle, const GanConfig& config, const data::LabeledSet2D& set) {
    Tape tape;
    const auto vars = nn::bind(tape, bundle.critic.params);
    const Tensor f = critic_features(bundle.critic, vars, tape.leaf(set.points), config.feature_layer).value();
    const auto predicted = adr::argmax_rows(nn::predict_logits(*bundle.aux_head, f));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i) correct += predicted[i] == set.labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

GanMetricsRecord measure(const GanBundle& bundle, const GanConfig& config, const data::LabeledSet2D& labeled,
                         const Tensor* unlabeled, const data::LabeledSet2D& test, std::size_t iteration, Rng rng) {
    GanMetricsRecord record;
    record.iteration = iteration;
    record.test_accuracy = critic_accuracy(bundle.critic, test);
    record.test_error = 1.0 - record.test_accuracy;
    if (bundle.aux_head) record.aux_test_accuracy = aux_accuracy(bundle, config, test);

    nn::Mlp critic = bundle.critic;
    Tape tape;
    const auto vars = nn::bind(tape, critic.params);
    record.labeled_loss =
        adr::cross_entropy(classify(critic.spec, vars, critic.bn, tape.leaf(labeled.points), ForwardMode::eval, {}, 0.0),
                           labeled.labels)
            .value()
            .item();
    if (!unlabeled) return record;

    Rng fake_rng = rng.split(1), mask_rng = rng.split(2);
    const Tensor fake = generate(bundle, kEvalFakes, fake_rng);
    const double rate = config.dropout_rate;
    const auto unlabeled_masks = adr::sample_twin_masks(mask_rng, critic.spec, unlabeled->rows(), rate);
    const auto fake_masks = adr::sample_twin_masks(mask_rng, critic.spec, fake.rows(), rate);
    record.adv_unlabeled = twin_sensitivity(critic.spec, vars, critic.bn, tape.leaf(*unlabeled),
                                            ForwardMode::eval_dropout, unlabeled_masks, rate)
                               .value()
                               .item();
    record.adv_fake =
        twin_sensitivity(critic.spec, vars, critic.bn, tape.leaf(fake), ForwardMode::eval_dropout, fake_masks, rate)
            .value()
            .item();
    record.feature_matching =
        adr::feature_matching(critic_features(critic, vars, tape.leaf(fake), config.feature_layer),
                              critic_features(critic, vars, tape.leaf(*unlabeled), config.feature_layer))
            .value()
            .item();
    return record;
}

data::LabeledSet2D gather(const data::LabeledSet2D& set, const std::vector<std::size_t>& idx) {
    data::LabeledSet2D out{gather_rows(set.points, idx), {}};
    for (auto i : idx) out.labels.push_back(set.labels[i]);
    return out;
}

void aux_step(GanBundle& bundle, const Tensor& features, std::span<const std::size_t> labels) {
    Tape tape;
    const auto vars = nn::bind(tape, bundle.aux_head->params);
    const Var loss = adr::cross_entropy(
        classify(bundle.aux_head->spec, vars, bundle.aux_head->bn, tape.leaf(features), ForwardMode::train, {}, 0.0),
        labels);
    nn::optimizer_step(*bundle.aux_opt, bundle.aux_head->params, nn::collect_grads(tape.backward(loss), vars));
}

GanResult run(const GanConfig& config, const data::LabeledSet2D& labeled, const Tensor* unlabeled,
              const data::LabeledSet2D& test) {
    config.validate();
    const std::size_t classes = config.mixture.num_classes;
    labeled.validate(classes);
    test.validate(classes);

    const Rng root(config.seed);
    Rng init_rng = root.split(kInit);
    GanResult result{init_gan_bundle(config, init_rng), {}, false, {}};
    GanBundle& bundle = result.bundle;

    data::BatchIterator labeled_batches(labeled.size(), config.batch_size_labeled, root.split(kLabeledBatches));
    std::optional<data::BatchIterator> unlabeled_batches;
    if (unlabeled) {
        require(unlabeled->rank() == 2 && unlabeled->cols() == 2 && unlabeled->rows() >= config.batch_size_unlabeled,
                "train_gan_ssl: unlabeled set must be [n, 2] with n >= batch_size_unlabeled");
        unlabeled_batches.emplace(unlabeled->rows(), config.batch_size_unlabeled, root.split(kUnlabeledBatches));
    }
    const Rng step_root = root.split(kSteps);
    const Rng eval_root = root.split(kEval);
    const double rate = config.dropout_rate;

    result.metrics.push_back(measure(bundle, config, labeled, unlabeled, test, 0, eval_root.split(0)));
    for (std::size_t it = 1; it <= config.total_iterations; ++it) {
        try {
            const Rng step_rng = step_root.split(it);
            const data::LabeledSet2D batch = gather(labeled, *labeled_batches.next());

            Rng critic_rng = step_rng.split(1);
            CriticMasks masks;
            masks.labeled = adr::sample_masks(critic_rng, bundle.critic.spec, batch.size(), rate);
            Tape tape;
            const auto critic_vars = nn::bind(tape, bundle.critic.params);
            Var critic_loss;
            if (unlabeled) {
                const Tensor real = gather_rows(*unlabeled, *unlabeled_batches->next());
                const Tensor fake = generator_train_output(
                    bundle.generator, sample_noise(critic_rng, config.batch_size_fake, config.z_dim));
                masks.unlabeled = adr::sample_twin_masks(critic_rng, bundle.critic.spec, real.rows(), rate);
                masks.fake = adr::sample_twin_masks(critic_rng, bundle.critic.spec, fake.rows(), rate);
                critic_loss = gan_critic_loss(tape, bundle.critic, critic_vars, batch, real, fake, masks, config).total;
            } else {
                critic_loss = adr::cross_entropy(classify(bundle.critic.spec, critic_vars, bundle.critic.bn,
                                                          tape.leaf(batch.points), ForwardMode::train, masks.labeled,
                                                          rate),
                                                 batch.labels);
            }
            nn::optimizer_step(bundle.critic_opt, bundle.critic.params,
                               nn::collect_grads(tape.backward(critic_loss), critic_vars));

            if (bundle.aux_head) {
                Tape feature_tape;
                const auto vars = nn::bind(feature_tape, bundle.critic.params);
                aux_step(bundle,
                         critic_features(bundle.critic, vars, feature_tape.leaf(batch.points), config.feature_layer)
                             .value(),
                         batch.labels);
            }

            if (unlabeled) {
                Rng generator_rng = step_rng.split(2);
                const Tensor real = gather_rows(*unlabeled, *unlabeled_batches->next());
                const Tensor z = sample_noise(generator_rng, config.batch_size_fake, config.z_dim);
                const auto twin = adr::sample_twin_masks(generator_rng, bundle.critic.spec, z.rows(), rate);
                Tape gen_tape;
                const auto generator_vars = nn::bind(gen_tape, bundle.generator.params);
                const auto frozen_critic = nn::bind(gen_tape, bundle.critic.params);
                const Var fake = nn::mlp_forward(bundle.generator.spec, generator_vars, bundle.generator.bn,
                                                 gen_tape.leaf(z), {.mode = ForwardMode::train})
                                     .output;
                nn::BatchNormState scratch_bn = bundle.critic.bn;
                const GeneratorLoss loss =
                    gan_generator_loss(bundle.critic, frozen_critic, scratch_bn, fake, real, twin, config);
                nn::optimizer_step(bundle.generator_opt, bundle.generator.params,
                                   nn::collect_grads(gen_tape.backward(loss.total), generator_vars));
            }

            if (it % config.eval_interval == 0 || it == config.total_iterations) {
                result.metrics.push_back(measure(bundle, config, labeled, unlabeled, test, it, eval_root.split(it)));
            }
        } catch (const NumericError& e) {
            result.diverged = true;
            result.diagnostic = "diverged at iteration " + std::to_string(it) + ": " + e.what();
            break;
        }
    }
    return result;
}

}  // namespace

GanResult train_gan_ssl(const GanConfig& config, const data::LabeledSet2D& labeled, const Tensor& unlabeled,
                        const data::LabeledSet2D& test) {
    return run(config, labeled, &unlabeled, test);
}

GanResult train_labeled_only(const GanConfig& config, const data::LabeledSet2D& labeled,
                             const data::LabeledSet2D& test) {
    return run(config, labeled, nullptr, test);
}

GanData make_gan_data(const GanConfig& config) {
    const Rng root(config.seed);
    Rng train_rng = root.split(0x6d6978), test_rng = root.split(0x74657374);
    return {data::make_gaussian_mixture(config.mixture, train_rng),
            data::sample_gaussian_mixture(config.mixture, config.n_test, test_rng)};
}

void write_samples_csv(const std::filesystem::path& path, const Tensor& samples) {
    require(samples.rank() == 2 && samples.cols() == 2, "write_samples_csv: samples must be [n, 2]");
    std::ofstream out(path);
    require(static_cast<bool>(out), "write_samples_csv: cannot open " + path.string());
    out.precision(17);
    out << "x,y\n";
    for (std::size_t r = 0; r < samples.rows(); ++r) out << samples.at(r, 0) << ',' << samples.at(r, 1) << '\n';
}

}  // namespace adrlab::gan
