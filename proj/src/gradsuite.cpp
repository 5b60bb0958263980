#include "adrlab/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "adrlab/adr.hpp"
#include "adrlab/errors.hpp"
#include "adrlab/ganssl.hpp"
#include "adrlab/losses.hpp"

namespace adrlab {

namespace {

struct Instance {
    TapeFunction f;
    std::vector<Tensor> params;
};

using Builder = std::function<Instance(Rng&)>;

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.uniform_index(hi - lo + 1));
}

Tensor random(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Values bounded away from zero, for ops with a kink there.
Tensor away_from_zero(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
    return t;
}

Tensor random_mask(Rng& rng, Shape shape, double keep) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.bernoulli(keep) ? 1.0 : 0.0;
    return t;
}

std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = static_cast<std::size_t>(rng.uniform_index(k));
    return labels;
}

/// Reduces a tensor-valued op to a scalar through a fixed random weighting.
Var project(const Var& v, const Tensor& weights) {
    return sum(v * v.tape().leaf(weights));
}

Builder unary(std::function<Var(const Var&)> op, std::function<Tensor(Rng&, Shape)> input) {
    return [op, input](Rng& rng) {
        const Shape shape{dim(rng, 1, 5), dim(rng, 2, 5)};
        const Tensor weights = random(rng, shape);
        return Instance{[op, weights](Tape&, std::span<const Var> p) { return project(op(p[0]), weights); },
                        {input(rng, shape)}};
    };
}

Builder binary(std::function<Var(const Var&, const Var&)> op, bool row_rhs) {
    return [op, row_rhs](Rng& rng) {
        const std::size_t n = dim(rng, 1, 5), d = dim(rng, 1, 5);
        const Tensor weights = random(rng, {n, d});
        Tensor a = random(rng, {n, d});
        Tensor b = row_rhs ? random(rng, {d}) : random(rng, {n, d});
        return Instance{[op, weights](Tape&, std::span<const Var> p) { return project(op(p[0], p[1]), weights); },
                        {std::move(a), std::move(b)}};
    };
}

Instance batchnorm_case(Rng& rng, BatchNormMode mode) {
    const std::size_t n = dim(rng, 3, 6), d = dim(rng, 1, 4);
    const Tensor weights = random(rng, {n, d});
    BatchNormStats stats(d);
    stats.running_mean = random(rng, {d});
    stats.running_var = random(rng, {d}, 0.5, 2.0);
    return {[weights, stats, mode](Tape&, std::span<const Var> p) {
                BatchNormStats local = stats;
                return project(batchnorm(p[0], p[1], p[2], local, mode), weights);
            },
            {random(rng, {n, d}, -2.0, 2.0), random(rng, {d}, 0.5, 1.5), random(rng, {d})}};
}

Var probs_of(const Var& logits) { return softmax(logits); }

/// Tape leaves for a ParamStore, in the store's (sorted) order.
nn::ParamVars bind_span(const nn::ParamStore& store, std::span<const Var> vars, std::size_t& offset) {
    nn::ParamVars out;
    for (const auto& [name, value] : store) out.emplace(name, vars[offset++]);
    return out;
}

void append(std::vector<Tensor>& params, const nn::ParamStore& store) {
    for (const auto& [name, value] : store) params.push_back(value);
}

Instance adr_objective_case(Rng& rng, bool step3) {
    adr::AdrConfig config;
    Rng init(rng.next_u64());
    const adr::ModelBundle bundle = adr::init_bundle(config, init);
    const std::size_t n = dim(rng, 4, 10);
    const Tensor xs = random(rng, {n, 2}, -1.0, 2.0);
    const Tensor xt = random(rng, {n, 2}, -1.0, 2.0);
    const auto labels = random_labels(rng, n, 2);
    Rng mask_rng(rng.next_u64());
    const auto source_masks = adr::sample_masks(mask_rng, bundle.critic.spec, n, config.dropout_rate);
    const auto twin = adr::sample_twin_masks(mask_rng, bundle.critic.spec, n, config.dropout_rate);
    const double rate = config.dropout_rate;

    Instance inst;
    append(inst.params, bundle.generator.params);
    append(inst.params, bundle.critic.params);
    inst.f = [=](Tape& tape, std::span<const Var> vars) {
        std::size_t offset = 0;
        const auto g = bind_span(bundle.generator.params, vars, offset);
        const auto c = bind_span(bundle.critic.params, vars, offset);
        nn::BatchNormState g_bn = bundle.generator.bn, c_bn = bundle.critic.bn;
        auto classify = [&](const Var& features, std::span<const Tensor> masks) {
            return softmax(nn::mlp_forward(bundle.critic.spec, c, c_bn, features,
                                           {.mode = nn::ForwardMode::train, .masks = masks, .dropout_rate = rate})
                               .output);
        };
        auto features = [&](const Tensor& x) {
            return nn::mlp_forward(bundle.generator.spec, g, g_bn, tape.leaf(x), {.mode = nn::ForwardMode::train})
                .output;
        };
        const Var ft = features(xt);
        const Var p1 = classify(ft, twin.first), p2 = classify(ft, twin.second);
        const Var adversarial = adr::sensitivity(p1, p2);
        if (step3) return adversarial + adr::class_balance_term(scale(p1 + p2, 0.5), adr::BalanceVariant::marginal);
        return adr::cross_entropy(classify(features(xs), source_masks), labels) - adversarial;
    };
    return inst;
}

gan::GanConfig small_gan_config() {
    gan::GanConfig config;
    config.z_dim = 3;
    config.generator_hidden = {6, 5};
    config.critic_hidden = {6, 5};
    config.feature_layer = 0;
    return config;
}

Instance gan_critic_case(Rng& rng) {
    const gan::GanConfig config = small_gan_config();
    Rng init(rng.next_u64());
    const gan::GanBundle bundle = gan::init_gan_bundle(config, init);
    const std::size_t n = dim(rng, 3, 8);
    data::LabeledSet2D labeled{random(rng, {n, 2}, -4.0, 4.0), random_labels(rng, n, 2)};
    const Tensor unlabeled = random(rng, {n + 1, 2}, -4.0, 4.0);
    const Tensor fake = random(rng, {n + 2, 2}, -4.0, 4.0);
    Rng mask_rng(rng.next_u64());
    gan::CriticMasks masks;
    masks.labeled = adr::sample_masks(mask_rng, bundle.critic.spec, n, config.dropout_rate);
    masks.unlabeled = adr::sample_twin_masks(mask_rng, bundle.critic.spec, n + 1, config.dropout_rate);
    masks.fake = adr::sample_twin_masks(mask_rng, bundle.critic.spec, n + 2, config.dropout_rate);

    Instance inst;
    append(inst.params, bundle.critic.params);
    inst.f = [=](Tape& tape, std::span<const Var> vars) {
        std::size_t offset = 0;
        const auto c = bind_span(bundle.critic.params, vars, offset);
        nn::Mlp critic = bundle.critic;
        return gan::gan_critic_loss(tape, critic, c, labeled, unlabeled, fake, masks, config).total;
    };
    return inst;
}

Instance gan_generator_case(Rng& rng) {
    const gan::GanConfig config = small_gan_config();
    Rng init(rng.next_u64());
    gan::GanBundle bundle = gan::init_gan_bundle(config, init);
    const std::string bias = nn::layer_name(bundle.generator.spec.layers.size() - 1) + ".bias";
    bundle.generator.params.set(bias, random(rng, {2}, 0.5, 1.5));
    for (auto& [layer, stats] : bundle.critic.bn) {
        stats.running_mean = random(rng, stats.running_mean.shape(), -0.5, 0.5);
        stats.running_var = random(rng, stats.running_var.shape(), 0.5, 2.0);
    }
    const std::size_t n = dim(rng, 6, 10);
    const Tensor z = gan::sample_noise(rng, n, config.z_dim);
    const Tensor unlabeled = random(rng, {n + 3, 2}, -4.0, 4.0);
    Rng mask_rng(rng.next_u64());
    const auto twin = adr::sample_twin_masks(mask_rng, bundle.critic.spec, n, config.dropout_rate);

    Instance inst;
    append(inst.params, bundle.generator.params);
    inst.f = [=](Tape& tape, std::span<const Var> vars) {
        std::size_t offset = 0;
        const auto g = bind_span(bundle.generator.params, vars, offset);
        const auto c = nn::bind(tape, bundle.critic.params);
        nn::BatchNormState g_bn = bundle.generator.bn, c_bn = bundle.critic.bn;
        const Var fake =
            nn::mlp_forward(bundle.generator.spec, g, g_bn, tape.leaf(z), {.mode = nn::ForwardMode::train}).output;
        return gan::gan_generator_loss(bundle.critic, c, c_bn, fake, unlabeled, twin, config).total;
    };
    return inst;
}

Builder two_prob_rows(std::function<Var(const Var&, const Var&)> loss) {
    return [loss](Rng& rng) {
        const std::size_t n = dim(rng, 1, 6), k = dim(rng, 2, 5);
        return Instance{[loss](Tape&, std::span<const Var> p) { return loss(probs_of(p[0]), probs_of(p[1])); },
                        {random(rng, {n, k}, -2.0, 2.0), random(rng, {n, k}, -2.0, 2.0)}};
    };
}

Builder one_prob_rows(std::function<Var(const Var&)> loss) {
    return [loss](Rng& rng) {
        const std::size_t n = dim(rng, 1, 6), k = dim(rng, 2, 5);
        return Instance{[loss](Tape&, std::span<const Var> p) { return loss(probs_of(p[0])); },
                        {random(rng, {n, k}, -2.0, 2.0)}};
    };
}

const std::vector<std::pair<std::string, Builder>>& cases() {
    static const std::vector<std::pair<std::string, Builder>> table = {
        {"matmul",
         [](Rng& rng) {
             const std::size_t n = dim(rng, 1, 5), d = dim(rng, 1, 5), m = dim(rng, 1, 5);
             const Tensor weights = random(rng, {n, m});
             return Instance{
                 [weights](Tape&, std::span<const Var> p) { return project(matmul(p[0], p[1]), weights); },
                 {random(rng, {n, d}), random(rng, {d, m})}};
         }},
        {"add", binary([](const Var& a, const Var& b) { return a + b; }, false)},
        {"add_row_broadcast", binary([](const Var& a, const Var& b) { return a + b; }, true)},
        {"sub", binary([](const Var& a, const Var& b) { return a - b; }, false)},
        {"sub_row_broadcast", binary([](const Var& a, const Var& b) { return a - b; }, true)},
        {"scalar_mul", unary([](const Var& x) { return scale(x, -1.7); }, [](Rng& r, Shape s) { return random(r, s); })},
        {"relu", unary([](const Var& x) { return relu(x); }, away_from_zero)},
        {"softmax", unary([](const Var& x) { return softmax(x); },
                          [](Rng& r, Shape s) { return random(r, s, -3.0, 3.0); })},
        {"log", unary([](const Var& x) { return log(x, adr::kProbFloor); },
                      [](Rng& r, Shape s) { return random(r, s, 0.2, 2.0); })},
        {"exp", unary([](const Var& x) { return exp(x); }, [](Rng& r, Shape s) { return random(r, s); })},
        {"sum",
         [](Rng& rng) {
             return Instance{[](Tape&, std::span<const Var> p) { return sum(p[0]); },
                             {random(rng, {dim(rng, 1, 5), dim(rng, 1, 5)})}};
         }},
        {"mean",
         [](Rng& rng) {
             return Instance{[](Tape&, std::span<const Var> p) { return mean(p[0]); },
                             {random(rng, {dim(rng, 1, 5), dim(rng, 1, 5)})}};
         }},
        {"square", unary([](const Var& x) { return square(x); }, [](Rng& r, Shape s) { return random(r, s); })},
        {"mul", binary([](const Var& a, const Var& b) { return a * b; }, false)},
        {"batchnorm_train", [](Rng& rng) { return batchnorm_case(rng, BatchNormMode::train); }},
        {"batchnorm_eval", [](Rng& rng) { return batchnorm_case(rng, BatchNormMode::eval); }},
        {"dropout",
         [](Rng& rng) {
             const Shape shape{dim(rng, 1, 5), dim(rng, 1, 5)};
             const Tensor weights = random(rng, shape);
             const Tensor mask = random_mask(rng, shape, 0.7);
             return Instance{
                 [weights, mask](Tape&, std::span<const Var> p) { return project(dropout(p[0], mask, 0.3), weights); },
                 {random(rng, shape)}};
         }},
        {"sensitivity", two_prob_rows([](const Var& a, const Var& b) { return adr::sensitivity(a, b); })},
        {"cross_entropy",
         [](Rng& rng) {
             const std::size_t n = dim(rng, 1, 6), k = dim(rng, 2, 5);
             const auto labels = random_labels(rng, n, k);
             return Instance{
                 [labels](Tape&, std::span<const Var> p) { return adr::cross_entropy(probs_of(p[0]), labels); },
                 {random(rng, {n, k}, -2.0, 2.0)}};
         }},
        {"entropy_per_sample", one_prob_rows([](const Var& p) { return adr::entropy_per_sample(p); })},
        {"class_balance_marginal",
         one_prob_rows([](const Var& p) { return adr::class_balance_term(p, adr::BalanceVariant::marginal); })},
        {"class_balance_per_sample",
         one_prob_rows([](const Var& p) { return adr::class_balance_term(p, adr::BalanceVariant::per_sample_literal); })},
        {"feature_matching",
         [](Rng& rng) {
             const std::size_t d = dim(rng, 1, 5);
             return Instance{[](Tape&, std::span<const Var> p) { return adr::feature_matching(p[0], p[1]); },
                             {random(rng, {dim(rng, 1, 6), d}), random(rng, {dim(rng, 1, 6), d})}};
         }},
        {"adr_step2_objective", [](Rng& rng) { return adr_objective_case(rng, false); }},
        {"adr_step3_objective", [](Rng& rng) { return adr_objective_case(rng, true); }},
        {"gan_critic_loss", gan_critic_case},
        {"gan_generator_loss", gan_generator_case},
    };
    return table;
}

/// True when a relu input sits within `margin` of its kink, where a finite
/// difference straddles two linear pieces.
bool near_kink(const Instance& inst, double margin) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : inst.params) leaves.push_back(tape.leaf(p));
    inst.f(tape, leaves);
    for (std::size_t id = 0; id < tape.size(); ++id) {
        const Node& node = tape.node(id);
        if (node.op != OpKind::relu) continue;
        for (double v : tape.node(node.parents[0]).value.data()) {
            if (std::abs(v) < margin) return true;
        }
    }
    return false;
}

}  // namespace

std::vector<std::string> grad_suite_cases() {
    std::vector<std::string> names;
    for (const auto& [name, builder] : cases()) names.push_back(name);
    return names;
}

GradSuiteEntry run_grad_case(const std::string& name, std::size_t instances, std::uint64_t seed,
                             const GradCheckOptions& options) {
    const auto& table = cases();
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& entry) { return entry.first == name; });
    require(it != table.end(), "run_grad_case: unknown case '" + name + "'");
    GradSuiteEntry entry{name, instances, 0, 0.0, 0.0};
    const Rng root(seed);
    const Rng case_root = root.split(static_cast<std::uint64_t>(it - table.begin()) + 1);
    for (std::size_t i = 0; i < instances; ++i) {
        Rng rng = case_root.split(i);
        Instance inst = it->second(rng);
        for (int attempt = 0; near_kink(inst, 10.0 * options.step); ++attempt) {
            require(attempt < 1000, "run_grad_case: no kink-free instance found for '" + name + "'");
            inst = it->second(rng);
        }
        const GradCheckReport report = grad_check(inst.f, inst.params, options);
        if (!report.passed) ++entry.failures;
        entry.max_rel_err = std::max(entry.max_rel_err, report.max_rel_err());
        for (const auto& p : report.params) entry.max_abs_err = std::max(entry.max_abs_err, p.max_abs_err);
    }
    return entry;
}

std::vector<GradSuiteEntry> run_grad_suite(std::size_t instances, std::uint64_t seed, const GradCheckOptions& options) {
    std::vector<GradSuiteEntry> entries;
    for (const auto& name : grad_suite_cases()) entries.push_back(run_grad_case(name, instances, seed, options));
    return entries;
}

}  // namespace adrlab
