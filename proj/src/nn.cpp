#include "adrlab/nn.hpp"

#include <cmath>

#include "adrlab/errors.hpp"

namespace adrlab::nn {

std::size_t MlpSpec::dropout_site_count() const {
    std::size_t count = 0;
    for (const auto& layer : layers) count += layer.dropout_after ? 1 : 0;
    return count;
}

std::vector<std::size_t> MlpSpec::dropout_site_widths() const {
    std::vector<std::size_t> widths;
    for (const auto& layer : layers) {
        if (layer.dropout_after) widths.push_back(layer.width);
    }
    return widths;
}

void MlpSpec::validate() const {
    require(input_width > 0, "MlpSpec: input width must be positive");
    require(!layers.empty(), "MlpSpec: at least one layer is required");
    for (const auto& layer : layers) require(layer.width > 0, "MlpSpec: layer widths must be positive");
}

MlpSpec feature_extractor_spec(std::span<const std::size_t> widths) {
    require(widths.size() >= 2, "feature_extractor_spec: need an input width and at least one layer");
    MlpSpec spec{widths[0], {}};
    for (std::size_t i = 1; i < widths.size(); ++i) {
        spec.layers.push_back({widths[i], true, Activation::relu, false});
    }
    spec.validate();
    return spec;
}

MlpSpec classifier_spec(std::span<const std::size_t> widths) {
    require(widths.size() >= 2, "classifier_spec: need an input width and at least one layer");
    MlpSpec spec{widths[0], {}};
    for (std::size_t i = 1; i + 1 < widths.size(); ++i) {
        spec.layers.push_back({widths[i], true, Activation::relu, true});
    }
    spec.layers.push_back({widths.back(), false, Activation::none, false});
    spec.validate();
    return spec;
}

void ParamStore::add(const std::string& name, Tensor value) {
    if (!tensors_.emplace(name, std::move(value)).second) {
        throw ContractError("ParamStore: duplicate parameter name '" + name + "'");
    }
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

Tensor& ParamStore::mutable_at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

void ParamStore::set(const std::string& name, Tensor value) {
    Tensor& slot = mutable_at(name);
    if (slot.shape() != value.shape()) {
        throw ShapeError("ParamStore: shape of '" + name + "' is " + to_string(slot.shape()) + ", got " +
                         to_string(value.shape()));
    }
    slot = std::move(value);
}

std::string layer_name(std::size_t index) {
    return "l" + std::to_string(index);
}

Mlp init_mlp(const MlpSpec& spec, Rng& rng) {
    spec.validate();
    Mlp net{spec, {}, {}};
    std::size_t fan_in = spec.input_width;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& layer = spec.layers[i];
        const std::string prefix = layer_name(i);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + layer.width));
        Tensor weight({fan_in, layer.width});
        for (auto& w : weight.data()) w = rng.uniform(-bound, bound);
        net.params.add(prefix + ".weight", std::move(weight));
        if (layer.batchnorm) {
            net.params.add(prefix + ".gamma", Tensor({layer.width}, 1.0));
            net.params.add(prefix + ".beta", Tensor({layer.width}, 0.0));
            net.bn.emplace(prefix, BatchNormStats(layer.width));
        } else {
            net.params.add(prefix + ".bias", Tensor({layer.width}, 0.0));
        }
        fan_in = layer.width;
    }
    return net;
}

ParamVars bind(Tape& tape, const ParamStore& params) {
    ParamVars vars;
    for (const auto& [name, value] : params) vars.emplace(name, tape.leaf(value));
    return vars;
}

namespace {

const Var& param(const ParamVars& vars, const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw ContractError("mlp_forward: missing parameter '" + name + "'");
    return it->second;
}

}  // namespace

MlpOutput mlp_forward(const MlpSpec& spec, const ParamVars& params, BatchNormState& bn, const Var& x,
                      const ForwardOptions& options) {
    const bool applies_dropout = options.mode != ForwardMode::eval;
    const std::size_t sites = spec.dropout_site_count();
    if (applies_dropout && sites > 0) {
        require(options.masks.size() == sites, "mlp_forward: expected " + std::to_string(sites) +
                                                    " dropout masks, got " + std::to_string(options.masks.size()));
    } else {
        require(options.masks.empty(), "mlp_forward: dropout masks supplied to a forward that applies none");
    }
    if (x.value().rank() != 2 || x.value().cols() != spec.input_width) {
        throw ShapeError("mlp_forward: input " + to_string(x.value().shape()) + " does not match input width " +
                         std::to_string(spec.input_width));
    }

    const std::size_t rows = x.value().rows();
    const std::size_t probe_layer = spec.layers.size() >= 2 ? spec.layers.size() - 2 : spec.layers.size();
    if (options.probe_mask) {
        require(probe_layer < spec.layers.size(), "mlp_forward: probe mask needs a hidden layer");
        require(options.probe_mask->size() == spec.layers[probe_layer].width,
                "mlp_forward: probe mask width does not match the last hidden layer");
    }

    MlpOutput out;
    Var h = x;
    std::size_t site = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& layer = spec.layers[i];
        const std::string prefix = layer_name(i);
        h = matmul(h, param(params, prefix + ".weight"));
        if (layer.batchnorm) {
            auto it = bn.find(prefix);
            require(it != bn.end(), "mlp_forward: missing batchnorm state for " + prefix);
            const auto mode = options.mode == ForwardMode::train ? BatchNormMode::train : BatchNormMode::eval;
            h = batchnorm(h, param(params, prefix + ".gamma"), param(params, prefix + ".beta"), it->second, mode);
        } else {
            h = h + param(params, prefix + ".bias");
        }
        if (layer.activation == Activation::relu) h = relu(h);
        if (i + 1 < spec.layers.size()) out.hidden.push_back(h);
        if (layer.dropout_after && applies_dropout) {
            const Tensor& mask = options.masks[site];
            if (mask.rank() != 2 || mask.rows() != rows || mask.cols() != layer.width) {
                throw ContractError("mlp_forward: dropout mask " + to_string(mask.shape()) + " does not match [" +
                                    std::to_string(rows) + ", " + std::to_string(layer.width) + "]");
            }
            h = dropout(h, mask, options.dropout_rate);
        }
        if (layer.dropout_after) ++site;
        if (options.probe_mask && i == probe_layer) {
            Tensor full({rows, layer.width});
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < layer.width; ++c) full.at(r, c) = (*options.probe_mask)[c];
            h = dropout(h, full, 0.0);
        }
    }
    out.output = h;
    return out;
}

Tensor predict_logits(const Mlp& net, const Tensor& x) {
    Tape tape;
    const ParamVars vars = bind(tape, net.params);
    BatchNormState bn = net.bn;
    return mlp_forward(net.spec, vars, bn, tape.leaf(x), {}).output.value();
}

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw ContractError("unknown optimizer '" + name + "'");
}

OptimizerState OptimizerState::create(OptimizerKind kind, double learning_rate, const ParamStore& params) {
    OptimizerState opt;
    opt.kind = kind;
    opt.learning_rate = learning_rate;
    for (const auto& [name, value] : params) {
        opt.first_moment.emplace(name, filled_like(value, 0.0));
        opt.second_moment.emplace(name, filled_like(value, 0.0));
    }
    return opt;
}

NamedGrads collect_grads(const GradMap& grads, const ParamVars& vars) {
    NamedGrads named;
    for (const auto& [name, var] : vars) {
        if (grads.contains(var)) named.emplace(name, grads.at(var));
    }
    return named;
}

void optimizer_step(OptimizerState& opt, ParamStore& params, const NamedGrads& grads) {
    for (const auto& [name, g] : grads) {
        require(opt.first_moment.contains(name), "optimizer_step: parameter '" + name + "' is not managed");
        if (params.at(name).shape() != g.shape()) {
            throw ContractError("optimizer_step: gradient shape " + to_string(g.shape()) + " for '" + name +
                                "' does not match " + to_string(params.at(name).shape()));
        }
    }
    ++opt.step;
    const double t = static_cast<double>(opt.step);
    const double correction1 = 1.0 - std::pow(opt.beta1, t);
    const double correction2 = 1.0 - std::pow(opt.beta2, t);
    for (const auto& [name, g] : grads) {
        Tensor& p = params.mutable_at(name);
        if (opt.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= opt.learning_rate * g[i];
            continue;
        }
        Tensor& m = opt.first_moment.at(name);
        Tensor& v = opt.second_moment.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            p[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.eps);
        }
    }
}

}  // namespace adrlab::nn
