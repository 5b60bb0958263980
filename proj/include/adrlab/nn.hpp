#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adrlab/rng.hpp"
#include "adrlab/tape.hpp"
#include "adrlab/tensor.hpp"

namespace adrlab::nn {

enum class Activation { relu, none };

struct LayerSpec {
    std::size_t width = 1;
    bool batchnorm = false;
    Activation activation = Activation::none;
    bool dropout_after = false;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A stack of fully connected layers, each optionally followed by
/// batchnorm, an activation and a dropout site (in that order).
struct MlpSpec {
    std::size_t input_width = 1;
    std::vector<LayerSpec> layers;

    std::size_t output_width() const { return layers.back().width; }
    std::size_t dropout_site_count() const;
    /// Widths of the dropout sites, in forward order.
    std::vector<std::size_t> dropout_site_widths() const;
    void validate() const;

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// `widths[0]` is the input; every later layer gets batchnorm + relu.
MlpSpec feature_extractor_spec(std::span<const std::size_t> widths);
/// `widths[0]` is the input; hidden layers get batchnorm + relu + dropout,
/// the last layer is linear and produces logits.
MlpSpec classifier_spec(std::span<const std::size_t> widths);

/// Named learnable tensors. Names are unique and shapes fixed at creation.
class ParamStore {
public:
    void add(const std::string& name, Tensor value);
    const Tensor& at(const std::string& name) const;
    Tensor& mutable_at(const std::string& name);
    void set(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return tensors_.contains(name); }
    std::size_t size() const noexcept { return tensors_.size(); }

    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

private:
    std::map<std::string, Tensor> tensors_;
};

/// Non-learned running statistics, keyed by layer name ("l0", "l1", ...).
using BatchNormState = std::map<std::string, BatchNormStats>;

std::string layer_name(std::size_t index);

struct Mlp {
    MlpSpec spec;
    ParamStore params;
    BatchNormState bn;
};

/// Glorot-uniform weights, zero biases, unit gamma, zero beta, running mean 0, running var 1.
/// Layers with batchnorm carry no linear bias (beta plays that role).
Mlp init_mlp(const MlpSpec& spec, Rng& rng);

/// Tape leaves bound to a ParamStore, by parameter name.
using ParamVars = std::map<std::string, Var>;
ParamVars bind(Tape& tape, const ParamStore& params);

enum class ForwardMode {
    /// Batch statistics (running stats advance), dropout masks applied.
    train,
    /// Running statistics, no dropout.
    eval,
    /// Running statistics (not advanced), dropout masks applied. Used to
    /// measure dropout sensitivity without touching training state.
    eval_dropout,
};

struct ForwardOptions {
    ForwardMode mode = ForwardMode::eval;
    /// One `[n, width]` keep-mask per dropout site. Required iff the mode
    /// applies dropout and the spec has dropout sites.
    std::span<const Tensor> masks = {};
    double dropout_rate = 0.0;
    /// Optional `[width]` hard 0/1 mask on the last hidden layer's output,
    /// applied without rescaling.
    const Tensor* probe_mask = nullptr;
};

struct MlpOutput {
    Var output;
    /// Post-activation output of every hidden layer (before dropout).
    std::vector<Var> hidden;
};

MlpOutput mlp_forward(const MlpSpec& spec, const ParamVars& params, BatchNormState& bn, const Var& x,
                      const ForwardOptions& options);

/// Eval-mode logits, without keeping the tape.
Tensor predict_logits(const Mlp& net, const Tensor& x);

// ---- optimizers --------------------------------------------------------

enum class OptimizerKind { adam, sgd };

using adrlab::to_string;

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;

    /// Zero moments for every parameter in `params`.
    static OptimizerState create(OptimizerKind kind, double learning_rate, const ParamStore& params);

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

using NamedGrads = std::map<std::string, Tensor>;

/// Gradients for the bound parameters that feed the root. Parameters the
/// root does not depend on are omitted.
NamedGrads collect_grads(const GradMap& grads, const ParamVars& vars);

/// Adam (bias-corrected) or SGD update. Parameters missing from `grads` are
/// left untouched; the step counter advances once per call.
void optimizer_step(OptimizerState& opt, ParamStore& params, const NamedGrads& grads);

}  // namespace adrlab::nn
