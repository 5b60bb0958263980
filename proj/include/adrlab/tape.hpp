#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <string_view>
#include <vector>

#include "adrlab/tensor.hpp"

namespace adrlab {

using NodeId = std::size_t;

/// Fixed primitive catalog. Everything else composes from these.
enum class OpKind {
    leaf,
    matmul,
    add,
    sub,
    scalar_mul,
    relu,
    softmax,
    log,
    exp,
    sum,
    mean,
    square,
    mul,
    batchnorm,
    dropout,
};

std::string_view op_name(OpKind kind) noexcept;

struct Node {
    NodeId id = 0;
    OpKind op = OpKind::leaf;
    std::vector<NodeId> parents;
    Tensor value;
    // Op-specific cached state: dropout mask, batchnorm x-hat, etc.
    Tensor aux;
    Tensor aux2;
    double scalar = 0.0;
    bool flag = false;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    NodeId id() const noexcept { return id_; }
    Tape& tape() const noexcept { return *tape_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

/// Gradients of one scalar root with respect to each of its ancestors.
class GradMap {
public:
    explicit GradMap(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}

    bool contains(NodeId id) const noexcept { return id < grads_.size() && grads_[id].has_value(); }
    bool contains(const Var& v) const noexcept { return contains(v.id()); }
    /// Gradient for an ancestor of the root; throws if `v` is not one.
    const Tensor& at(const Var& v) const;
    /// Gradient, or zeros shaped like the node's value when `v` does not feed the root.
    Tensor get(const Var& v) const;
    std::size_t count() const noexcept;

private:
    std::vector<std::optional<Tensor>> grads_;
};

/// Append-only record of primitive ops. Node ids are indices, so parents
/// always precede children and the graph is acyclic by construction.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value);
    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse-mode sweep from a scalar root.
    GradMap backward(const Var& root) const;

    Var push(Node node);

private:
    // deque: node references stay valid while the tape grows.
    std::deque<Node> nodes_;
};

// ---- primitive ops ------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// Elementwise sum. `b` may also be a row vector (`[d]` or `[1, d]`) added to every row of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var relu(const Var& x);
/// Row-wise softmax with per-row max subtraction.
Var softmax(const Var& logits);
/// `log(max(x, floor))`; the gradient is zero where the floor is active.
Var log(const Var& x, double floor = 0.0);
Var exp(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var square(const Var& x);
Var mul(const Var& a, const Var& b);
/// Inverted dropout: `x * mask / (1 - rate)`.
Var dropout(const Var& x, const Tensor& mask, double rate);

/// Per-feature normalization statistics for one batchnorm layer.
struct BatchNormStats {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormStats(std::size_t features = 1)
        : running_mean(Shape{features}, 0.0), running_var(Shape{features}, 1.0) {}

    friend bool operator==(const BatchNormStats&, const BatchNormStats&) = default;
};

enum class BatchNormMode { train, eval };

/// Batch normalization over the rows of `x` (`[n, d]`). Train mode uses the
/// batch's biased variance and, when `update_running` is set, advances the
/// running statistics by `momentum`. Eval mode uses the running statistics.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, BatchNormMode mode,
              bool update_running = true);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& x) { return scale(x, s); }
inline Var operator-(const Var& x) { return scale(x, -1.0); }

}  // namespace adrlab
