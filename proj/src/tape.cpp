#include "adrlab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adrlab/errors.hpp"

namespace adrlab {

std::string_view op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::scalar_mul: return "scalar_mul";
        case OpKind::relu: return "relu";
        case OpKind::softmax: return "softmax";
        case OpKind::log: return "log";
        case OpKind::exp: return "exp";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::square: return "square";
        case OpKind::mul: return "mul";
        case OpKind::batchnorm: return "batchnorm";
        case OpKind::dropout: return "dropout";
    }
    return "unknown";
}

const Tensor& Var::value() const {
    return tape_->node(id_).value;
}

const Tensor& GradMap::at(const Var& v) const {
    if (!contains(v)) throw ContractError("node " + std::to_string(v.id()) + " is not an ancestor of the root");
    return *grads_[v.id()];
}

Tensor GradMap::get(const Var& v) const {
    if (contains(v)) return *grads_[v.id()];
    return filled_like(v.value(), 0.0);
}

std::size_t GradMap::count() const noexcept {
    return static_cast<std::size_t>(std::count_if(grads_.begin(), grads_.end(), [](const auto& g) { return g.has_value(); }));
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.op = OpKind::leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::push(Node node) {
    if (!node.value.all_finite()) {
        throw NumericError("non-finite value produced by " + std::string(op_name(node.op)));
    }
    node.id = nodes_.size();
    for (auto p : node.parents) {
        if (p >= node.id) throw ContractError("tape parent must precede child");
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
    return a.tape();
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
    return a.rank() == 2 && b.size() == a.cols() && (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1)) &&
           a.shape() != b.shape();
}

Var elementwise_binary(OpKind kind, const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Node n;
    n.op = kind;
    n.parents = {a.id(), b.id()};
    n.value = x;
    const double sign = kind == OpKind::sub ? -1.0 : 1.0;
    if (x.shape() == y.shape()) {
        auto out = n.value.data();
        if (kind == OpKind::mul) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + sign * y[i];
        }
    } else if (kind != OpKind::mul && is_row_broadcast(x, y)) {
        n.flag = true;
        const std::size_t cols = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < cols; ++c) n.value.at(r, c) = x.at(r, c) + sign * y[c];
        }
    } else {
        throw ShapeError(std::string(op_name(kind)) + " shape mismatch: " + to_string(x.shape()) + " vs " +
                         to_string(y.shape()));
    }
    return tape.push(std::move(n));
}

Var unary(OpKind kind, const Var& x, Tensor value) {
    Node n;
    n.op = kind;
    n.parents = {x.id()};
    n.value = std::move(value);
    return x.tape().push(std::move(n));
}

void accumulate(std::optional<Tensor>& slot, const Tensor& g) {
    if (!slot) {
        slot = g;
        return;
    }
    auto dst = slot->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

Tensor transpose(const Tensor& m) {
    Tensor t({m.cols(), m.rows()});
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) t.at(c, r) = m.at(r, c);
    return t;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    Node n;
    n.op = OpKind::matmul;
    n.parents = {a.id(), b.id()};
    n.value = matmul_values(a.value(), b.value());
    return tape.push(std::move(n));
}

Var add(const Var& a, const Var& b) { return elementwise_binary(OpKind::add, a, b); }
Var sub(const Var& a, const Var& b) { return elementwise_binary(OpKind::sub, a, b); }
Var mul(const Var& a, const Var& b) { return elementwise_binary(OpKind::mul, a, b); }

Var scale(const Var& x, double factor) {
    Tensor out = x.value();
    for (auto& v : out.data()) v *= factor;
    Node n;
    n.op = OpKind::scalar_mul;
    n.parents = {x.id()};
    n.value = std::move(out);
    n.scalar = factor;
    return x.tape().push(std::move(n));
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return unary(OpKind::relu, x, std::move(out));
}

Var softmax(const Var& logits) {
    const Tensor& l = logits.value();
    if (l.rank() != 2 || l.cols() < 2) {
        throw ShapeError("softmax expects [n, K] with K >= 2, got " + to_string(l.shape()));
    }
    Tensor out(l.shape());
    for (std::size_t r = 0; r < l.rows(); ++r) {
        double hi = l.at(r, 0);
        for (std::size_t c = 1; c < l.cols(); ++c) hi = std::max(hi, l.at(r, c));
        double total = 0.0;
        for (std::size_t c = 0; c < l.cols(); ++c) {
            out.at(r, c) = std::exp(l.at(r, c) - hi);
            total += out.at(r, c);
        }
        for (std::size_t c = 0; c < l.cols(); ++c) out.at(r, c) /= total;
    }
    return unary(OpKind::softmax, logits, std::move(out));
}

Var log(const Var& x, double floor) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = std::log(std::max(v, floor));
    Node n;
    n.op = OpKind::log;
    n.parents = {x.id()};
    n.value = std::move(out);
    n.scalar = floor;
    return x.tape().push(std::move(n));
}

Var exp(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = std::exp(v);
    return unary(OpKind::exp, x, std::move(out));
}

Var sum(const Var& x) {
    double total = 0.0;
    for (double v : x.value().data()) total += v;
    return unary(OpKind::sum, x, Tensor::scalar(total));
}

Var mean(const Var& x) {
    double total = 0.0;
    for (double v : x.value().data()) total += v;
    return unary(OpKind::mean, x, Tensor::scalar(total / static_cast<double>(x.value().size())));
}

Var square(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = v * v;
    return unary(OpKind::square, x, std::move(out));
}

Var dropout(const Var& x, const Tensor& mask, double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
    if (mask.shape() != x.value().shape()) {
        throw ShapeError("dropout mask shape " + to_string(mask.shape()) + " does not match input " +
                         to_string(x.value().shape()));
    }
    for (double m : mask.data()) {
        if (m != 0.0 && m != 1.0) throw ContractError("dropout mask entries must be 0 or 1");
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * mask[i] * keep_scale;
    Node n;
    n.op = OpKind::dropout;
    n.parents = {x.id()};
    n.value = std::move(out);
    n.aux = mask;
    n.scalar = keep_scale;
    return x.tape().push(std::move(n));
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, BatchNormMode mode,
              bool update_running) {
    Tape& tape = same_tape(x, gamma);
    same_tape(x, beta);
    const Tensor& in = x.value();
    if (in.rank() != 2) throw ShapeError("batchnorm expects [n, d], got " + to_string(in.shape()));
    const std::size_t n = in.rows(), d = in.cols();
    if (gamma.value().size() != d || beta.value().size() != d || stats.running_mean.size() != d ||
        stats.running_var.size() != d) {
        throw ShapeError("batchnorm parameter width mismatch for input " + to_string(in.shape()));
    }

    Tensor mu({d}), var({d});
    if (mode == BatchNormMode::train) {
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += in.at(r, c);
            mu[c] = s / static_cast<double>(n);
            double ss = 0.0;
            for (std::size_t r = 0; r < n; ++r) ss += (in.at(r, c) - mu[c]) * (in.at(r, c) - mu[c]);
            var[c] = ss / static_cast<double>(n);
        }
        if (update_running) {
            for (std::size_t c = 0; c < d; ++c) {
                stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * mu[c];
                stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * var[c];
            }
        }
    } else {
        mu = stats.running_mean;
        var = stats.running_var;
    }

    Tensor inv_std({d});
    for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + stats.eps);
    Tensor xhat(in.shape());
    Tensor out(in.shape());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            xhat.at(r, c) = (in.at(r, c) - mu[c]) * inv_std[c];
            out.at(r, c) = gamma.value()[c] * xhat.at(r, c) + beta.value()[c];
        }
    }

    Node node;
    node.op = OpKind::batchnorm;
    node.parents = {x.id(), gamma.id(), beta.id()};
    node.value = std::move(out);
    node.aux = std::move(xhat);
    node.aux2 = std::move(inv_std);
    node.flag = mode == BatchNormMode::train;
    return tape.push(std::move(node));
}

GradMap Tape::backward(const Var& root) const {
    if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
    const Node& top = nodes_.at(root.id());
    if (!top.value.is_scalar()) {
        throw ContractError("backward requires a scalar root, got shape " + to_string(top.value.shape()));
    }

    std::vector<std::optional<Tensor>> grads(nodes_.size());
    grads[root.id()] = filled_like(top.value, 1.0);

    for (std::size_t idx = root.id() + 1; idx-- > 0;) {
        if (!grads[idx]) continue;
        const Node& n = nodes_[idx];
        const Tensor& g = *grads[idx];
        auto parent_value = [&](std::size_t k) -> const Tensor& { return nodes_[n.parents[k]].value; };

        switch (n.op) {
            case OpKind::leaf:
                break;
            case OpKind::matmul: {
                const Tensor& a = parent_value(0);
                const Tensor& b = parent_value(1);
                accumulate(grads[n.parents[0]], matmul_values(g, transpose(b)));
                accumulate(grads[n.parents[1]], matmul_values(transpose(a), g));
                break;
            }
            case OpKind::add:
            case OpKind::sub: {
                const double sign = n.op == OpKind::sub ? -1.0 : 1.0;
                accumulate(grads[n.parents[0]], g);
                const Tensor& b = parent_value(1);
                Tensor gb = filled_like(b, 0.0);
                if (n.flag) {
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += sign * g.at(r, c);
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] = sign * g[i];
                }
                accumulate(grads[n.parents[1]], gb);
                break;
            }
            case OpKind::mul: {
                const Tensor& a = parent_value(0);
                const Tensor& b = parent_value(1);
                Tensor ga = g, gb = g;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] = g[i] * b[i];
                    gb[i] = g[i] * a[i];
                }
                accumulate(grads[n.parents[0]], ga);
                accumulate(grads[n.parents[1]], gb);
                break;
            }
            case OpKind::scalar_mul: {
                Tensor gx = g;
                for (auto& v : gx.data()) v *= n.scalar;
                accumulate(grads[n.parents[0]], gx);
                break;
            }
            case OpKind::relu: {
                const Tensor& x = parent_value(0);
                Tensor gx = g;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] = x[i] > 0.0 ? g[i] : 0.0;
                accumulate(grads[n.parents[0]], gx);
                break;
            }
            case OpKind::softmax: {
                const Tensor& y = n.value;
                Tensor gx(y.shape());
                for (std::size_t r = 0; r < y.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
                    for (std::size_t c = 0; c < y.cols(); ++c) gx.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                }
                accumulate(grads[n.parents[0]], gx);
                break;
            }
            case OpKind::log: {
                const Tensor& x = parent_value(0);
                Tensor gx = g;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] = x[i] > n.scalar ? g[i] / x[i] : 0.0;
                accumulate(grads[n.parents[0]], gx);
                break;
            }
            case OpKind::exp: {
                Tensor gx = g;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * n.value[i];
                accumulate(grads[n.parents[0]], gx);
                break;
            }
            case OpKind::sum:
                accumulate(grads[n.parents[0]], filled_like(parent_value(0), g.item()));
                break;
            case OpKind::mean: {
                const Tensor& x = parent_value(0);
                accumulate(grads[n.parents[0]], filled_like(x, g.item() / static_cast<double>(x.size())));
                break;
            }
            case OpKind::square: {
                const Tensor& x = parent_value(0);
                Tensor gx = g;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] = 2.0 * x[i] * g[i];
                accumulate(grads[n.parents[0]], gx);
                break;
            }
            case OpKind::dropout: {
                Tensor gx = g;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * n.aux[i] * n.scalar;
                accumulate(grads[n.parents[0]], gx);
                break;
            }
            case OpKind::batchnorm: {
                const Tensor& gamma = parent_value(1);
                const Tensor& xhat = n.aux;
                const Tensor& inv_std = n.aux2;
                const std::size_t rows = xhat.rows(), cols = xhat.cols();
                Tensor dgamma(gamma.shape()), dbeta(gamma.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        dgamma[c] += g.at(r, c) * xhat.at(r, c);
                        dbeta[c] += g.at(r, c);
                    }
                }
                Tensor dx(xhat.shape());
                if (n.flag) {
                    // Batch statistics depend on x, so the mean and variance terms contribute.
                    const double count = static_cast<double>(rows);
                    for (std::size_t c = 0; c < cols; ++c) {
                        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double dxhat = g.at(r, c) * gamma[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat.at(r, c);
                        }
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double dxhat = g.at(r, c) * gamma[c];
                            dx.at(r, c) = inv_std[c] / count *
                                          (count * dxhat - sum_dxhat - xhat.at(r, c) * sum_dxhat_xhat);
                        }
                    }
                } else {
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) dx.at(r, c) = g.at(r, c) * gamma[c] * inv_std[c];
                }
                accumulate(grads[n.parents[0]], dx);
                accumulate(grads[n.parents[1]], dgamma);
                accumulate(grads[n.parents[2]], dbeta);
                break;
            }
        }
    }
    return GradMap(std::move(grads));
}

}  // namespace adrlab
