#include "adrlab/losses.hpp"

#include <cmath>

#include "adrlab/errors.hpp"

namespace adrlab::adr {

namespace {

void require_probs(const Var& p, const char* op) {
    const Tensor& v = p.value();
    if (v.rank() != 2 || v.cols() < 2) {
        throw ShapeError(std::string(op) + ": expected [n, K] probabilities with K >= 2, got " + to_string(v.shape()));
    }
    for (std::size_t r = 0; r < v.rows(); ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < v.cols(); ++c) {
            require(v.at(r, c) >= 0.0, std::string(op) + ": probabilities must be non-negative");
            total += v.at(r, c);
        }
        require(std::abs(total - 1.0) <= 1e-6, std::string(op) + ": probability rows must sum to 1");
    }
}

/// Constant `[1, n]` row of 1/n; left-multiplying averages the rows.
Var row_averager(Tape& tape, std::size_t n) {
    return tape.leaf(Tensor({1, n}, 1.0 / static_cast<double>(n)));
}

}  // namespace

Var sensitivity(const Var& p1, const Var& p2) {
    require_probs(p1, "sensitivity");
    if (p1.value().shape() != p2.value().shape()) {
        throw ShapeError("sensitivity: shape mismatch " + to_string(p1.value().shape()) + " vs " +
                         to_string(p2.value().shape()));
    }
    const double rows = static_cast<double>(p1.value().rows());
    const Var gap = p1 - p2;
    const Var log_gap = log(p1, kProbFloor) - log(p2, kProbFloor);
    return scale(sum(gap * log_gap), 0.5 / rows);
}

Var cross_entropy(const Var& probs, std::span<const std::size_t> labels) {
    require_probs(probs, "cross_entropy");
    const Tensor& p = probs.value();
    require(labels.size() == p.rows(), "cross_entropy: one label per row is required");
    Tensor one_hot(p.shape(), 0.0);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        require(labels[r] < p.cols(), "cross_entropy: label " + std::to_string(labels[r]) + " out of range");
        one_hot.at(r, labels[r]) = 1.0;
    }
    const Var selector = probs.tape().leaf(std::move(one_hot));
    return scale(sum(selector * log(probs, kProbFloor)), -1.0 / static_cast<double>(p.rows()));
}

Var entropy_per_sample(const Var& probs) {
    require_probs(probs, "entropy_per_sample");
    return scale(sum(probs * log(probs, kProbFloor)), -1.0 / static_cast<double>(probs.value().rows()));
}

std::string to_string(BalanceVariant variant) {
    return variant == BalanceVariant::marginal ? "marginal" : "per_sample_literal";
}

BalanceVariant balance_variant_from_string(const std::string& name) {
    if (name == "marginal") return BalanceVariant::marginal;
    if (name == "per_sample_literal") return BalanceVariant::per_sample_literal;
    throw ContractError("unknown entropy term variant '" + name + "'");
}

Var class_balance_term(const Var& probs, BalanceVariant variant) {
    require_probs(probs, "class_balance_term");
    if (variant == BalanceVariant::per_sample_literal) {
        return scale(sum(probs * log(probs, kProbFloor)), 1.0 / static_cast<double>(probs.value().rows()));
    }
    const Var marginal = matmul(row_averager(probs.tape(), probs.value().rows()), probs);
    return sum(marginal * log(marginal, kProbFloor));
}

Var feature_matching(const Var& fake_features, const Var& real_features) {
    const Tensor& f = fake_features.value();
    const Tensor& r = real_features.value();
    if (f.rank() != 2 || r.rank() != 2 || f.cols() != r.cols()) {
        throw ShapeError("feature_matching: shape mismatch " + to_string(f.shape()) + " vs " + to_string(r.shape()));
    }
    Tape& tape = fake_features.tape();
    const Var fake_mean = matmul(row_averager(tape, f.rows()), fake_features);
    const Var real_mean = matmul(row_averager(tape, r.rows()), real_features);
    return sum(square(fake_mean - real_mean));
}

}  // namespace adrlab::adr
