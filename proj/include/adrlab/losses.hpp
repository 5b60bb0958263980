#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "adrlab/tape.hpp"

namespace adrlab::adr {

/// Probabilities are clamped to [kProbFloor, 1] before every log.
inline constexpr double kProbFloor = 1e-8;

using adrlab::to_string;

/// Mean over rows of the symmetric KL divergence
/// ½(KL(p1‖p2) + KL(p2‖p1)) = ½ Σ_k (p1 − p2)(log p1 − log p2).
/// Swapping the arguments gives a bit-identical result.
Var sensitivity(const Var& p1, const Var& p2);

/// −mean_i log probs[i, labels[i]].
Var cross_entropy(const Var& probs, std::span<const std::size_t> labels);

/// mean_i −Σ_k p_ik log p_ik.
Var entropy_per_sample(const Var& probs);

enum class BalanceVariant {
    /// Σ_k p̄_k log p̄_k with p̄ the batch-mean prediction (negative marginal entropy).
    marginal,
    /// mean_i Σ_k p_ik log p_ik, i.e. −entropy_per_sample.
    per_sample_literal,
};

std::string to_string(BalanceVariant variant);
BalanceVariant balance_variant_from_string(const std::string& name);

/// Class-balance regularizer added to the feature generator's objective.
Var class_balance_term(const Var& probs, BalanceVariant variant);

/// Squared distance between the row means of two feature batches.
Var feature_matching(const Var& fake_features, const Var& real_features);

}  // namespace adrlab::adr
