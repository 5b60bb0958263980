#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adrlab/tape.hpp"

namespace adrlab {

/// Builds a scalar on `tape` from leaves bound to `params` (same order).
using TapeFunction = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
    double step = 1e-5;
    double rel_tol = 1e-4;
    /// Entries where both gradients are below this are compared absolutely.
    double abs_floor = 1e-8;
};

struct ParamCheck {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    bool passed = true;

    double max_rel_err() const;
};

/// Compares reverse-mode gradients of `f` against central finite
/// differences entry by entry. Mismatches are reported, not raised.
GradCheckReport grad_check(const TapeFunction& f, std::span<const Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace adrlab
