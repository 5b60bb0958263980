#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adrlab/gradcheck.hpp"

namespace adrlab {

struct GradSuiteEntry {
    std::string name;
    std::size_t instances = 0;
    std::size_t failures = 0;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;

    bool passed() const { return failures == 0; }
};

/// Names of every case the suite covers: the primitive ops, then the
/// composite losses and training objectives.
std::vector<std::string> grad_suite_cases();

/// Finite-difference check of one case on `instances` random seeded
/// instances (shapes and values drawn from `seed`).
GradSuiteEntry run_grad_case(const std::string& name, std::size_t instances, std::uint64_t seed,
                             const GradCheckOptions& options = {});

std::vector<GradSuiteEntry> run_grad_suite(std::size_t instances, std::uint64_t seed,
                                           const GradCheckOptions& options = {});

}  // namespace adrlab
