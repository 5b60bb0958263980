#include "adrlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "adrlab/errors.hpp"

namespace adrlab {

double GradCheckReport::max_rel_err() const {
    double worst = 0.0;
    for (const auto& p : params) worst = std::max(worst, p.max_rel_err);
    return worst;
}

namespace {

double evaluate(const TapeFunction& f, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(tape.leaf(p));
    return f(tape, leaves).value().item();
}

}  // namespace

GradCheckReport grad_check(const TapeFunction& f, std::span<const Tensor> params, const GradCheckOptions& options) {
    require(options.step > 0.0, "grad_check: step must be positive");

    std::vector<Tensor> point(params.begin(), params.end());
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> leaves;
        for (const auto& p : point) leaves.push_back(tape.leaf(p));
        const Var root = f(tape, leaves);
        const GradMap grads = tape.backward(root);
        for (const auto& leaf : leaves) analytic.push_back(grads.get(leaf));
    }

    GradCheckReport report;
    for (std::size_t k = 0; k < point.size(); ++k) {
        ParamCheck check;
        for (std::size_t i = 0; i < point[k].size(); ++i) {
            const double saved = point[k][i];
            point[k][i] = saved + options.step;
            const double up = evaluate(f, point);
            point[k][i] = saved - options.step;
            const double down = evaluate(f, point);
            point[k][i] = saved;

            const double numeric = (up - down) / (2.0 * options.step);
            const double exact = analytic[k][i];
            const double abs_err = std::abs(numeric - exact);
            const double magnitude = std::max(std::abs(numeric), std::abs(exact));
            check.max_abs_err = std::max(check.max_abs_err, abs_err);
            if (magnitude < options.abs_floor) {
                if (abs_err >= options.abs_floor) check.passed = false;
                continue;
            }
            const double rel_err = abs_err / magnitude;
            check.max_rel_err = std::max(check.max_rel_err, rel_err);
            if (rel_err >= options.rel_tol) check.passed = false;
        }
        report.passed = report.passed && check.passed;
        report.params.push_back(check);
    }
    return report;
}

}  // namespace adrlab
