#include "mlmforge/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlmforge/rng.hpp"

namespace mlmforge {

GradCheckReport grad_check(const LossFunction& loss, ParameterStore<double>& store,
                           const GradCheckOptions& options) {
    store.zero_grads();
    const double base = loss(store, true);
    if (loss(store, false) != base) {
        throw Error(ErrorCategory::numeric, "grad_check: objective is not deterministic");
    }

    GradCheckReport report;
    for (auto& entry : store.entries()) {
        TensorGradReport tr;
        tr.name = entry.name;

        const std::size_t n = entry.value.size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (n > options.samples_per_tensor) {
            Rng rng(derive_seed({options.seed, fnv1a64(entry.name)}));
            for (std::size_t i = 0; i < options.samples_per_tensor; ++i) {
                std::swap(coords[i], coords[i + rng.below(n - i)]);
            }
            coords.resize(options.samples_per_tensor);
        }

        for (const std::size_t k : coords) {
            const double original = entry.value[k];
            entry.value[k] = original + options.step;
            const double plus = loss(store, false);
            entry.value[k] = original - options.step;
            const double minus = loss(store, false);
            entry.value[k] = original;

            const double numeric = (plus - minus) / (2.0 * options.step);
            const double analytic = entry.grad[k];
            const double abs_err = std::abs(analytic - numeric);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), options.denominator_floor});
            tr.max_absolute_error = std::max(tr.max_absolute_error, abs_err);
            tr.max_relative_error = std::max(tr.max_relative_error, abs_err / denom);
            ++tr.checked;
        }
        tr.passed = tr.max_relative_error < options.tolerance;
        report.max_relative_error = std::max(report.max_relative_error, tr.max_relative_error);
        report.passed = report.passed && tr.passed;
        report.tensors.push_back(std::move(tr));
    }
    store.zero_grads();
    return report;
}

}  // namespace mlmforge
