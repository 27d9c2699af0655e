#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mlmforge/param_store.hpp"

namespace mlmforge {

// Scalar objective over a 64-bit store. When `with_grad` is true it must also
// accumulate d(loss)/d(value) into each entry's grad.
using LossFunction = std::function<double(ParameterStore<double>& store, bool with_grad)>;

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    std::size_t samples_per_tensor = 64;  // all coordinates when a tensor is smaller
    std::uint64_t seed = 0;
    // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor),
    // so coordinates whose true gradient is ~0 are judged on absolute error.
    double denominator_floor = 1e-6;
};

struct TensorGradReport {
    std::string name;
    std::size_t checked = 0;
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<TensorGradReport> tensors;
    double max_relative_error = 0.0;
    bool passed = true;
};

// Compares analytic gradients against central differences on a sampled
// subset of coordinates. Throws ErrorCategory::numeric if two evaluations of
// `loss` at the same point disagree.
GradCheckReport grad_check(const LossFunction& loss, ParameterStore<double>& store,
                           const GradCheckOptions& options = {});

}  // namespace mlmforge
