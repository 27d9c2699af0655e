#pragma once

#include <span>
#include <string>
#include <string_view>

#include "mlmforge/param_store.hpp"

namespace mlmforge {

// Parameters whose name matches `pattern` (shell-style glob: `*`, `?`) train
// at `lr`. A group with lr == 0 freezes its parameters, moments included.
struct LrGroup {
    std::string pattern;
    double lr = 0.0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

bool glob_match(std::string_view pattern, std::string_view name);

// Learning rate for `name`; throws ErrorCategory::config unless exactly one
// group matches.
double resolve_lr(std::string_view name, std::span<const LrGroup> groups);

// One bias-corrected Adam update of every entry, then grads are zeroed and
// step_count is incremented.
template <typename T>
void adam_step(ParameterStore<T>& store, std::span<const LrGroup> groups, const AdamConfig& config = {});

}  // namespace mlmforge
