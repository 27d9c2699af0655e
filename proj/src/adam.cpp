#include "mlmforge/adam.hpp"

#include <cmath>
#include <vector>

namespace mlmforge {

bool glob_match(std::string_view pattern, std::string_view name) {
    std::size_t p = 0;
    std::size_t n = 0;
    std::size_t star = std::string_view::npos;
    std::size_t resume = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
            ++p;
            ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            resume = n;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            n = ++resume;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') {
        ++p;
    }
    return p == pattern.size();
}

double resolve_lr(std::string_view name, std::span<const LrGroup> groups) {
    const LrGroup* found = nullptr;
    for (const auto& g : groups) {
        if (glob_match(g.pattern, name)) {
            if (found != nullptr) {
                throw Error(ErrorCategory::config, "adam: parameter " + std::string(name) +
                                                       " matches both '" + found->pattern + "' and '" +
                                                       g.pattern + "'");
            }
            found = &g;
        }
    }
    if (found == nullptr) {
        throw Error(ErrorCategory::config, "adam: parameter " + std::string(name) + " matches no group");
    }
    return found->lr;
}

template <typename T>
void adam_step(ParameterStore<T>& store, std::span<const LrGroup> groups, const AdamConfig& config) {
    // Resolve every group before touching state so a bad config leaves the store intact.
    std::vector<double> rates;
    rates.reserve(store.size());
    for (const auto& e : store.entries()) {
        rates.push_back(resolve_lr(e.name, groups));
    }

    const std::uint64_t t = store.step_count + 1;
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T correction1 = static_cast<T>(1.0 - std::pow(config.beta1, static_cast<double>(t)));
    const T correction2 = static_cast<T>(1.0 - std::pow(config.beta2, static_cast<double>(t)));
    const T eps = static_cast<T>(config.eps);

    std::size_t i = 0;
    for (auto& e : store.entries()) {
        const double lr_value = rates[i++];
        if (lr_value != 0.0) {
            const T lr = static_cast<T>(lr_value);
            for (std::size_t k = 0; k < e.value.size(); ++k) {
                const T g = e.grad[k];
                e.adam_m[k] = b1 * e.adam_m[k] + (T{1} - b1) * g;
                e.adam_v[k] = b2 * e.adam_v[k] + (T{1} - b2) * g * g;
                const T m_hat = e.adam_m[k] / correction1;
                const T v_hat = e.adam_v[k] / correction2;
                e.value[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
            }
        }
        e.grad.fill(T{0});
    }
    store.step_count = t;
}

template void adam_step<float>(ParameterStore<float>&, std::span<const LrGroup>, const AdamConfig&);
template void adam_step<double>(ParameterStore<double>&, std::span<const LrGroup>, const AdamConfig&);

}  // namespace mlmforge
