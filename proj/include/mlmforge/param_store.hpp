#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>

#include "mlmforge/tensor.hpp"

namespace mlmforge {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;
};

// Named weights plus optimizer state. Entries keep insertion order, which is
// also the checkpoint order. References returned by add/get stay valid.
template <typename T>
class ParameterStore {
public:
    Parameter<T>& add(std::string name, Tensor<T> value) {
        if (index_.contains(name)) {
            throw Error(ErrorCategory::config, "parameter store: duplicate name " + name);
        }
        const Shape shape = value.shape();
        index_.emplace(name, entries_.size());
        entries_.push_back(Parameter<T>{std::move(name), std::move(value), Tensor<T>(shape),
                                        Tensor<T>(shape), Tensor<T>(shape)});
        return entries_.back();
    }

    bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

    Parameter<T>& get(std::string_view name) { return entries_[lookup(name)]; }
    const Parameter<T>& get(std::string_view name) const { return entries_[lookup(name)]; }

    const Tensor<T>& value(std::string_view name) const { return get(name).value; }
    Tensor<T>& grad(std::string_view name) { return get(name).grad; }

    std::deque<Parameter<T>>& entries() { return entries_; }
    const std::deque<Parameter<T>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) {
            n += e.value.size();
        }
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) {
            e.grad.fill(T{0});
        }
    }

    void reset_optimizer() {
        for (auto& e : entries_) {
            e.adam_m.fill(T{0});
            e.adam_v.fill(T{0});
        }
        step_count = 0;
    }

    bool operator==(const ParameterStore& other) const {
        if (step_count != other.step_count || entries_.size() != other.entries_.size()) {
            return false;
        }
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& a = entries_[i];
            const auto& b = other.entries_[i];
            if (a.name != b.name || a.value != b.value || a.adam_m != b.adam_m || a.adam_v != b.adam_v) {
                return false;
            }
        }
        return true;
    }

    std::uint64_t step_count = 0;

private:
    std::size_t lookup(std::string_view name) const {
        const auto it = index_.find(std::string(name));
        if (it == index_.end()) {
            throw Error(ErrorCategory::config, "parameter store: no parameter named " + std::string(name));
        }
        return it->second;
    }

    std::deque<Parameter<T>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Copies values and optimizer state into another precision; grads start at zero.
template <typename To, typename From>
ParameterStore<To> store_cast(const ParameterStore<From>& in) {
    ParameterStore<To> out;
    for (const auto& e : in.entries()) {
        auto& p = out.add(e.name, tensor_cast<To>(e.value));
        p.adam_m = tensor_cast<To>(e.adam_m);
        p.adam_v = tensor_cast<To>(e.adam_v);
    }
    out.step_count = in.step_count;
    return out;
}

}  // namespace mlmforge
