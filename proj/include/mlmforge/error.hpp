#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mlmforge {

enum class ErrorCategory {
    config,
    data,
    checkpoint,
    numeric,
    shape,
};

constexpr std::string_view category_prefix(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::config: return "CONFIG";
        case ErrorCategory::data: return "DATA";
        case ErrorCategory::checkpoint: return "CKPT";
        case ErrorCategory::numeric: return "NUMERIC";
        case ErrorCategory::shape: return "SHAPE";
    }
    return "ERROR";
}

// Every failure raised by the library carries a category so the CLI can
// report it as a single "PREFIX/message" line.
class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

    std::string formatted() const {
        return std::string(category_prefix(category_)) + "/" + what();
    }

private:
    ErrorCategory category_;
};

}  // namespace mlmforge
