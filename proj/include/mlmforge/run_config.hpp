#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mlmforge/benchmarks.hpp"
#include "mlmforge/encoder.hpp"
#include "mlmforge/tokenizer.hpp"
#include "mlmforge/training.hpp"

namespace mlmforge {

// Flat dotted-key configuration ("train.lr_encoder"). Every key has a typed
// default; unknown keys and ill-typed values throw ErrorCategory::config.
class RunConfig {
public:
    RunConfig();

    static const nlohmann::json& defaults();

    void merge_json(const nlohmann::json& flat);
    void merge_file(const std::filesystem::path& path);
    // "key=value"; the value is parsed according to the key's type.
    void set_override(std::string_view assignment);

    bool is_explicit(const std::string& key) const { return explicit_.contains(key); }
    const nlohmann::json& values() const noexcept { return values_; }

    std::uint64_t get_u64(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::string get_string(const std::string& key) const;

    ModelConfig model_config(std::size_t vocab_size) const;
    TrainConfig train_config() const;
    VocabTrainOptions vocab_options() const;
    SplitSpec split_spec() const;

    // Pretty-printed, sorted keys; feeding it back reproduces the run.
    std::string echo() const;

private:
    void assign(const std::string& key, const nlohmann::json& value);

    nlohmann::json values_;
    std::set<std::string> explicit_;
};

}  // namespace mlmforge
