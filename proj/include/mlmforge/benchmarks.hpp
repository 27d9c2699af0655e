#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mlmforge {

struct DatasetDescriptor {
    std::string name;
    std::string category;
    std::string platform;
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;
    std::vector<std::string> labels;  // class names of the synthetic fixture, sorted
};

// The eight classification benchmarks in report order.
const std::vector<DatasetDescriptor>& registry();
const DatasetDescriptor* find_descriptor(std::string_view name);

struct Example {
    std::string text;
    std::string label;

    bool operator==(const Example&) const = default;
};

enum class Split { train, validation, test };
std::string to_string(Split split);
Split parse_split(std::string_view text);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;

    const std::vector<std::size_t>& get(Split split) const;
    std::vector<std::size_t>& get(Split split);
    bool operator==(const SplitIndices&) const = default;
};

struct LabeledDataset {
    std::string name;
    std::vector<Example> examples;
    std::map<std::string, std::int32_t> label_map;  // sorted label -> contiguous class index
    SplitIndices splits;

    std::vector<std::string> label_names() const;
    std::int32_t class_of(const std::string& label) const;  // throws ErrorCategory::data when unknown
    std::vector<Example> split_examples(Split split) const;
    // Disjointness, coverage, label map shape; throws ErrorCategory::data.
    void validate() const;

    bool operator==(const LabeledDataset&) const = default;
};

enum class DataFormat { jsonl, csv };
DataFormat format_from_path(const std::filesystem::path& path);

// Records in file order. JSONL lines are {"text": ..., "label": ...}; CSV has
// a header row naming "text" and "label" columns and RFC 4180 quoting.
std::vector<Example> read_examples(const std::filesystem::path& path, DataFormat format);
std::vector<Example> parse_jsonl_examples(std::string_view content);
std::vector<Example> parse_csv_examples(std::string_view content);

// Every example goes to the train split; the label map is built in sorted order.
LabeledDataset load_dataset(const std::filesystem::path& path, DataFormat format);

std::map<std::string, std::int32_t> build_label_map(const std::vector<Example>& examples);

// One canonical JSON object per line.
std::string to_canonical_jsonl(const std::vector<Example>& examples);

struct SplitSpec {
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;
    bool stratified = true;
};

// Moves round(fraction * class size) train examples of every class (at least
// one) to validation; test is untouched. Deterministic in spec.seed.
LabeledDataset holdout_split(LabeledDataset dataset, const SplitSpec& spec);

struct DatasetManifest {
    std::string name;
    std::map<std::string, std::filesystem::path> files;  // split name -> file, relative to the manifest
    std::vector<std::string> labels;
    std::map<std::string, std::size_t> expected_sizes;
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct LoadedDataset {
    LabeledDataset dataset;
    std::vector<std::string> warnings;  // size deviations from the manifest
};

// Loads the split files; when no validation file is given it is held out
// from train with the manifest's fraction and seed.
LoadedDataset load_manifest(const std::filesystem::path& manifest_path);

// Miniature synthetic stand-in shaped like a registry entry: the same
// classes, sizes scaled by `scale` (at least `min_per_class` per class and split).
struct FixtureFiles {
    std::vector<Example> train;
    std::vector<Example> test;
    DatasetManifest manifest;
};
FixtureFiles make_fixture(const DatasetDescriptor& descriptor, double scale, std::size_t min_per_class,
                          std::uint64_t seed);

// Writes <dir>/<name>/{train,test}.jsonl and manifest.json for every registry
// entry; spaces in names become underscores.
void write_fixtures(const std::filesystem::path& dir, double scale, std::uint64_t seed);

}  // namespace mlmforge
