#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlmforge/encoder.hpp"

namespace mlmforge {

// How per-class scores are folded into one number. `unreported` marks
// numbers copied from a source that does not say.
enum class Aggregation { macro, weighted, unreported };

std::string to_string(Aggregation aggregation);
Aggregation parse_aggregation(std::string_view text);

// Rows are true classes, columns predicted classes.
class ConfusionTable {
public:
    explicit ConfusionTable(std::size_t n_classes);

    static ConfusionTable from_predictions(std::size_t n_classes, std::span<const std::int32_t> truth,
                                           std::span<const std::int32_t> predicted);

    void add(std::int32_t truth, std::int32_t predicted, std::uint64_t count = 1);

    std::size_t n_classes() const noexcept { return n_classes_; }
    std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_classes_ + predicted]; }
    std::uint64_t total() const;

    bool operator==(const ConfusionTable&) const = default;

private:
    std::size_t n_classes_;
    std::vector<std::uint64_t> counts_;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

// Scores are fractions in [0, 1]; 0/0 counts as 0.
struct Metrics {
    Aggregation aggregation = Aggregation::weighted;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
};

Metrics compute_metrics(const ConfusionTable& table, Aggregation aggregation = Aggregation::weighted);

// Eval-mode predictions over `sequences` in order, `batch_size` at a time.
template <typename T>
ConfusionTable evaluate_model(const ParameterStore<T>& params, const ModelConfig& config,
                              std::span<const TokenSequence> sequences, std::span<const std::int32_t> labels,
                              std::size_t batch_size = 32);

// One model's numbers on one dataset, as percentages.
struct Score {
    double recall = 0.0;
    double f1 = 0.0;

    bool operator==(const Score&) const = default;
};

struct DatasetGroup {
    std::string title;
    std::vector<std::string> datasets;

    bool operator==(const DatasetGroup&) const = default;
};

struct EvalReport {
    Aggregation aggregation = Aggregation::weighted;
    std::vector<std::string> models;  // row order
    std::vector<DatasetGroup> groups; // one table per group
    std::map<std::string, std::map<std::string, Score>> scores;  // model -> dataset -> score

    std::optional<Score> find(const std::string& model, const std::string& dataset) const;
    void set(const std::string& model, const std::string& dataset, Score score);

    bool operator==(const EvalReport&) const = default;
};

// Rounds a fraction to a percentage with two decimals.
double to_percent(double fraction);

// Percentages rendered with two decimals; the best value of every column is
// bolded, ties included. Missing cells print as "-".
std::string render_markdown(const EvalReport& report);
nlohmann::json render_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

// Bolded cells of a rendered report as (dataset, "Rec."|"F1", model) triples.
struct BoldCell {
    std::string dataset;
    std::string column;
    std::string model;

    auto operator<=>(const BoldCell&) const = default;
};
std::vector<BoldCell> best_cells(const EvalReport& report);

// Per-run results file.
struct ResultsRecord {
    std::string model;
    std::string dataset;
    std::string split;
    Metrics metrics;
    ConfusionTable confusion{2};
    std::vector<std::string> labels;
};

nlohmann::json to_json(const ResultsRecord& record);
ResultsRecord results_from_json(const nlohmann::json& j);

// Merges results files into a report; the group order follows first appearance.
EvalReport merge_results(std::span<const ResultsRecord> records);

}  // namespace mlmforge
