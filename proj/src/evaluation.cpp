#include "mlmforge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace mlmforge {
namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

std::string format_percent(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    return buf;
}

// Comparison key at the printed precision.
long long hundredths(double value) { return std::llround(value * 100.0); }

nlohmann::json metrics_json(const Metrics& m) {
    return {{"precision", to_percent(m.precision)}, {"recall", to_percent(m.recall)}, {"f1", to_percent(m.f1)}};
}

}  // namespace

std::string to_string(Aggregation aggregation) {
    switch (aggregation) {
        case Aggregation::macro: return "macro";
        case Aggregation::weighted: return "weighted";
        case Aggregation::unreported: return "unreported";
    }
    return "unreported";
}

Aggregation parse_aggregation(std::string_view text) {
    if (text == "macro") {
        return Aggregation::macro;
    }
    if (text == "weighted") {
        return Aggregation::weighted;
    }
    if (text == "unreported") {
        return Aggregation::unreported;
    }
    throw Error(ErrorCategory::config, "unknown aggregation '" + std::string(text) + "'");
}

ConfusionTable::ConfusionTable(std::size_t n_classes) : n_classes_(n_classes), counts_(n_classes * n_classes, 0) {
    if (n_classes == 0) {
        throw Error(ErrorCategory::config, "confusion table needs at least one class");
    }
}

ConfusionTable ConfusionTable::from_predictions(std::size_t n_classes, std::span<const std::int32_t> truth,
                                                std::span<const std::int32_t> predicted) {
    if (truth.size() != predicted.size()) {
        throw Error(ErrorCategory::shape, "confusion table: " + std::to_string(truth.size()) + " labels vs " +
                                              std::to_string(predicted.size()) + " predictions");
    }
    ConfusionTable table(n_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        table.add(truth[i], predicted[i]);
    }
    return table;
}

void ConfusionTable::add(std::int32_t truth, std::int32_t predicted, std::uint64_t count) {
    const auto n = static_cast<std::int32_t>(n_classes_);
    if (truth < 0 || truth >= n || predicted < 0 || predicted >= n) {
        throw Error(ErrorCategory::data, "confusion table: class pair (" + std::to_string(truth) + ", " +
                                             std::to_string(predicted) + ") outside " + std::to_string(n) +
                                             " classes");
    }
    counts_[static_cast<std::size_t>(truth) * n_classes_ + static_cast<std::size_t>(predicted)] += count;
}

std::uint64_t ConfusionTable::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) {
        t += c;
    }
    return t;
}

Metrics compute_metrics(const ConfusionTable& table, Aggregation aggregation) {
    const std::uint64_t total = table.total();
    if (total == 0) {
        throw Error(ErrorCategory::data, "metrics: confusion table is empty");
    }
    const std::size_t n = table.n_classes();
    Metrics m;
    m.aggregation = aggregation;
    m.per_class.resize(n);
    std::uint64_t correct = 0;
    for (std::size_t c = 0; c < n; ++c) {
        std::uint64_t support = 0;
        std::uint64_t predicted = 0;
        for (std::size_t k = 0; k < n; ++k) {
            support += table.at(c, k);
            predicted += table.at(k, c);
        }
        const std::uint64_t tp = table.at(c, c);
        correct += tp;
        auto& pc = m.per_class[c];
        pc.support = support;
        pc.precision = ratio(tp, predicted);
        pc.recall = ratio(tp, support);
        pc.f1 = harmonic(pc.precision, pc.recall);
    }
    m.accuracy = ratio(correct, total);
    for (const auto& pc : m.per_class) {
        const double w = aggregation == Aggregation::macro ? 1.0 / static_cast<double>(n) : ratio(pc.support, total);
        m.precision += w * pc.precision;
        m.recall += w * pc.recall;
        m.f1 += w * pc.f1;
    }
    return m;
}

template <typename T>
ConfusionTable evaluate_model(const ParameterStore<T>& params, const ModelConfig& config,
                              std::span<const TokenSequence> sequences, std::span<const std::int32_t> labels,
                              std::size_t batch_size) {
    if (sequences.empty()) {
        throw Error(ErrorCategory::data, "evaluate: split is empty");
    }
    if (sequences.size() != labels.size()) {
        throw Error(ErrorCategory::shape, "evaluate: sequences and labels differ in length");
    }
    const std::size_t n_classes = classifier_classes(params);
    if (n_classes == 0) {
        throw Error(ErrorCategory::config, "evaluate: model has no classifier head");
    }
    ConfusionTable table(n_classes);
    batch_size = std::max<std::size_t>(batch_size, 1);
    for (std::size_t begin = 0; begin < sequences.size(); begin += batch_size) {
        const std::size_t end = std::min(sequences.size(), begin + batch_size);
        const EncodedBatch batch = pad_batch(sequences.subspan(begin, end - begin));
        const auto predicted = predict_classes(params, config, batch);
        for (std::size_t i = begin; i < end; ++i) {
            table.add(labels[i], predicted[i - begin]);
        }
    }
    return table;
}

template ConfusionTable evaluate_model<float>(const ParameterStore<float>&, const ModelConfig&,
                                              std::span<const TokenSequence>, std::span<const std::int32_t>,
                                              std::size_t);
template ConfusionTable evaluate_model<double>(const ParameterStore<double>&, const ModelConfig&,
                                               std::span<const TokenSequence>, std::span<const std::int32_t>,
                                               std::size_t);

double to_percent(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

std::optional<Score> EvalReport::find(const std::string& model, const std::string& dataset) const {
    const auto m = scores.find(model);
    if (m == scores.end()) {
        return std::nullopt;
    }
    const auto d = m->second.find(dataset);
    if (d == m->second.end()) {
        return std::nullopt;
    }
    return d->second;
}

void EvalReport::set(const std::string& model, const std::string& dataset, Score score) {
    for (double v : {score.recall, score.f1}) {
        if (!(v >= 0.0 && v <= 100.0)) {
            throw Error(ErrorCategory::data, "report: score for " + model + " on " + dataset + " outside [0, 100]");
        }
    }
    if (std::find(models.begin(), models.end(), model) == models.end()) {
        models.push_back(model);
    }
    scores[model][dataset] = score;
}

std::vector<BoldCell> best_cells(const EvalReport& report) {
    std::vector<BoldCell> cells;
    for (const auto& group : report.groups) {
        for (const auto& dataset : group.datasets) {
            for (const char* column : {"Rec.", "F1"}) {
                const bool is_recall = std::string_view(column) == "Rec.";
                std::optional<long long> best;
                for (const auto& model : report.models) {
                    if (auto s = report.find(model, dataset)) {
                        const long long v = hundredths(is_recall ? s->recall : s->f1);
                        best = best ? std::max(*best, v) : v;
                    }
                }
                for (const auto& model : report.models) {
                    if (auto s = report.find(model, dataset)) {
                        if (hundredths(is_recall ? s->recall : s->f1) == best) {
                            cells.push_back({dataset, column, model});
                        }
                    }
                }
            }
        }
    }
    std::sort(cells.begin(), cells.end());
    return cells;
}

std::string render_markdown(const EvalReport& report) {
    if (report.models.empty() || report.groups.empty()) {
        throw Error(ErrorCategory::data, "report: needs at least one model and one dataset");
    }
    const auto bold = best_cells(report);
    const std::set<BoldCell> bold_set(bold.begin(), bold.end());
    std::ostringstream out;
    out << "Aggregation: " << to_string(report.aggregation) << "\n";
    for (const auto& group : report.groups) {
        out << "\n";
        if (!group.title.empty()) {
            out << "### " << group.title << "\n\n";
        }
        out << "| Model |";
        for (const auto& d : group.datasets) {
            out << " " << d << " Rec. | " << d << " F1 |";
        }
        out << "\n|---|";
        for (std::size_t i = 0; i < group.datasets.size(); ++i) {
            out << "---:|---:|";
        }
        out << "\n";
        for (const auto& model : report.models) {
            out << "| " << model << " |";
            for (const auto& d : group.datasets) {
                const auto s = report.find(model, d);
                for (const char* column : {"Rec.", "F1"}) {
                    if (!s) {
                        out << " - |";
                        continue;
                    }
                    const double v = std::string_view(column) == "Rec." ? s->recall : s->f1;
                    const std::string text = format_percent(v);
                    if (bold_set.contains({d, column, model})) {
                        out << " **" << text << "** |";
                    } else {
                        out << " " << text << " |";
                    }
                }
            }
            out << "\n";
        }
    }
    return out.str();
}

nlohmann::json render_json(const EvalReport& report) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : report.groups) {
        groups.push_back({{"title", g.title}, {"datasets", g.datasets}});
    }
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [model, by_dataset] : report.scores) {
        for (const auto& [dataset, s] : by_dataset) {
            scores[model][dataset] = {{"recall", s.recall}, {"f1", s.f1}};
        }
    }
    return {{"aggregation", to_string(report.aggregation)},
            {"models", report.models},
            {"groups", groups},
            {"scores", scores}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    try {
        EvalReport report;
        report.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
        for (const auto& g : j.at("groups")) {
            report.groups.push_back({g.value("title", ""), g.at("datasets").get<std::vector<std::string>>()});
        }
        for (const auto& model : j.at("models")) {
            report.models.push_back(model.get<std::string>());
        }
        for (const auto& [model, by_dataset] : j.at("scores").items()) {
            if (std::find(report.models.begin(), report.models.end(), model) == report.models.end()) {
                throw Error(ErrorCategory::data, "report: scores for undeclared model " + model);
            }
            for (const auto& [dataset, s] : by_dataset.items()) {
                report.set(model, dataset, {s.at("recall").get<double>(), s.at("f1").get<double>()});
            }
        }
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::data, std::string("report: ") + e.what());
    }
}

nlohmann::json to_json(const ResultsRecord& r) {
    const Metrics macro = compute_metrics(r.confusion, Aggregation::macro);
    const Metrics weighted = compute_metrics(r.confusion, Aggregation::weighted);
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < r.metrics.per_class.size(); ++c) {
        const auto& pc = r.metrics.per_class[c];
        per_class.push_back({{"label", c < r.labels.size() ? r.labels[c] : std::to_string(c)},
                             {"precision", to_percent(pc.precision)},
                             {"recall", to_percent(pc.recall)},
                             {"f1", to_percent(pc.f1)},
                             {"support", pc.support}});
    }
    nlohmann::json confusion = nlohmann::json::array();
    for (std::size_t t = 0; t < r.confusion.n_classes(); ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t p = 0; p < r.confusion.n_classes(); ++p) {
            row.push_back(r.confusion.at(t, p));
        }
        confusion.push_back(row);
    }
    return {{"model", r.model},
            {"dataset", r.dataset},
            {"split", r.split},
            {"aggregation", to_string(r.metrics.aggregation)},
            {"recall", to_percent(r.metrics.recall)},
            {"f1", to_percent(r.metrics.f1)},
            {"accuracy", to_percent(r.metrics.accuracy)},
            {"macro", metrics_json(macro)},
            {"weighted", metrics_json(weighted)},
            {"labels", r.labels},
            {"per_class", per_class},
            {"confusion", confusion}};
}

ResultsRecord results_from_json(const nlohmann::json& j) {
    try {
        ResultsRecord r;
        r.model = j.at("model").get<std::string>();
        r.dataset = j.at("dataset").get<std::string>();
        r.split = j.at("split").get<std::string>();
        r.labels = j.at("labels").get<std::vector<std::string>>();
        const auto& rows = j.at("confusion");
        ConfusionTable table(rows.size());
        for (std::size_t t = 0; t < rows.size(); ++t) {
            if (rows[t].size() != rows.size()) {
                throw Error(ErrorCategory::data, "results: confusion matrix is not square");
            }
            for (std::size_t p = 0; p < rows.size(); ++p) {
                table.add(static_cast<std::int32_t>(t), static_cast<std::int32_t>(p), rows[t][p].get<std::uint64_t>());
            }
        }
        r.confusion = table;
        const Aggregation aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
        r.metrics = compute_metrics(table, aggregation);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::data, std::string("results: ") + e.what());
    }
}

EvalReport merge_results(std::span<const ResultsRecord> records) {
    if (records.empty()) {
        throw Error(ErrorCategory::data, "report: no results given");
    }
    EvalReport report;
    report.aggregation = records.front().metrics.aggregation;
    report.groups.push_back({"", {}});
    auto& datasets = report.groups.front().datasets;
    for (const auto& r : records) {
        if (r.metrics.aggregation != report.aggregation) {
            throw Error(ErrorCategory::config, "report: results mix " + to_string(report.aggregation) + " and " +
                                                   to_string(r.metrics.aggregation) + " aggregation");
        }
        if (report.find(r.model, r.dataset)) {
            throw Error(ErrorCategory::data, "report: duplicate results for " + r.model + " on " + r.dataset);
        }
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
            datasets.push_back(r.dataset);
        }
        report.set(r.model, r.dataset, {to_percent(r.metrics.recall), to_percent(r.metrics.f1)});
    }
    return report;
}

}  // namespace mlmforge
