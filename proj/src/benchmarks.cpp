#include "mlmforge/benchmarks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

#include "mlmforge/error.hpp"
#include "mlmforge/rng.hpp"

namespace mlmforge {
namespace {

[[noreturn]] void data_error(const std::string& msg) { throw Error(ErrorCategory::data, msg); }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        data_error("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) {
        data_error("cannot write " + path.string());
    }
}

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

Example checked_example(std::string text, std::string label, std::size_t line) {
    if (is_blank(text)) {
        data_error("line " + std::to_string(line) + ": empty text");
    }
    if (is_blank(label)) {
        data_error("line " + std::to_string(line) + ": empty label");
    }
    return {std::move(text), std::move(label)};
}

// Thematic keywords of the synthetic fixtures, one list per class name.
const std::map<std::string, std::vector<std::string>>& fixture_keywords() {
    static const std::map<std::string, std::vector<std::string>> words = {
        {"anxiety", {"panic", "worry", "nervous", "racing", "dread", "restless"}},
        {"bipolar", {"manic", "mood", "swings", "euphoric", "crash", "lithium"}},
        {"depression", {"hopeless", "empty", "numb", "sad", "worthless", "tired"}},
        {"offmychest", {"vent", "confess", "finally", "share", "secret", "honest"}},
        {"suicidewatch", {"end", "goodbye", "pain", "unbearable", "gone", "last"}},
        {"control", {"game", "recipe", "weekend", "movie", "garden", "travel"}},
        {"stress", {"deadline", "pressure", "overwhelmed", "tense", "burden", "rushed"}},
        {"no_stress", {"calm", "relaxed", "fine", "easy", "peaceful", "okay"}},
        {"no_risk", {"hobby", "music", "friends", "sunny", "cooking", "weekend"}},
        {"low_risk", {"lonely", "down", "struggle", "rough", "lost", "tired"}},
        {"high_risk", {"plan", "goodbye", "end", "pills", "final", "gone"}},
        {"suicidal", {"die", "goodbye", "end", "hopeless", "pain", "gone"}},
        {"normal", {"lunch", "football", "coffee", "weather", "funny", "party"}},
        {"work", {"boss", "office", "shift", "meeting", "job", "overtime"}},
        {"health", {"sick", "pain", "doctor", "fatigue", "headache", "injury"}},
        {"financial", {"rent", "bills", "debt", "money", "loan", "paycheck"}},
        {"emotional", {"crying", "angry", "upset", "hurt", "lonely", "moody"}},
        {"school", {"exam", "homework", "class", "grades", "teacher", "essay"}},
        {"decision", {"choose", "decide", "option", "whether", "choice", "unsure"}},
        {"family", {"parents", "mother", "father", "sister", "brother", "home"}},
        {"social", {"friend", "partner", "relationship", "breakup", "date", "party"}},
        {"other", {"traffic", "noise", "weather", "neighbors", "errands", "car"}},
    };
    return words;
}

const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words = {
        "i", "feel", "today", "the", "and", "my", "was", "it", "so", "really", "just", "about",
        "with", "time", "day", "people", "think", "know", "this", "that", "always", "lately",
    };
    return words;
}

}  // namespace

const std::vector<DatasetDescriptor>& registry() {
    static const std::vector<DatasetDescriptor> entries = {
        {"SWMH", "Assorted", "Reddit", 34823, 8706, 10883,
         {"anxiety", "bipolar", "depression", "offmychest", "suicidewatch"}},
        {"eRisk18 T1", "Depression", "Reddit", 1533, 658, 619, {"control", "depression"}},
        {"Depression_Reddit", "Depression", "Reddit", 1004, 431, 406, {"control", "depression"}},
        {"CLPsych15", "Depression", "Reddit", 457, 197, 300, {"control", "depression"}},
        {"Dreaddit", "Stress", "Reddit", 2270, 568, 715, {"no_stress", "stress"}},
        {"UMD", "Suicide", "Reddit", 993, 249, 490, {"high_risk", "low_risk", "no_risk"}},
        {"T-SID", "Suicide", "Twitter", 3072, 768, 960, {"normal", "suicidal"}},
        {"SAD", "Stress", "SMS-like", 5548, 617, 685,
         {"decision", "emotional", "family", "financial", "health", "other", "school", "social", "work"}},
    };
    return entries;
}

const DatasetDescriptor* find_descriptor(std::string_view name) {
    for (const auto& d : registry()) {
        if (d.name == name) {
            return &d;
        }
    }
    return nullptr;
}

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view text) {
    if (text == "train") {
        return Split::train;
    }
    if (text == "validation") {
        return Split::validation;
    }
    if (text == "test") {
        return Split::test;
    }
    throw Error(ErrorCategory::config, "unknown split '" + std::string(text) + "'");
}

const std::vector<std::size_t>& SplitIndices::get(Split split) const {
    switch (split) {
        case Split::train: return train;
        case Split::validation: return validation;
        case Split::test: return test;
    }
    return train;
}

std::vector<std::size_t>& SplitIndices::get(Split split) {
    return const_cast<std::vector<std::size_t>&>(std::as_const(*this).get(split));
}

std::vector<std::string> LabeledDataset::label_names() const {
    std::vector<std::string> names(label_map.size());
    for (const auto& [label, id] : label_map) {
        names.at(static_cast<std::size_t>(id)) = label;
    }
    return names;
}

std::int32_t LabeledDataset::class_of(const std::string& label) const {
    const auto it = label_map.find(label);
    if (it == label_map.end()) {
        data_error("dataset " + name + ": label '" + label + "' is not in the label map");
    }
    return it->second;
}

std::vector<Example> LabeledDataset::split_examples(Split split) const {
    std::vector<Example> out;
    for (std::size_t i : splits.get(split)) {
        out.push_back(examples.at(i));
    }
    return out;
}

void LabeledDataset::validate() const {
    if (label_map.size() < 2) {
        data_error("dataset " + name + ": needs at least 2 classes, has " + std::to_string(label_map.size()));
    }
    std::set<std::int32_t> ids;
    for (const auto& [label, id] : label_map) {
        ids.insert(id);
    }
    if (*ids.begin() != 0 || *ids.rbegin() != static_cast<std::int32_t>(label_map.size()) - 1 ||
        ids.size() != label_map.size()) {
        data_error("dataset " + name + ": class indices are not contiguous from 0");
    }
    std::vector<int> seen(examples.size(), 0);
    for (Split s : {Split::train, Split::validation, Split::test}) {
        for (std::size_t i : splits.get(s)) {
            if (i >= examples.size()) {
                data_error("dataset " + name + ": split index " + std::to_string(i) + " out of range");
            }
            ++seen[i];
        }
    }
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (seen[i] != 1) {
            data_error("dataset " + name + ": example " + std::to_string(i) + " appears in " +
                       std::to_string(seen[i]) + " splits");
        }
        class_of(examples[i].label);
    }
}

DataFormat format_from_path(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".jsonl") {
        return DataFormat::jsonl;
    }
    if (ext == ".csv") {
        return DataFormat::csv;
    }
    throw Error(ErrorCategory::config, "cannot infer dataset format of " + path.string() + " (want .jsonl or .csv)");
}

std::vector<Example> parse_jsonl_examples(std::string_view content) {
    std::vector<Example> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        std::size_t end = content.find('\n', pos);
        if (end == std::string_view::npos) {
            end = content.size();
        }
        const std::string_view line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (is_blank(line)) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            data_error("line " + std::to_string(line_no) + ": unparsable JSON");
        }
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
            data_error("line " + std::to_string(line_no) + ": missing string field 'text'");
        }
        if (!j.contains("label") || !j["label"].is_string()) {
            data_error("line " + std::to_string(line_no) + ": missing string field 'label'");
        }
        out.push_back(checked_example(j["text"].get<std::string>(), j["label"].get<std::string>(), line_no));
    }
    return out;
}

std::vector<Example> parse_csv_examples(std::string_view content) {
    // RFC 4180: fields separated by commas, optionally quoted, "" escapes a quote,
    // quoted fields may span lines.
    std::vector<std::pair<std::size_t, std::vector<std::string>>> records;
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;
    std::size_t record_line = 1;
    auto end_field = [&] {
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(fields.size() == 1 && fields[0].empty())) {
            records.emplace_back(record_line, std::move(fields));
        }
        fields.clear();
    };
    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') {
                    ++line;
                }
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') {
                ++i;
            }
            end_record();
            ++line;
            record_line = line;
        } else {
            field += c;
            field_started = true;
        }
    }
    if (quoted) {
        data_error("line " + std::to_string(record_line) + ": unterminated quoted field");
    }
    if (field_started || !fields.empty()) {
        end_record();
    }
    if (records.empty()) {
        return {};
    }
    const auto& header = records.front().second;
    const auto text_col = std::find(header.begin(), header.end(), "text") - header.begin();
    const auto label_col = std::find(header.begin(), header.end(), "label") - header.begin();
    if (static_cast<std::size_t>(text_col) == header.size() || static_cast<std::size_t>(label_col) == header.size()) {
        data_error("line 1: CSV header must name 'text' and 'label' columns");
    }
    std::vector<Example> out;
    for (std::size_t r = 1; r < records.size(); ++r) {
        auto& [rline, row] = records[r];
        if (row.size() != header.size()) {
            data_error("line " + std::to_string(rline) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(row.size()));
        }
        out.push_back(checked_example(std::move(row[static_cast<std::size_t>(text_col)]),
                                      std::move(row[static_cast<std::size_t>(label_col)]), rline));
    }
    return out;
}

std::vector<Example> read_examples(const std::filesystem::path& path, DataFormat format) {
    const std::string content = read_file(path);
    try {
        return format == DataFormat::jsonl ? parse_jsonl_examples(content) : parse_csv_examples(content);
    } catch (const Error& e) {
        throw Error(e.category(), path.filename().string() + " " + e.what());
    }
}

std::map<std::string, std::int32_t> build_label_map(const std::vector<Example>& examples) {
    std::set<std::string> labels;
    for (const auto& e : examples) {
        labels.insert(e.label);
    }
    std::map<std::string, std::int32_t> map;
    std::int32_t next = 0;
    for (const auto& l : labels) {
        map.emplace(l, next++);
    }
    return map;
}

LabeledDataset load_dataset(const std::filesystem::path& path, DataFormat format) {
    LabeledDataset d;
    d.name = path.stem().string();
    d.examples = read_examples(path, format);
    d.label_map = build_label_map(d.examples);
    d.splits.train.resize(d.examples.size());
    std::iota(d.splits.train.begin(), d.splits.train.end(), std::size_t{0});
    return d;
}

std::string to_canonical_jsonl(const std::vector<Example>& examples) {
    std::string out;
    for (const auto& e : examples) {
        out += nlohmann::json{{"text", e.text}, {"label", e.label}}.dump();
        out += '\n';
    }
    return out;
}

LabeledDataset holdout_split(LabeledDataset dataset, const SplitSpec& spec) {
    if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0)) {
        throw Error(ErrorCategory::config, "holdout: validation fraction must lie in (0, 1)");
    }
    auto& train = dataset.splits.train;
    std::vector<std::size_t> validation;
    auto take = [&](std::vector<std::size_t> pool, std::uint64_t stream, const std::string& cls) {
        const auto n = static_cast<std::size_t>(std::llround(spec.validation_fraction * static_cast<double>(pool.size())));
        const std::size_t k = std::max<std::size_t>(n, 1);
        if (k >= pool.size()) {
            data_error("holdout: class '" + cls + "' has " + std::to_string(pool.size()) +
                       " training examples, too few for both splits");
        }
        Rng rng(derive_seed({spec.seed, stream}));
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
        }
        validation.insert(validation.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    };
    if (spec.stratified) {
        for (const auto& [label, id] : dataset.label_map) {
            std::vector<std::size_t> pool;
            for (std::size_t i : train) {
                if (dataset.examples[i].label == label) {
                    pool.push_back(i);
                }
            }
            take(std::move(pool), static_cast<std::uint64_t>(id), label);
        }
    } else {
        take(train, 0, "(all)");
    }
    std::sort(validation.begin(), validation.end());
    const std::set<std::size_t> moved(validation.begin(), validation.end());
    std::erase_if(train, [&](std::size_t i) { return moved.contains(i); });
    auto& dest = dataset.splits.validation;
    dest.insert(dest.end(), validation.begin(), validation.end());
    std::sort(dest.begin(), dest.end());
    return dataset;
}

nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [split, path] : m.files) {
        files[split] = path.generic_string();
    }
    return {{"name", m.name},
            {"files", files},
            {"labels", m.labels},
            {"expected_sizes", m.expected_sizes},
            {"validation_fraction", m.validation_fraction},
            {"seed", m.seed}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    try {
        DatasetManifest m;
        m.name = j.at("name").get<std::string>();
        for (const auto& [split, path] : j.at("files").items()) {
            parse_split(split);
            m.files[split] = path.get<std::string>();
        }
        if (!m.files.contains("train")) {
            throw Error(ErrorCategory::config, "dataset manifest " + m.name + ": no train file");
        }
        m.labels = j.value("labels", std::vector<std::string>{});
        m.expected_sizes = j.value("expected_sizes", std::map<std::string, std::size_t>{});
        m.validation_fraction = j.value("validation_fraction", 0.2);
        m.seed = j.value("seed", std::uint64_t{0});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::config, std::string("dataset manifest: ") + e.what());
    }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    const std::string content = read_file(path);
    try {
        return manifest_from_json(nlohmann::json::parse(content));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCategory::config, "dataset manifest " + path.string() + ": " + e.what());
    }
}

LoadedDataset load_manifest(const std::filesystem::path& manifest_path) {
    const DatasetManifest m = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    LoadedDataset out;
    auto& d = out.dataset;
    d.name = m.name;
    for (Split s : {Split::train, Split::validation, Split::test}) {
        const auto it = m.files.find(to_string(s));
        if (it == m.files.end()) {
            continue;
        }
        const auto path = base / it->second;
        for (auto& e : read_examples(path, format_from_path(path))) {
            d.splits.get(s).push_back(d.examples.size());
            d.examples.push_back(std::move(e));
        }
    }
    d.label_map = build_label_map(d.examples);
    if (!m.labels.empty()) {
        std::vector<std::string> declared = m.labels;
        std::sort(declared.begin(), declared.end());
        for (const auto& [label, id] : d.label_map) {
            if (!std::binary_search(declared.begin(), declared.end(), label)) {
                data_error("dataset " + m.name + ": label '" + label + "' is not declared in the manifest");
            }
        }
        d.label_map.clear();
        for (std::size_t i = 0; i < declared.size(); ++i) {
            d.label_map.emplace(declared[i], static_cast<std::int32_t>(i));
        }
    }
    if (!m.files.contains("validation")) {
        d = holdout_split(std::move(d), {m.validation_fraction, m.seed, true});
    }
    d.validate();
    for (Split s : {Split::train, Split::validation, Split::test}) {
        const auto it = m.expected_sizes.find(to_string(s));
        if (it != m.expected_sizes.end() && it->second != d.splits.get(s).size()) {
            out.warnings.push_back(m.name + " " + to_string(s) + ": " + std::to_string(d.splits.get(s).size()) +
                                   " examples, manifest declares " + std::to_string(it->second));
        }
    }
    return out;
}

FixtureFiles make_fixture(const DatasetDescriptor& descriptor, double scale, std::size_t min_per_class,
                          std::uint64_t seed) {
    const std::size_t n_classes = descriptor.labels.size();
    auto scaled = [&](std::size_t n) {
        return std::max(n_classes * min_per_class, static_cast<std::size_t>(std::llround(scale * static_cast<double>(n))));
    };
    Rng rng(derive_seed({seed, fnv1a64(descriptor.name)}));
    const auto& fillers = filler_words();
    auto make = [&](std::size_t count) {
        std::vector<Example> out;
        for (std::size_t i = 0; i < count; ++i) {
            const std::string& label = descriptor.labels[i % n_classes];
            const auto& keywords = fixture_keywords().at(label);
            const std::size_t length = 6 + rng.below(8);
            std::string text;
            for (std::size_t w = 0; w < length; ++w) {
                const bool keyword = rng.uniform() < 0.3;
                const std::string& word = keyword ? keywords[rng.below(keywords.size())] : fillers[rng.below(fillers.size())];
                text += (w == 0 ? "" : " ") + word;
            }
            out.push_back({text + ".", label});
        }
        return out;
    };
    FixtureFiles f;
    f.train = make(scaled(descriptor.train + descriptor.validation));
    f.test = make(scaled(descriptor.test));
    f.manifest.name = descriptor.name;
    f.manifest.files = {{"train", "train.jsonl"}, {"test", "test.jsonl"}};
    f.manifest.labels = descriptor.labels;
    f.manifest.expected_sizes = {
        {"train", descriptor.train}, {"validation", descriptor.validation}, {"test", descriptor.test}};
    f.manifest.validation_fraction = static_cast<double>(descriptor.validation) /
                                     static_cast<double>(descriptor.train + descriptor.validation);
    f.manifest.seed = seed;
    return f;
}

void write_fixtures(const std::filesystem::path& dir, double scale, std::uint64_t seed) {
    for (const auto& d : registry()) {
        const FixtureFiles f = make_fixture(d, scale, 5, seed);
        std::string folder = d.name;
        std::replace(folder.begin(), folder.end(), ' ', '_');
        const auto out = dir / folder;
        std::filesystem::create_directories(out);
        write_file(out / "train.jsonl", to_canonical_jsonl(f.train));
        write_file(out / "test.jsonl", to_canonical_jsonl(f.test));
        write_file(out / "manifest.json", to_json(f.manifest).dump(2) + "\n");
    }
}

}  // namespace mlmforge
