#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

namespace mlmforge {

// One forum post. Deliberately carries no author or profile fields.
struct RawPost {
    std::string id;
    std::string subforum;
    std::string body;
};

struct IngestReport {
    std::size_t posts = 0;
    std::vector<std::string> warnings;  // one per skipped line, "line N: reason"
};

// Streams posts from a JSONL file in file order. Malformed lines and lines
// without a non-blank "body" are skipped and recorded as warnings. An
// unreadable file throws ErrorCategory::data.
IngestReport ingest_jsonl(const std::filesystem::path& path, const std::function<void(RawPost&&)>& sink);

struct CorpusStats {
    std::size_t n_sentences = 0;
    std::size_t n_tokens_ws = 0;
    std::size_t n_duplicates_removed = 0;

    bool operator==(const CorpusStats&) const = default;
};

nlohmann::json to_json(const CorpusStats& stats);

class SentenceCorpus {
public:
    SentenceCorpus() = default;
    SentenceCorpus(std::vector<std::string> sentences, std::size_t duplicates_removed);

    const std::vector<std::string>& sentences() const noexcept { return sentences_; }
    const CorpusStats& stats() const noexcept { return stats_; }
    std::size_t size() const noexcept { return sentences_.size(); }
    bool empty() const noexcept { return sentences_.empty(); }

private:
    std::vector<std::string> sentences_;
    CorpusStats stats_;
};

// Splits text after '.', '!' or '?' when followed by whitespace, and at line
// breaks. Fragments are trimmed; empty ones are dropped.
std::vector<std::string> split_sentences(std::string_view text);

// Incremental form of segment() for streaming ingestion.
class SentenceCorpusBuilder {
public:
    explicit SentenceCorpusBuilder(bool dedup) : dedup_(dedup) {}

    void add(const RawPost& post);
    SentenceCorpus finish() &&;

private:
    bool dedup_;
    std::size_t duplicates_ = 0;
    std::vector<std::string> sentences_;
    std::unordered_set<std::string> seen_;
};

SentenceCorpus segment(std::span<const RawPost> posts, bool dedup);

CorpusStats corpus_stats(const SentenceCorpus& corpus);

std::size_t count_whitespace_tokens(std::string_view text);

// Plain text, one sentence per line, LF endings.
void write_corpus(const SentenceCorpus& corpus, const std::filesystem::path& path);
SentenceCorpus read_corpus(const std::filesystem::path& path);

}  // namespace mlmforge
