#include "mlmforge/corpus.hpp"

#include <fstream>

#include "mlmforge/error.hpp"

namespace mlmforge {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCategory::data, "cannot read " + path.string());
    }
    return in;
}

}  // namespace

IngestReport ingest_jsonl(const std::filesystem::path& path, const std::function<void(RawPost&&)>& sink) {
    std::ifstream in = open_input(path);
    IngestReport report;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            report.warnings.push_back("line " + std::to_string(line_no) + ": not a JSON object");
            continue;
        }
        const auto body = obj.find("body");
        if (body == obj.end() || !body->is_string()) {
            report.warnings.push_back("line " + std::to_string(line_no) + ": missing string field \"body\"");
            continue;
        }
        if (trim(body->get_ref<const std::string&>()).empty()) {
            report.warnings.push_back("line " + std::to_string(line_no) + ": empty body");
            continue;
        }
        RawPost post;
        post.body = body->get<std::string>();
        if (const auto id = obj.find("id"); id != obj.end() && id->is_string()) {
            post.id = id->get<std::string>();
        }
        if (const auto sub = obj.find("subforum"); sub != obj.end() && sub->is_string()) {
            post.subforum = sub->get<std::string>();
        }
        ++report.posts;
        sink(std::move(post));
    }
    return report;
}

nlohmann::json to_json(const CorpusStats& stats) {
    return {{"n_sentences", stats.n_sentences},
            {"n_tokens_ws", stats.n_tokens_ws},
            {"n_duplicates_removed", stats.n_duplicates_removed}};
}

SentenceCorpus::SentenceCorpus(std::vector<std::string> sentences, std::size_t duplicates_removed)
    : sentences_(std::move(sentences)) {
    for (const auto& s : sentences_) {
        if (trim(s).empty()) {
            throw Error(ErrorCategory::data, "sentence corpus: empty sentence");
        }
        stats_.n_tokens_ws += count_whitespace_tokens(s);
    }
    stats_.n_sentences = sentences_.size();
    stats_.n_duplicates_removed = duplicates_removed;
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    auto emit = [&out](std::string_view piece) {
        piece = trim(piece);
        if (!piece.empty()) {
            out.emplace_back(piece);
        }
    };
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n' || c == '\r') {
            emit(text.substr(start, i - start));
            start = i + 1;
        } else if ((c == '.' || c == '!' || c == '?') && i + 1 < text.size() && is_space(text[i + 1])) {
            emit(text.substr(start, i + 1 - start));
            start = i + 1;
        }
    }
    if (start < text.size()) {
        emit(text.substr(start));
    }
    return out;
}

void SentenceCorpusBuilder::add(const RawPost& post) {
    for (auto& s : split_sentences(post.body)) {
        if (dedup_) {
            if (!seen_.insert(s).second) {
                ++duplicates_;
                continue;
            }
        }
        sentences_.push_back(std::move(s));
    }
}

SentenceCorpus SentenceCorpusBuilder::finish() && {
    seen_.clear();
    return SentenceCorpus(std::move(sentences_), duplicates_);
}

SentenceCorpus segment(std::span<const RawPost> posts, bool dedup) {
    SentenceCorpusBuilder builder(dedup);
    for (const auto& p : posts) {
        builder.add(p);
    }
    return std::move(builder).finish();
}

std::size_t count_whitespace_tokens(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return n;
}

CorpusStats corpus_stats(const SentenceCorpus& corpus) {
    CorpusStats stats;
    stats.n_sentences = corpus.sentences().size();
    for (const auto& s : corpus.sentences()) {
        stats.n_tokens_ws += count_whitespace_tokens(s);
    }
    stats.n_duplicates_removed = corpus.stats().n_duplicates_removed;
    return stats;
}

void write_corpus(const SentenceCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCategory::data, "cannot write " + path.string());
    }
    for (const auto& s : corpus.sentences()) {
        out << s << '\n';
    }
}

SentenceCorpus read_corpus(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    std::vector<std::string> sentences;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (!t.empty()) {
            sentences.emplace_back(t);
        }
    }
    return SentenceCorpus(std::move(sentences), 0);
}

}  // namespace mlmforge
