#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mlmforge {

class SentenceCorpus;

namespace special {
inline constexpr std::int32_t pad = 0;
inline constexpr std::int32_t unk = 1;
inline constexpr std::int32_t cls = 2;
inline constexpr std::int32_t sep = 3;
inline constexpr std::int32_t mask = 4;
inline constexpr std::int32_t count = 5;
}  // namespace special

inline constexpr std::array<std::string_view, special::count> kSpecialTokens = {"[PAD]", "[UNK]", "[CLS]",
                                                                                "[SEP]", "[MASK]"};

inline constexpr std::string_view kContinuationPrefix = "##";

// Subword vocabulary. Ids are line numbers of the vocab.txt form; the five
// special tokens always occupy ids 0-4.
class Vocab {
public:
    explicit Vocab(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    const std::string& token(std::int32_t id) const;
    std::optional<std::int32_t> find(const std::string& token) const;

    // vocab.txt form: one token per line, LF-terminated.
    std::string serialize() const;
    static Vocab parse(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    // 16 hex digits identifying the serialized vocabulary.
    std::string fingerprint() const;

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

struct TokenSequence {
    std::vector<std::int32_t> ids;

    bool operator==(const TokenSequence&) const = default;
};

// Throws ErrorCategory::data unless the sequence is [CLS] ... [SEP], in range,
// and free of interior [PAD].
void validate_sequence(const TokenSequence& seq, std::size_t vocab_size);

// Uncased normalization: lowercase, canonical decomposition with combining
// marks removed, control characters dropped, every whitespace mapped to ' '.
std::string normalize_text(std::string_view text);

// Splits normalized text on whitespace and isolates each punctuation
// character as its own word.
std::vector<std::string> pre_tokenize(std::string_view normalized);

// Greedy longest-prefix decomposition of one pre-tokenized word. Returns
// {[UNK]} when the word has no full decomposition.
std::vector<std::int32_t> wordpiece(const Vocab& vocab, std::string_view word);

TokenSequence encode(const Vocab& vocab, std::string_view text, std::size_t max_len);

std::string decode(const Vocab& vocab, const TokenSequence& seq);

struct VocabTrainOptions {
    std::size_t target_size = 8192;
    std::size_t min_freq = 1;
};

// Trains a vocabulary by iterative pair merging with
// score(a, b) = freq(ab) / (freq(a) * freq(b)). Ties go to the merged piece
// whose surface form (without "##") sorts first, then to the lexicographically
// smaller (a, b).
Vocab train_vocab(std::span<const std::string> sentences, const VocabTrainOptions& options = {});
Vocab train_vocab(const SentenceCorpus& corpus, const VocabTrainOptions& options = {});

}  // namespace mlmforge
