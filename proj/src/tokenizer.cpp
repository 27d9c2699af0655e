#include "mlmforge/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "mlmforge/corpus.hpp"
#include "mlmforge/error.hpp"
#include "mlmforge/rng.hpp"

namespace mlmforge {
namespace {

constexpr std::size_t kMaxWordChars = 100;

bool is_punctuation(UChar32 c) {
    if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126)) {
        return true;
    }
    return u_ispunct(c) != 0;
}

void append_utf8(std::string& out, UChar32 c) {
    char buf[U8_MAX_LENGTH];
    int32_t len = 0;
    UBool error = false;
    U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, U8_MAX_LENGTH, c, error);
    if (!error) {
        out.append(buf, static_cast<std::size_t>(len));
    }
}

// Byte offsets of code point starts, plus the end offset.
std::vector<std::size_t> char_boundaries(std::string_view s) {
    std::vector<std::size_t> bounds;
    const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
    const auto length = static_cast<int32_t>(s.size());
    int32_t i = 0;
    while (i < length) {
        bounds.push_back(static_cast<std::size_t>(i));
        UChar32 c;
        U8_NEXT(bytes, i, length, c);
        (void)c;
    }
    bounds.push_back(s.size());
    return bounds;
}

std::string strip_prefix(std::string_view token) {
    if (token.starts_with(kContinuationPrefix)) {
        token.remove_prefix(kContinuationPrefix.size());
    }
    return std::string(token);
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < static_cast<std::size_t>(special::count)) {
        throw Error(ErrorCategory::data, "vocab: fewer tokens than the five specials");
    }
    for (std::int32_t i = 0; i < special::count; ++i) {
        if (tokens_[i] != kSpecialTokens[i]) {
            throw Error(ErrorCategory::data, "vocab: id " + std::to_string(i) + " must be " +
                                                 std::string(kSpecialTokens[i]) + ", found '" + tokens_[i] + "'");
        }
    }
    ids_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& t = tokens_[i];
        if (t.empty() || t == kContinuationPrefix || t.find_first_of(" \t\r\n") != std::string::npos) {
            throw Error(ErrorCategory::data, "vocab: invalid token at id " + std::to_string(i));
        }
        if (!ids_.emplace(t, static_cast<std::int32_t>(i)).second) {
            throw Error(ErrorCategory::data, "vocab: duplicate token '" + t + "'");
        }
    }
}

const std::string& Vocab::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw Error(ErrorCategory::data, "vocab: id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<std::int32_t> Vocab::find(const std::string& token) const {
    const auto it = ids_.find(token);
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string Vocab::serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
        out += t;
        out += '\n';
    }
    return out;
}

Vocab Vocab::parse(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        tokens.emplace_back(line);
        start = end + 1;
    }
    return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCategory::data, "cannot write " + path.string());
    }
    out << serialize();
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCategory::data, "cannot read vocabulary " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string Vocab::fingerprint() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(serialize())));
    return buf;
}

void validate_sequence(const TokenSequence& seq, std::size_t vocab_size) {
    const auto& ids = seq.ids;
    if (ids.size() < 2 || ids.front() != special::cls || ids.back() != special::sep) {
        throw Error(ErrorCategory::data, "token sequence must be [CLS] ... [SEP]");
    }
    for (const auto id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
            throw Error(ErrorCategory::data, "token id " + std::to_string(id) + " out of range");
        }
        if (id == special::pad) {
            throw Error(ErrorCategory::data, "token sequence contains interior [PAD]");
        }
    }
}

std::string normalize_text(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfd = icu::Normalizer2::getNFDInstance(status);
    if (U_FAILURE(status)) {
        throw Error(ErrorCategory::data, "unicode normalizer unavailable");
    }
    icu::UnicodeString us = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    us.toLower(icu::Locale::getRoot());
    const icu::UnicodeString decomposed = nfd->normalize(us, status);
    if (U_FAILURE(status)) {
        throw Error(ErrorCategory::data, "unicode normalization failed");
    }
    std::string out;
    out.reserve(text.size());
    for (int32_t i = 0; i < decomposed.length(); i = decomposed.moveIndex32(i, 1)) {
        const UChar32 c = decomposed.char32At(i);
        if (c == 0 || c == 0xFFFD || u_charType(c) == U_NON_SPACING_MARK) {
            continue;
        }
        if (c == '\t' || c == '\n' || c == '\r' || u_isUWhiteSpace(c)) {
            out += ' ';
            continue;
        }
        if (u_iscntrl(c) || u_charType(c) == U_FORMAT_CHAR) {
            continue;
        }
        append_utf8(out, c);
    }
    return out;
}

std::vector<std::string> pre_tokenize(std::string_view normalized) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    };
    const auto* bytes = reinterpret_cast<const uint8_t*>(normalized.data());
    const auto length = static_cast<int32_t>(normalized.size());
    int32_t i = 0;
    while (i < length) {
        UChar32 c;
        U8_NEXT(bytes, i, length, c);
        if (c < 0) {
            continue;
        }
        if (c == ' ' || u_isUWhiteSpace(c)) {
            flush();
        } else if (is_punctuation(c)) {
            flush();
            append_utf8(current, c);
            flush();
        } else {
            append_utf8(current, c);
        }
    }
    flush();
    return words;
}

std::vector<std::int32_t> wordpiece(const Vocab& vocab, std::string_view word) {
    const auto bounds = char_boundaries(word);
    const std::size_t n_chars = bounds.size() - 1;
    if (n_chars == 0) {
        return {};
    }
    if (n_chars > kMaxWordChars) {
        return {special::unk};
    }
    std::vector<std::int32_t> pieces;
    std::size_t start = 0;
    while (start < n_chars) {
        std::optional<std::int32_t> match;
        std::size_t end = n_chars;
        for (; end > start; --end) {
            std::string candidate(word.substr(bounds[start], bounds[end] - bounds[start]));
            if (start > 0) {
                candidate.insert(0, kContinuationPrefix);
            }
            if (auto id = vocab.find(candidate); id && *id >= special::count) {
                match = id;
                break;
            }
        }
        if (!match) {
            return {special::unk};
        }
        pieces.push_back(*match);
        start = end;
    }
    return pieces;
}

TokenSequence encode(const Vocab& vocab, std::string_view text, std::size_t max_len) {
    if (max_len < 2) {
        throw Error(ErrorCategory::config, "encode: max_len must be at least 2");
    }
    TokenSequence seq;
    seq.ids.push_back(special::cls);
    const std::size_t budget = max_len - 2;
    for (const auto& word : pre_tokenize(normalize_text(text))) {
        for (const auto id : wordpiece(vocab, word)) {
            if (seq.ids.size() - 1 >= budget) {
                break;
            }
            seq.ids.push_back(id);
        }
        if (seq.ids.size() - 1 >= budget) {
            break;
        }
    }
    seq.ids.push_back(special::sep);
    return seq;
}

std::string decode(const Vocab& vocab, const TokenSequence& seq) {
    std::string out;
    for (const auto id : seq.ids) {
        const std::string& tok = vocab.token(id);
        if (id < special::count) {
            continue;
        }
        if (tok.starts_with(kContinuationPrefix)) {
            out += tok.substr(kContinuationPrefix.size());
        } else {
            if (!out.empty()) {
                out += ' ';
            }
            out += tok;
        }
    }
    return out;
}

namespace {

struct TrainWord {
    std::vector<int> symbols;
    std::size_t freq = 0;
};

using Pair = std::pair<int, int>;

class MergeTrainer {
public:
    MergeTrainer(std::map<std::string, std::size_t> word_counts, std::size_t min_freq) : min_freq_(min_freq) {
        std::map<std::string, std::size_t> unit_counts;
        std::vector<std::pair<std::vector<std::string>, std::size_t>> split_words;
        for (auto& [word, count] : word_counts) {
            const auto bounds = char_boundaries(word);
            std::vector<std::string> units;
            for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
                std::string u = word.substr(bounds[i], bounds[i + 1] - bounds[i]);
                if (i > 0) {
                    u.insert(0, kContinuationPrefix);
                }
                unit_counts[u] += count;
                units.push_back(std::move(u));
            }
            split_words.emplace_back(std::move(units), count);
        }
        for (const auto& [unit, count] : unit_counts) {
            if (count >= min_freq_) {
                alphabet_.push_back(unit);
                symbol_id(unit);
            }
        }
        // Words with a rare character never take part in merges.
        for (auto& [units, count] : split_words) {
            TrainWord w;
            w.freq = count;
            bool usable = true;
            for (const auto& u : units) {
                const auto it = ids_.find(u);
                if (it == ids_.end()) {
                    usable = false;
                    break;
                }
                w.symbols.push_back(it->second);
            }
            if (usable) {
                words_.push_back(std::move(w));
            }
        }
        for (std::size_t i = 0; i < words_.size(); ++i) {
            add_word(i, +1);
        }
    }

    const std::vector<std::string>& alphabet() const { return alphabet_; }

    // Performs the best merge; returns the merged token, or nullopt when no
    // eligible pair is left.
    std::optional<std::string> merge_once() {
        std::optional<Pair> best;
        std::string best_bare;
        for (const auto& [pair, freq] : pair_freq_) {
            if (freq == 0 || freq < min_freq_) {
                continue;
            }
            if (!best) {
                best = pair;
                best_bare = bare_merge(pair);
                continue;
            }
            const int cmp = compare_scores(pair, *best);
            if (cmp > 0) {
                best = pair;
                best_bare = bare_merge(pair);
            } else if (cmp == 0) {
                std::string bare = bare_merge(pair);
                if (bare < best_bare ||
                    (bare == best_bare && std::tie(symbols_[pair.first], symbols_[pair.second]) <
                                              std::tie(symbols_[best->first], symbols_[best->second]))) {
                    best = pair;
                    best_bare = std::move(bare);
                }
            }
        }
        if (!best) {
            return std::nullopt;
        }
        const Pair chosen = *best;
        std::string merged = symbols_[chosen.first] + strip_prefix(symbols_[chosen.second]);
        const int merged_id = symbol_id(merged);

        const std::set<std::size_t> affected = pair_words_[chosen];
        for (const std::size_t wi : affected) {
            add_word(wi, -1);
            auto& syms = words_[wi].symbols;
            std::vector<int> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == chosen.first && syms[i + 1] == chosen.second) {
                    next.push_back(merged_id);
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms = std::move(next);
            add_word(wi, +1);
        }
        return merged;
    }

private:
    int symbol_id(const std::string& s) {
        const auto [it, inserted] = ids_.emplace(s, static_cast<int>(symbols_.size()));
        if (inserted) {
            symbols_.push_back(s);
            unit_freq_.push_back(0);
        }
        return it->second;
    }

    std::string bare_merge(const Pair& p) const {
        return strip_prefix(symbols_[p.first]) + strip_prefix(symbols_[p.second]);
    }

    // Sign of score(a) - score(b), compared exactly in integers.
    int compare_scores(const Pair& a, const Pair& b) const {
        using Wide = unsigned __int128;
        const Wide lhs = Wide(pair_freq_.at(a)) * Wide(unit_freq_[b.first]) * Wide(unit_freq_[b.second]);
        const Wide rhs = Wide(pair_freq_.at(b)) * Wide(unit_freq_[a.first]) * Wide(unit_freq_[a.second]);
        return lhs > rhs ? 1 : (lhs < rhs ? -1 : 0);
    }

    void add_word(std::size_t wi, int sign) {
        const auto& w = words_[wi];
        const auto delta = static_cast<long long>(w.freq) * sign;
        for (std::size_t i = 0; i < w.symbols.size(); ++i) {
            unit_freq_[w.symbols[i]] = static_cast<std::size_t>(static_cast<long long>(unit_freq_[w.symbols[i]]) + delta);
            if (i + 1 < w.symbols.size()) {
                const Pair p{w.symbols[i], w.symbols[i + 1]};
                auto& f = pair_freq_[p];
                f = static_cast<std::size_t>(static_cast<long long>(f) + delta);
                if (sign > 0) {
                    pair_words_[p].insert(wi);
                } else if (f == 0) {
                    pair_freq_.erase(p);
                    pair_words_.erase(p);
                }
            }
        }
    }

    std::size_t min_freq_;
    std::vector<std::string> alphabet_;
    std::vector<std::string> symbols_;
    std::map<std::string, int> ids_;
    std::vector<std::size_t> unit_freq_;
    std::vector<TrainWord> words_;
    std::map<Pair, std::size_t> pair_freq_;
    std::map<Pair, std::set<std::size_t>> pair_words_;
};

}  // namespace

Vocab train_vocab(std::span<const std::string> sentences, const VocabTrainOptions& options) {
    std::map<std::string, std::size_t> word_counts;
    for (const auto& s : sentences) {
        for (auto& w : pre_tokenize(normalize_text(s))) {
            ++word_counts[w];
        }
    }
    if (word_counts.empty()) {
        throw Error(ErrorCategory::data, "train_vocab: corpus is empty");
    }
    MergeTrainer trainer(std::move(word_counts), std::max<std::size_t>(1, options.min_freq));

    std::vector<std::string> tokens(kSpecialTokens.begin(), kSpecialTokens.end());
    std::set<std::string> present(tokens.begin(), tokens.end());
    for (const auto& unit : trainer.alphabet()) {
        if (present.insert(unit).second) {
            tokens.push_back(unit);
        }
    }
    if (options.target_size < tokens.size()) {
        throw Error(ErrorCategory::config, "train_vocab: target size " + std::to_string(options.target_size) +
                                               " cannot hold " + std::to_string(tokens.size()) +
                                               " specials and alphabet units");
    }
    while (tokens.size() < options.target_size) {
        auto merged = trainer.merge_once();
        if (!merged) {
            break;
        }
        if (present.insert(*merged).second) {
            tokens.push_back(std::move(*merged));
        }
    }
    return Vocab(std::move(tokens));
}

Vocab train_vocab(const SentenceCorpus& corpus, const VocabTrainOptions& options) {
    return train_vocab(corpus.sentences(), options);
}

}  // namespace mlmforge
