#include "mlmforge/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlmforge/parallel.hpp"

namespace mlmforge {

void MaskingConfig::validate() const {
    if (!(ratio > 0.0 && ratio <= 1.0)) {
        throw Error(ErrorCategory::config, "masking: ratio must lie in (0, 1]");
    }
    if (mask_prob < 0.0 || random_prob < 0.0 || mask_prob + random_prob > 1.0) {
        throw Error(ErrorCategory::config, "masking: replacement probabilities must be non-negative and sum to <= 1");
    }
}

std::size_t count_maskable(std::span<const std::int32_t> ids) {
    return static_cast<std::size_t>(std::count_if(ids.begin(), ids.end(), is_maskable));
}

std::size_t selection_count(std::size_t n_maskable, double ratio) {
    if (n_maskable == 0) {
        return 0;
    }
    const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_maskable)));
    return std::clamp<std::size_t>(n, 1, n_maskable);
}

MaskedSequence mask_sequence(const TokenSequence& seq, std::size_t vocab_size, Rng& rng,
                             const MaskingConfig& config) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (is_maskable(seq.ids[i])) {
            candidates.push_back(i);
        }
    }
    if (candidates.empty()) {
        throw Error(ErrorCategory::data, "masking: sequence has no maskable tokens");
    }
    if (vocab_size <= static_cast<std::size_t>(special::count)) {
        throw Error(ErrorCategory::config, "masking: vocabulary has no non-special tokens");
    }
    const std::size_t k = selection_count(candidates.size(), config.ratio);

    // Partial Fisher-Yates: the first k slots become a uniform sample without replacement.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.below(candidates.size() - i);
        std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(k);
    std::sort(candidates.begin(), candidates.end());

    MaskedSequence out{seq.ids, std::vector<std::int32_t>(seq.ids.size(), kIgnoreId)};
    const std::uint64_t n_regular = vocab_size - special::count;
    for (std::size_t pos : candidates) {
        out.labels[pos] = seq.ids[pos];
        const double u = rng.uniform();
        if (u < config.mask_prob) {
            out.input_ids[pos] = special::mask;
        } else if (u < config.mask_prob + config.random_prob) {
            out.input_ids[pos] = static_cast<std::int32_t>(special::count + rng.below(n_regular));
        }
    }
    return out;
}

std::uint64_t mask_seed(MaskingMode mode, std::uint64_t seed, std::size_t sequence_index, std::size_t epoch) {
    if (mode == MaskingMode::static_mask) {
        return derive_seed({seed, sequence_index});
    }
    return derive_seed({seed, sequence_index, epoch});
}

TokenSequence truncate_sequence(const TokenSequence& seq, std::size_t max_len) {
    if (max_len < 2) {
        throw Error(ErrorCategory::config, "max_len must be at least 2");
    }
    if (seq.ids.size() <= max_len) {
        return seq;
    }
    TokenSequence out;
    out.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(max_len - 1));
    out.ids.push_back(special::sep);
    return out;
}

std::size_t batch_count(std::size_t n_sequences, std::size_t batch_size) {
    if (batch_size == 0) {
        throw Error(ErrorCategory::config, "batch_size must be positive");
    }
    return (n_sequences + batch_size - 1) / batch_size;
}

MaskedBatch build_batch(std::span<const TokenSequence> corpus, const EpochOptions& options, std::size_t batch_index) {
    const std::size_t begin = batch_index * options.batch_size;
    if (begin >= corpus.size()) {
        throw Error(ErrorCategory::config, "masking: batch index " + std::to_string(batch_index) + " out of range");
    }
    const std::size_t end = std::min(corpus.size(), begin + options.batch_size);
    std::vector<TokenSequence> inputs;
    std::vector<std::vector<std::int32_t>> labels;
    inputs.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        TokenSequence seq = truncate_sequence(corpus[i], options.max_len);
        std::vector<std::int32_t> seq_labels(seq.ids.size(), kIgnoreId);
        if (count_maskable(seq.ids) > 0) {
            Rng rng(mask_seed(options.mode, options.seed, i, options.epoch));
            MaskedSequence m = mask_sequence(seq, options.vocab_size, rng, options.masking);
            seq.ids = std::move(m.input_ids);
            seq_labels = std::move(m.labels);
        }
        inputs.push_back(std::move(seq));
        labels.push_back(std::move(seq_labels));
    }
    MaskedBatch batch;
    batch.inputs = pad_batch(inputs);
    batch.labels.assign(batch.inputs.ids.size(), kIgnoreId);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        std::copy(labels[r].begin(), labels[r].end(), batch.labels.begin() + r * batch.inputs.seq);
    }
    return batch;
}

std::vector<MaskedBatch> build_epoch_batches(std::span<const TokenSequence> corpus, const EpochOptions& options) {
    if (corpus.empty()) {
        throw Error(ErrorCategory::data, "masking: corpus is empty");
    }
    std::vector<MaskedBatch> batches(batch_count(corpus.size(), options.batch_size));
    parallel_for(batches.size(), 4, [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
            batches[b] = build_batch(corpus, options, b);
        }
    });
    return batches;
}

}  // namespace mlmforge
