#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mlmforge/encoder.hpp"
#include "mlmforge/rng.hpp"
#include "mlmforge/tokenizer.hpp"

namespace mlmforge {

struct MaskingConfig {
    double ratio = 0.15;
    double mask_prob = 0.8;    // replace with [MASK]
    double random_prob = 0.1;  // replace with a random non-special token; the rest keep the original

    void validate() const;
};

enum class MaskingMode { static_mask, dynamic_mask };

struct MaskedSequence {
    std::vector<std::int32_t> input_ids;
    std::vector<std::int32_t> labels;  // original id at selected positions, kIgnoreId elsewhere
};

struct MaskedBatch {
    EncodedBatch inputs;
    std::vector<std::int32_t> labels;  // [batch, seq]; kIgnoreId at unselected and [PAD] positions

    bool operator==(const MaskedBatch&) const = default;
};

// Special tokens are never maskable.
inline bool is_maskable(std::int32_t id) { return id >= special::count; }

std::size_t count_maskable(std::span<const std::int32_t> ids);

// max(1, round(ratio * n_maskable)); 0 when nothing is maskable.
std::size_t selection_count(std::size_t n_maskable, double ratio);

// Throws ErrorCategory::data when the sequence has no maskable token.
MaskedSequence mask_sequence(const TokenSequence& seq, std::size_t vocab_size, Rng& rng,
                             const MaskingConfig& config = {});

// Per-sequence mask RNG seed: (seed, index) when static, (seed, index, epoch) when dynamic.
std::uint64_t mask_seed(MaskingMode mode, std::uint64_t seed, std::size_t sequence_index, std::size_t epoch);

// Head truncation that keeps [SEP] last.
TokenSequence truncate_sequence(const TokenSequence& seq, std::size_t max_len);

struct EpochOptions {
    MaskingMode mode = MaskingMode::dynamic_mask;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;
    std::size_t batch_size = 16;
    std::size_t max_len = 128;
    std::size_t vocab_size = 0;  // range of random replacement tokens
    MaskingConfig masking;
};

std::size_t batch_count(std::size_t n_sequences, std::size_t batch_size);

// Batch `batch_index` of the epoch: sequences [i*batch_size, (i+1)*batch_size)
// in corpus order. Degenerate sequences (nothing maskable) contribute no labels.
MaskedBatch build_batch(std::span<const TokenSequence> corpus, const EpochOptions& options, std::size_t batch_index);

std::vector<MaskedBatch> build_epoch_batches(std::span<const TokenSequence> corpus, const EpochOptions& options);

}  // namespace mlmforge
