#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlmforge/adam.hpp"
#include "mlmforge/checkpoint.hpp"
#include "mlmforge/evaluation.hpp"
#include "mlmforge/masking.hpp"

namespace mlmforge {

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t max_steps = 1000;   // pretraining steps per call
    std::size_t eval_every = 1000;
    double lr_encoder = 1e-5;
    double lr_head = 3e-5;
    std::uint64_t seed = 0;
    MaskingMode masking_mode = MaskingMode::dynamic_mask;
    double mask_ratio = 0.15;
    std::size_t epochs = 10;        // fine-tuning epochs
    std::size_t max_len = 128;
    Aggregation selection = Aggregation::weighted;  // F1 used to pick the best epoch
    AdamConfig adam;

    void validate() const;
};

// Token ids of a corpus together with the fingerprint of the vocabulary that produced them.
struct TokenizedCorpus {
    std::string vocab_hash;
    std::vector<TokenSequence> sequences;
};

TokenizedCorpus tokenize_corpus(const Vocab& vocab, std::span<const std::string> sentences, std::size_t max_len);

struct LogRecord {
    std::string key;  // "step" or "epoch"
    std::uint64_t index = 0;
    std::string split;
    std::string metric;
    double value = 0.0;

    bool operator==(const LogRecord&) const = default;
};

nlohmann::json to_json(const LogRecord& record);
std::string to_jsonl(std::span<const LogRecord> records);

// Learning-rate groups of each phase; the inactive head is frozen.
std::vector<LrGroup> pretrain_groups(const TrainConfig& config);
std::vector<LrGroup> finetune_groups(const TrainConfig& config);

struct PretrainResult {
    Model best;  // lowest validation loss, or the final model without validation
    std::optional<double> best_val_loss;
    std::uint64_t best_step = 0;
    std::vector<LogRecord> log;
};

// Mean MLM loss over every label position of `corpus` under the static
// validation mask derived from `seed`; eval mode.
ObjectiveResult validation_mlm_loss(const Model& model, const TokenizedCorpus& corpus, const TrainConfig& config);

// Runs config.max_steps more Adam steps on `model` in place. The global step
// counter selects the epoch and batch, so a resumed run continues exactly
// where the saved one stopped.
PretrainResult pretrain(Model& model, const TokenizedCorpus& train, const TokenizedCorpus* validation,
                        const TrainConfig& config);

struct LabeledSequences {
    std::vector<TokenSequence> sequences;
    std::vector<std::int32_t> labels;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // 0 for epoch 0, which only evaluates
    Metrics validation;
};

struct FinetuneResult {
    Model best;
    std::size_t best_epoch = 0;
    double best_f1 = 0.0;
    std::vector<EpochMetrics> epochs;
    std::vector<LogRecord> log;
};

// Adds a classifier head for `label_names` when the model has none, resets
// the optimizer, then trains config.epochs epochs. Epoch 0 is the untrained
// head; the earliest epoch with the highest validation F1 is returned.
FinetuneResult finetune(Model& model, const std::vector<std::string>& label_names, const LabeledSequences& train,
                        const LabeledSequences& validation, const TrainConfig& config);

void write_log(const std::filesystem::path& path, std::span<const LogRecord> records);

}  // namespace mlmforge
