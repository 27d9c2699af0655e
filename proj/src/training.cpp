#include "mlmforge/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

namespace mlmforge {
namespace {

constexpr std::uint64_t kValidationStream = 0x76616c;  // "val"
constexpr std::uint64_t kHeadInitStream = 0x636c73;    // "cls"

EpochOptions epoch_options(const Model& model, const TrainConfig& config, MaskingMode mode, std::uint64_t seed,
                           std::size_t epoch) {
    EpochOptions o;
    o.mode = mode;
    o.epoch = epoch;
    o.seed = seed;
    o.batch_size = config.batch_size;
    o.max_len = std::min(config.max_len, model.config.max_positions);
    o.vocab_size = model.config.vocab_size;
    o.masking.ratio = config.mask_ratio;
    return o;
}

void check_hash(const Model& model, const TokenizedCorpus& corpus, const char* what) {
    if (model.vocab_hash != corpus.vocab_hash) {
        throw Error(ErrorCategory::checkpoint, std::string("vocab hash mismatch: model ") + model.vocab_hash + ", " +
                                                   what + " corpus " + corpus.vocab_hash);
    }
}

// Rethrows numeric failures with the step at which they happened.
template <typename Fn>
auto at_step(std::uint64_t step, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        if (e.category() != ErrorCategory::numeric) {
            throw;
        }
        throw Error(ErrorCategory::numeric, "step " + std::to_string(step) + ": " + e.what());
    }
}

void check_loss(std::uint64_t step, double loss) {
    if (!std::isfinite(loss)) {
        throw Error(ErrorCategory::numeric, "step " + std::to_string(step) + ": non-finite loss");
    }
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCategory::config, "train config: " + msg); };
    if (batch_size == 0) {
        fail("batch_size must be positive");
    }
    if (max_steps == 0) {
        fail("max_steps must be at least 1");
    }
    if (eval_every == 0) {
        fail("eval_every must be at least 1");
    }
    if (!(lr_encoder >= 0.0) || !(lr_head >= 0.0)) {
        fail("learning rates must be non-negative");
    }
    if (max_len < 2) {
        fail("max_len must be at least 2");
    }
    MaskingConfig m;
    m.ratio = mask_ratio;
    m.validate();
}

TokenizedCorpus tokenize_corpus(const Vocab& vocab, std::span<const std::string> sentences, std::size_t max_len) {
    TokenizedCorpus out{vocab.fingerprint(), {}};
    out.sequences.reserve(sentences.size());
    for (const auto& s : sentences) {
        out.sequences.push_back(encode(vocab, s, max_len));
    }
    return out;
}

nlohmann::json to_json(const LogRecord& r) {
    return {{r.key, r.index}, {"split", r.split}, {"metric", r.metric}, {"value", r.value}};
}

std::string to_jsonl(std::span<const LogRecord> records) {
    std::string out;
    for (const auto& r : records) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

void write_log(const std::filesystem::path& path, std::span<const LogRecord> records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << to_jsonl(records);
    if (!out) {
        throw Error(ErrorCategory::data, "cannot write log " + path.string());
    }
}

std::vector<LrGroup> pretrain_groups(const TrainConfig& c) {
    return {{"encoder.*", c.lr_encoder}, {"mlm.*", c.lr_head}, {"cls.*", 0.0}};
}

std::vector<LrGroup> finetune_groups(const TrainConfig& c) {
    return {{"encoder.*", c.lr_encoder}, {"cls.*", c.lr_head}, {"mlm.*", 0.0}};
}

ObjectiveResult validation_mlm_loss(const Model& model, const TokenizedCorpus& corpus, const TrainConfig& config) {
    check_hash(model, corpus, "validation");
    const auto options = epoch_options(model, config, MaskingMode::static_mask,
                                       derive_seed({config.seed, kValidationStream}), 0);
    // The objective only reads the store when no gradient is requested.
    auto& params = const_cast<ParameterStore<float>&>(model.params);
    double weighted = 0.0;
    ObjectiveResult total;
    for (std::size_t b = 0; b < batch_count(corpus.sequences.size(), config.batch_size); ++b) {
        const MaskedBatch batch = build_batch(corpus.sequences, options, b);
        const auto r = mlm_objective(params, model.config, batch.inputs, batch.labels, {}, false);
        weighted += r.loss * static_cast<double>(r.count);
        total.count += r.count;
        total.correct += r.correct;
    }
    total.loss = total.count == 0 ? 0.0 : weighted / static_cast<double>(total.count);
    return total;
}

PretrainResult pretrain(Model& model, const TokenizedCorpus& train, const TokenizedCorpus* validation,
                        const TrainConfig& config) {
    config.validate();
    check_hash(model, train, "training");
    if (validation) {
        check_hash(model, *validation, "validation");
    }
    if (train.sequences.empty()) {
        throw Error(ErrorCategory::data, "pretrain: training corpus is empty");
    }
    const auto groups = pretrain_groups(config);
    const std::size_t n_batches = batch_count(train.sequences.size(), config.batch_size);
    PretrainResult result;

    for (std::size_t s = 0; s < config.max_steps; ++s) {
        const std::uint64_t step = model.params.step_count;
        const auto options = epoch_options(model, config, config.masking_mode, config.seed, step / n_batches);
        const MaskedBatch batch = build_batch(train.sequences, options, step % n_batches);
        const ForwardOptions fwd{RunMode::train, derive_seed({config.seed, step})};
        const auto r = at_step(step + 1, [&] {
            return mlm_objective(model.params, model.config, batch.inputs, batch.labels, fwd, true);
        });
        check_loss(step + 1, r.loss);
        adam_step(model.params, groups, config.adam);
        result.log.push_back({"step", step + 1, "train", "mlm_loss", r.loss});

        if (validation && (step + 1) % config.eval_every == 0) {
            const auto v = at_step(step + 1, [&] { return validation_mlm_loss(model, *validation, config); });
            check_loss(step + 1, v.loss);
            result.log.push_back({"step", step + 1, "validation", "mlm_loss", v.loss});
            if (!result.best_val_loss || v.loss < *result.best_val_loss) {
                result.best_val_loss = v.loss;
                result.best_step = step + 1;
                result.best = model;
            }
        }
    }
    if (!result.best_val_loss) {
        result.best = model;
        result.best_step = model.params.step_count;
    }
    return result;
}

namespace {

Metrics validate_classifier(const Model& model, const LabeledSequences& data, Aggregation aggregation) {
    const auto table = evaluate_model(model.params, model.config, data.sequences, data.labels);
    return compute_metrics(table, aggregation);
}

void check_labels(const LabeledSequences& data, std::size_t n_classes, const char* split) {
    if (data.sequences.size() != data.labels.size()) {
        throw Error(ErrorCategory::shape, std::string("finetune: ") + split + " sequences and labels differ in length");
    }
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        if (data.labels[i] < 0 || static_cast<std::size_t>(data.labels[i]) >= n_classes) {
            throw Error(ErrorCategory::data, std::string("finetune: ") + split + " example " + std::to_string(i) +
                                                 " has label " + std::to_string(data.labels[i]) +
                                                 " outside the label map");
        }
    }
}

}  // namespace

FinetuneResult finetune(Model& model, const std::vector<std::string>& label_names, const LabeledSequences& train,
                        const LabeledSequences& validation, const TrainConfig& config) {
    config.validate();
    const std::size_t n_classes = label_names.size();
    if (classifier_classes(model.params) == 0) {
        add_classification_head(model.params, model.config, n_classes, derive_seed({config.seed, kHeadInitStream}));
        model.labels = label_names;
    } else if (model.labels != label_names) {
        throw Error(ErrorCategory::config, "finetune: model head was built for a different label map");
    }
    check_labels(train, n_classes, "train");
    check_labels(validation, n_classes, "validation");
    if (train.sequences.empty()) {
        throw Error(ErrorCategory::data, "finetune: training split is empty");
    }
    model.params.reset_optimizer();
    const auto groups = finetune_groups(config);
    const std::size_t max_len = std::min(config.max_len, model.config.max_positions);

    FinetuneResult result;
    auto record = [&](std::size_t epoch, double train_loss) {
        EpochMetrics m{epoch, train_loss, validate_classifier(model, validation, config.selection)};
        if (epoch > 0) {
            result.log.push_back({"epoch", epoch, "train", "loss", train_loss});
        }
        result.log.push_back({"epoch", epoch, "validation", "f1", m.validation.f1});
        result.log.push_back({"epoch", epoch, "validation", "recall", m.validation.recall});
        result.log.push_back({"epoch", epoch, "validation", "accuracy", m.validation.accuracy});
        if (result.epochs.empty() || m.validation.f1 > result.best_f1) {
            result.best_f1 = m.validation.f1;
            result.best_epoch = epoch;
            result.best = model;
        }
        result.epochs.push_back(std::move(m));
    };
    record(0, 0.0);

    std::vector<std::size_t> order(train.sequences.size());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed({config.seed, epoch}));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            std::vector<TokenSequence> seqs;
            std::vector<std::int32_t> labels;
            for (std::size_t i = begin; i < end; ++i) {
                seqs.push_back(truncate_sequence(train.sequences[order[i]], max_len));
                labels.push_back(train.labels[order[i]]);
            }
            const std::uint64_t step = model.params.step_count;
            const EncodedBatch batch = pad_batch(seqs);
            const ForwardOptions fwd{RunMode::train, derive_seed({config.seed, epoch, step})};
            const auto r = at_step(step + 1, [&] {
                return classification_objective(model.params, model.config, batch, labels, fwd, true);
            });
            check_loss(step + 1, r.loss);
            adam_step(model.params, groups, config.adam);
            loss_sum += r.loss * static_cast<double>(r.count);
            loss_count += r.count;
        }
        record(epoch, loss_sum / static_cast<double>(loss_count));
    }
    return result;
}

}  // namespace mlmforge
