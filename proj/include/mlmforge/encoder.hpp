#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlmforge/ops.hpp"
#include "mlmforge/param_store.hpp"
#include "mlmforge/tokenizer.hpp"

namespace mlmforge {

// Label value for positions that contribute nothing to a loss.
inline constexpr std::int32_t kIgnoreId = -100;

struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t hidden = 128;
    std::size_t n_heads = 4;
    std::size_t ffn = 512;
    std::size_t vocab_size = 8192;
    std::size_t max_positions = 128;
    std::size_t n_segments = 2;
    double dropout = 0.1;

    void validate() const;
    std::size_t head_dim() const { return hidden / n_heads; }

    // Minute-scale CPU configuration.
    static ModelConfig desk() { return {}; }
    // The 12-layer, 768-wide, 12-head base architecture.
    static ModelConfig base() { return {12, 768, 12, 3072, 30522, 512, 2, 0.1}; }

    bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Scalars held by the encoder and MLM head, plus the classifier head when
// n_classes > 0. Closed form; does not allocate.
std::size_t count_params(const ModelConfig& config, std::size_t n_classes = 0);

// Name and shape of every tensor in allocation order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config, std::size_t n_classes = 0);

// Weights ~ N(0, 0.02^2) truncated at two standard deviations, biases 0,
// layer-norm gains 1. Each tensor draws from its own seed derived from
// (seed, name). The MLM output projection reuses the token embedding matrix.
template <typename T>
ParameterStore<T> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename T>
void add_classification_head(ParameterStore<T>& store, const ModelConfig& config, std::size_t n_classes,
                             std::uint64_t seed);

// Class count of the classifier head in `store`, 0 when there is none.
template <typename T>
std::size_t classifier_classes(const ParameterStore<T>& store);

// Row-major [batch, seq] matrices.
struct EncodedBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> attention_mask;  // 1 = real token, 0 = [PAD]
    std::vector<std::int32_t> segment_ids;

    bool operator==(const EncodedBatch&) const = default;
};

// Pads to the longest sequence with [PAD] and attention_mask 0.
EncodedBatch pad_batch(std::span<const TokenSequence> sequences);

enum class RunMode { eval, train };

struct ForwardOptions {
    RunMode mode = RunMode::eval;
    std::uint64_t dropout_seed = 0;
};

template <typename T>
struct EncoderOutput {
    Tensor<T> hidden_states;  // [batch, seq, hidden]
    Tensor<T> cls_vector;     // [batch, hidden], position 0 of hidden_states
};

// Post-layer-norm encoder stack with activations cached for backward().
template <typename T>
class EncoderPass {
public:
    EncoderPass(const ModelConfig& config, ForwardOptions options);
    ~EncoderPass();
    EncoderPass(EncoderPass&&) noexcept;
    EncoderPass& operator=(EncoderPass&&) noexcept;

    EncoderOutput<T> forward(const ParameterStore<T>& params, const EncodedBatch& batch);

    // Accumulates parameter gradients given d(loss)/d(hidden_states).
    void backward(ParameterStore<T>& params, const Tensor<T>& d_hidden);

    // Softmax attention probabilities of the last forward, [batch, heads, seq, seq].
    const Tensor<T>& attention_probs(std::size_t layer) const;

private:
    struct State;
    ModelConfig config_;
    ForwardOptions options_;
    std::unique_ptr<State> state_;
};

// dense -> gelu -> layer norm -> tied projection onto the token embeddings + bias.
template <typename T>
class MlmHeadPass {
public:
    Tensor<T> forward(const ParameterStore<T>& params, const Tensor<T>& rows);
    Tensor<T> backward(ParameterStore<T>& params, const Tensor<T>& d_logits);

private:
    Tensor<T> rows_;
    Tensor<T> pre_act_;
    ops::LayerNormResult<T> norm_;
};

// [CLS] state -> dense -> tanh -> dense to class logits (no softmax).
template <typename T>
class ClassifierHeadPass {
public:
    Tensor<T> forward(const ParameterStore<T>& params, const Tensor<T>& cls_vector);
    Tensor<T> backward(ParameterStore<T>& params, const Tensor<T>& d_logits);

private:
    Tensor<T> input_;
    Tensor<T> activated_;
};

template <typename T>
EncoderOutput<T> encode_batch(const ParameterStore<T>& params, const ModelConfig& config, const EncodedBatch& batch,
                              ForwardOptions options = {});

// [batch, seq, vocab_size]
template <typename T>
Tensor<T> mlm_logits(const ParameterStore<T>& params, const ModelConfig& config, const EncoderOutput<T>& output);

// [batch, n_classes]; throws if the head was built for a different class count.
template <typename T>
Tensor<T> cls_logits(const ParameterStore<T>& params, const EncoderOutput<T>& output, std::size_t n_classes);

struct ObjectiveResult {
    double loss = 0.0;
    std::size_t count = 0;    // scored positions (MLM) or examples (classification)
    std::size_t correct = 0;  // argmax hits among them
};

// Mean cross-entropy over positions whose label != kIgnoreId. With
// `with_grad`, gradients are added to the store's grad tensors.
template <typename T>
ObjectiveResult mlm_objective(ParameterStore<T>& params, const ModelConfig& config, const EncodedBatch& batch,
                              std::span<const std::int32_t> labels, ForwardOptions options, bool with_grad);

// Mean cross-entropy of the classifier head; labels are class indices per row.
template <typename T>
ObjectiveResult classification_objective(ParameterStore<T>& params, const ModelConfig& config,
                                         const EncodedBatch& batch, std::span<const std::int32_t> labels,
                                         ForwardOptions options, bool with_grad);

// Eval-mode argmax class per row; ties resolve to the lower index.
template <typename T>
std::vector<std::int32_t> predict_classes(const ParameterStore<T>& params, const ModelConfig& config,
                                          const EncodedBatch& batch);

// Index of the largest value; the first one wins ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

}  // namespace mlmforge
