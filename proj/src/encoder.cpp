#include "mlmforge/encoder.hpp"

#include <cmath>
#include <limits>

#include "mlmforge/parallel.hpp"
#include "mlmforge/rng.hpp"

namespace mlmforge {
namespace {

constexpr double kInitStd = 0.02;

std::string layer_prefix(std::size_t layer) { return "encoder.layer." + std::to_string(layer) + "."; }

template <typename T>
Tensor<T> linear(const ParameterStore<T>& params, const std::string& name, const Tensor<T>& x) {
    return ops::add_bias(ops::matmul(x, params.value(name + ".weight")), params.value(name + ".bias"));
}

// Accumulates weight and bias grads; returns the input gradient.
template <typename T>
Tensor<T> linear_backward(ParameterStore<T>& params, const std::string& name, const Tensor<T>& x,
                          const Tensor<T>& dout) {
    ops::accumulate(params.grad(name + ".bias"), ops::add_bias_backward(dout));
    auto g = ops::matmul_backward(x, params.value(name + ".weight"), dout);
    ops::accumulate(params.grad(name + ".weight"), g.b);
    return std::move(g.a);
}

template <typename T>
ops::LayerNormResult<T> norm(const ParameterStore<T>& params, const std::string& name, const Tensor<T>& x) {
    return ops::layer_norm(x, params.value(name + ".gain"), params.value(name + ".bias"));
}

template <typename T>
Tensor<T> norm_backward(ParameterStore<T>& params, const std::string& name, const ops::LayerNormResult<T>& fwd,
                        const Tensor<T>& dout) {
    auto g = ops::layer_norm_backward(fwd, params.value(name + ".gain"), dout);
    ops::accumulate(params.grad(name + ".gain"), g.gain);
    ops::accumulate(params.grad(name + ".bias"), g.bias);
    return std::move(g.x);
}

// Inverted dropout scale mask; empty when dropout is inactive.
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, const ForwardOptions& options, std::uint64_t site) {
    if (options.mode != RunMode::train || p <= 0.0) {
        return {};
    }
    Tensor<T> mask(shape);
    Rng rng(derive_seed({options.dropout_seed, site}));
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform() < p ? T{0} : keep_scale;
    }
    return mask;
}

template <typename T>
void apply_mask(Tensor<T>& x, const Tensor<T>& mask) {
    if (mask.empty()) {
        return;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] *= mask[i];
    }
}

template <typename T>
Tensor<T> masked(Tensor<T> x, const Tensor<T>& mask) {
    apply_mask(x, mask);
    return x;
}

bool is_initialized_as_normal(const std::string& name) {
    return name.ends_with(".weight") || name == "encoder.embeddings.word" ||
           name == "encoder.embeddings.position" || name == "encoder.embeddings.segment";
}

template <typename T>
Tensor<T> init_tensor(const std::string& name, const Shape& shape, std::uint64_t seed) {
    Tensor<T> t(shape);
    if (name.ends_with(".gain")) {
        t.fill(T{1});
    } else if (is_initialized_as_normal(name)) {
        Rng rng(derive_seed({seed, fnv1a64(name)}));
        for (std::size_t i = 0; i < t.size(); ++i) {
            double z = rng.normal();
            while (std::abs(z) > 2.0) {
                z = rng.normal();
            }
            t[i] = static_cast<T>(z * kInitStd);
        }
    }
    return t;
}

}  // namespace

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCategory::config, "model config: " + msg); };
    if (n_layers == 0 || hidden == 0 || n_heads == 0 || ffn == 0 || max_positions == 0 || n_segments == 0) {
        fail("all sizes must be positive");
    }
    if (hidden % n_heads != 0) {
        fail("hidden " + std::to_string(hidden) + " is not divisible by n_heads " + std::to_string(n_heads));
    }
    if (vocab_size <= static_cast<std::size_t>(special::count)) {
        fail("vocab_size must exceed the special tokens");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        fail("dropout must lie in [0, 1)");
    }
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers},   {"hidden", c.hidden},
            {"n_heads", c.n_heads},     {"ffn", c.ffn},
            {"vocab_size", c.vocab_size}, {"max_positions", c.max_positions},
            {"n_segments", c.n_segments}, {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.hidden = j.at("hidden").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.ffn = j.at("ffn").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.max_positions = j.at("max_positions").get<std::size_t>();
        c.n_segments = j.at("n_segments").get<std::size_t>();
        c.dropout = j.at("dropout").get<double>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCategory::config, std::string("model config: ") + e.what());
    }
}

std::size_t count_params(const ModelConfig& c, std::size_t n_classes) {
    const std::size_t h = c.hidden;
    const std::size_t embeddings = (c.vocab_size + c.max_positions + c.n_segments) * h + 2 * h;
    const std::size_t attention = 4 * (h * h + h) + 2 * h;
    const std::size_t feed_forward = 2 * h * c.ffn + c.ffn + h + 2 * h;
    const std::size_t mlm_head = h * h + h + 2 * h + c.vocab_size;
    const std::size_t classifier = n_classes == 0 ? 0 : h * h + h + h * n_classes + n_classes;
    return embeddings + c.n_layers * (attention + feed_forward) + mlm_head + classifier;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c, std::size_t n_classes) {
    const std::size_t h = c.hidden;
    std::vector<std::pair<std::string, Shape>> shapes = {
        {"encoder.embeddings.word", {c.vocab_size, h}},
        {"encoder.embeddings.position", {c.max_positions, h}},
        {"encoder.embeddings.segment", {c.n_segments, h}},
        {"encoder.embeddings.norm.gain", {h}},
        {"encoder.embeddings.norm.bias", {h}},
    };
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = layer_prefix(l);
        for (const char* proj : {"query", "key", "value", "output"}) {
            shapes.push_back({p + "attention." + proj + ".weight", {h, h}});
            shapes.push_back({p + "attention." + proj + ".bias", {h}});
        }
        shapes.push_back({p + "attention.norm.gain", {h}});
        shapes.push_back({p + "attention.norm.bias", {h}});
        shapes.push_back({p + "ffn.inner.weight", {h, c.ffn}});
        shapes.push_back({p + "ffn.inner.bias", {c.ffn}});
        shapes.push_back({p + "ffn.outer.weight", {c.ffn, h}});
        shapes.push_back({p + "ffn.outer.bias", {h}});
        shapes.push_back({p + "ffn.norm.gain", {h}});
        shapes.push_back({p + "ffn.norm.bias", {h}});
    }
    shapes.push_back({"mlm.transform.weight", {h, h}});
    shapes.push_back({"mlm.transform.bias", {h}});
    shapes.push_back({"mlm.norm.gain", {h}});
    shapes.push_back({"mlm.norm.bias", {h}});
    shapes.push_back({"mlm.output.bias", {c.vocab_size}});
    if (n_classes > 0) {
        shapes.push_back({"cls.hidden.weight", {h, h}});
        shapes.push_back({"cls.hidden.bias", {h}});
        shapes.push_back({"cls.output.weight", {h, n_classes}});
        shapes.push_back({"cls.output.bias", {n_classes}});
    }
    return shapes;
}

template <typename T>
ParameterStore<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ParameterStore<T> store;
    for (const auto& [name, shape] : parameter_shapes(config)) {
        store.add(name, init_tensor<T>(name, shape, seed));
    }
    return store;
}

template <typename T>
void add_classification_head(ParameterStore<T>& store, const ModelConfig& config, std::size_t n_classes,
                             std::uint64_t seed) {
    if (n_classes < 2) {
        throw Error(ErrorCategory::config, "classifier head needs at least 2 classes");
    }
    if (store.contains("cls.output.weight")) {
        throw Error(ErrorCategory::config, "store already has a classifier head");
    }
    const auto all = parameter_shapes(config, n_classes);
    for (const auto& [name, shape] : all) {
        if (name.starts_with("cls.")) {
            store.add(name, init_tensor<T>(name, shape, seed));
        }
    }
}

template <typename T>
std::size_t classifier_classes(const ParameterStore<T>& store) {
    if (!store.contains("cls.output.bias")) {
        return 0;
    }
    return store.value("cls.output.bias").size();
}

EncodedBatch pad_batch(std::span<const TokenSequence> sequences) {
    EncodedBatch b;
    b.batch = sequences.size();
    for (const auto& s : sequences) {
        b.seq = std::max(b.seq, s.ids.size());
    }
    b.ids.assign(b.batch * b.seq, special::pad);
    b.attention_mask.assign(b.batch * b.seq, 0);
    b.segment_ids.assign(b.batch * b.seq, 0);
    for (std::size_t i = 0; i < b.batch; ++i) {
        const auto& ids = sequences[i].ids;
        for (std::size_t j = 0; j < ids.size(); ++j) {
            b.ids[i * b.seq + j] = ids[j];
            b.attention_mask[i * b.seq + j] = 1;
        }
    }
    return b;
}

// ----------------------------------------------------------------------------
// Encoder stack

template <typename T>
struct EncoderPass<T>::State {
    struct Layer {
        Tensor<T> input;
        Tensor<T> q, k, v;
        Tensor<T> probs;       // [batch, heads, seq, seq]
        Tensor<T> probs_mask;
        Tensor<T> context;
        Tensor<T> attn_mask;   // dropout on the attention output
        ops::LayerNormResult<T> norm1;
        Tensor<T> ffn_pre;
        Tensor<T> ffn_act;
        Tensor<T> ffn_mask;
        ops::LayerNormResult<T> norm2;
    };

    EncodedBatch batch;
    std::vector<std::int32_t> positions;
    ops::LayerNormResult<T> emb_norm;
    Tensor<T> emb_mask;
    std::vector<Layer> layers;
};

template <typename T>
EncoderPass<T>::EncoderPass(const ModelConfig& config, ForwardOptions options)
    : config_(config), options_(options), state_(std::make_unique<State>()) {}

template <typename T>
EncoderPass<T>::~EncoderPass() = default;
template <typename T>
EncoderPass<T>::EncoderPass(EncoderPass&&) noexcept = default;
template <typename T>
EncoderPass<T>& EncoderPass<T>::operator=(EncoderPass&&) noexcept = default;

template <typename T>
const Tensor<T>& EncoderPass<T>::attention_probs(std::size_t layer) const {
    return state_->layers.at(layer).probs;
}

template <typename T>
EncoderOutput<T> EncoderPass<T>::forward(const ParameterStore<T>& params, const EncodedBatch& batch) {
    const std::size_t B = batch.batch;
    const std::size_t S = batch.seq;
    const std::size_t H = config_.hidden;
    const std::size_t A = config_.n_heads;
    const std::size_t D = config_.head_dim();
    const std::size_t n = B * S;
    if (S > config_.max_positions) {
        throw Error(ErrorCategory::shape, "encoder: sequence length " + std::to_string(S) +
                                              " exceeds max_positions " + std::to_string(config_.max_positions));
    }
    if (batch.ids.size() != n || batch.attention_mask.size() != n || batch.segment_ids.size() != n) {
        throw Error(ErrorCategory::shape, "encoder: batch matrices do not match [" + std::to_string(B) + "," +
                                              std::to_string(S) + "]");
    }
    auto& st = *state_;
    st.batch = batch;
    st.layers.assign(config_.n_layers, {});
    st.positions.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        st.positions[i] = static_cast<std::int32_t>(i % S);
    }

    Tensor<T> x = ops::embedding_lookup(params.value("encoder.embeddings.word"), batch.ids);
    ops::accumulate(x, ops::embedding_lookup(params.value("encoder.embeddings.position"), st.positions));
    ops::accumulate(x, ops::embedding_lookup(params.value("encoder.embeddings.segment"), batch.segment_ids));
    st.emb_norm = norm(params, "encoder.embeddings.norm", x);
    st.emb_mask = dropout_mask<T>(st.emb_norm.out.shape(), config_.dropout, options_, 1);
    x = masked(st.emb_norm.out, st.emb_mask);

    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(D)));
    const T neg_inf = -std::numeric_limits<T>::infinity();

    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        auto& c = st.layers[l];
        const std::string p = layer_prefix(l);
        const std::uint64_t site = 100 * (l + 1);
        c.input = std::move(x);
        c.q = linear(params, p + "attention.query", c.input);
        c.k = linear(params, p + "attention.key", c.input);
        c.v = linear(params, p + "attention.value", c.input);

        c.probs = Tensor<T>({B, A, S, S});
        c.context = Tensor<T>({n, H});
        c.probs_mask = dropout_mask<T>(c.probs.shape(), config_.dropout, options_, site + 1);
        parallel_for(B * A, 1, [&](std::size_t begin, std::size_t end) {
            std::vector<T> row(S);
            for (std::size_t ba = begin; ba < end; ++ba) {
                const std::size_t b = ba / A;
                const std::size_t a = ba % A;
                T* probs = c.probs.data() + ba * S * S;
                for (std::size_t i = 0; i < S; ++i) {
                    const T* qi = c.q.data() + (b * S + i) * H + a * D;
                    T mx = neg_inf;
                    for (std::size_t j = 0; j < S; ++j) {
                        if (batch.attention_mask[b * S + j] == 0) {
                            row[j] = neg_inf;
                            continue;
                        }
                        const T* kj = c.k.data() + (b * S + j) * H + a * D;
                        T dot = 0;
                        for (std::size_t d = 0; d < D; ++d) {
                            dot += qi[d] * kj[d];
                        }
                        row[j] = dot * scale;
                        mx = std::max(mx, row[j]);
                    }
                    double sum = 0.0;
                    for (std::size_t j = 0; j < S; ++j) {
                        row[j] = std::exp(row[j] - mx);
                        sum += row[j];
                    }
                    const T inv = static_cast<T>(1.0 / sum);
                    T* pi = probs + i * S;
                    for (std::size_t j = 0; j < S; ++j) {
                        pi[j] = row[j] * inv;
                    }
                    T* ctx = c.context.data() + (b * S + i) * H + a * D;
                    const T* mask_row = c.probs_mask.empty() ? nullptr : c.probs_mask.data() + ba * S * S + i * S;
                    for (std::size_t j = 0; j < S; ++j) {
                        const T w = mask_row ? pi[j] * mask_row[j] : pi[j];
                        if (w == T{0}) {
                            continue;
                        }
                        const T* vj = c.v.data() + (b * S + j) * H + a * D;
                        for (std::size_t d = 0; d < D; ++d) {
                            ctx[d] += w * vj[d];
                        }
                    }
                }
            }
        });
        ops::check_finite("attention", c.context);

        Tensor<T> attn_out = linear(params, p + "attention.output", c.context);
        c.attn_mask = dropout_mask<T>(attn_out.shape(), config_.dropout, options_, site + 2);
        apply_mask(attn_out, c.attn_mask);
        c.norm1 = norm(params, p + "attention.norm", ops::add(c.input, attn_out));

        c.ffn_pre = linear(params, p + "ffn.inner", c.norm1.out);
        c.ffn_act = ops::gelu(c.ffn_pre);
        Tensor<T> ffn_out = linear(params, p + "ffn.outer", c.ffn_act);
        c.ffn_mask = dropout_mask<T>(ffn_out.shape(), config_.dropout, options_, site + 3);
        apply_mask(ffn_out, c.ffn_mask);
        c.norm2 = norm(params, p + "ffn.norm", ops::add(c.norm1.out, ffn_out));
        x = c.norm2.out;
    }

    EncoderOutput<T> out;
    out.cls_vector = Tensor<T>({B, H});
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(x.data() + b * S * H, H, out.cls_vector.data() + b * H);
    }
    x.reshape({B, S, H});
    out.hidden_states = std::move(x);
    return out;
}

template <typename T>
void EncoderPass<T>::backward(ParameterStore<T>& params, const Tensor<T>& d_hidden) {
    auto& st = *state_;
    const std::size_t B = st.batch.batch;
    const std::size_t S = st.batch.seq;
    const std::size_t H = config_.hidden;
    const std::size_t A = config_.n_heads;
    const std::size_t D = config_.head_dim();
    const std::size_t n = B * S;
    if (d_hidden.size() != n * H) {
        throw Error(ErrorCategory::shape, "encoder backward: gradient shape " + shape_str(d_hidden.shape()) +
                                              " does not match hidden states");
    }
    Tensor<T> dx = d_hidden;
    dx.reshape({n, H});
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(D)));

    for (std::size_t li = config_.n_layers; li-- > 0;) {
        auto& c = st.layers[li];
        const std::string p = layer_prefix(li);

        Tensor<T> d_r2 = norm_backward(params, p + "ffn.norm", c.norm2, dx);
        Tensor<T> d_h1 = d_r2;
        Tensor<T> d_ffn_out = masked(std::move(d_r2), c.ffn_mask);
        Tensor<T> d_act = linear_backward(params, p + "ffn.outer", c.ffn_act, d_ffn_out);
        Tensor<T> d_pre = ops::gelu_backward(c.ffn_pre, d_act);
        ops::accumulate(d_h1, linear_backward(params, p + "ffn.inner", c.norm1.out, d_pre));

        Tensor<T> d_r1 = norm_backward(params, p + "attention.norm", c.norm1, d_h1);
        Tensor<T> d_input = d_r1;
        Tensor<T> d_attn_out = masked(std::move(d_r1), c.attn_mask);
        Tensor<T> d_context = linear_backward(params, p + "attention.output", c.context, d_attn_out);

        Tensor<T> dq({n, H});
        Tensor<T> dk({n, H});
        Tensor<T> dv({n, H});
        parallel_for(B * A, 1, [&](std::size_t begin, std::size_t end) {
            std::vector<T> d_probs(S);
            for (std::size_t ba = begin; ba < end; ++ba) {
                const std::size_t b = ba / A;
                const std::size_t a = ba % A;
                const T* probs = c.probs.data() + ba * S * S;
                const T* pmask = c.probs_mask.empty() ? nullptr : c.probs_mask.data() + ba * S * S;
                for (std::size_t i = 0; i < S; ++i) {
                    const T* dctx = d_context.data() + (b * S + i) * H + a * D;
                    const T* pi = probs + i * S;
                    // Gradient w.r.t. the (dropped-out) probabilities, and dv.
                    for (std::size_t j = 0; j < S; ++j) {
                        const T* vj = c.v.data() + (b * S + j) * H + a * D;
                        T dot = 0;
                        for (std::size_t d = 0; d < D; ++d) {
                            dot += dctx[d] * vj[d];
                        }
                        const T m = pmask ? pmask[i * S + j] : T{1};
                        d_probs[j] = dot * m;
                        const T w = pi[j] * m;
                        if (w != T{0}) {
                            T* dvj = dv.data() + (b * S + j) * H + a * D;
                            for (std::size_t d = 0; d < D; ++d) {
                                dvj[d] += w * dctx[d];
                            }
                        }
                    }
                    T inner = 0;
                    for (std::size_t j = 0; j < S; ++j) {
                        inner += pi[j] * d_probs[j];
                    }
                    const T* qi = c.q.data() + (b * S + i) * H + a * D;
                    T* dqi = dq.data() + (b * S + i) * H + a * D;
                    for (std::size_t j = 0; j < S; ++j) {
                        const T ds = pi[j] * (d_probs[j] - inner) * scale;
                        if (ds == T{0}) {
                            continue;
                        }
                        const T* kj = c.k.data() + (b * S + j) * H + a * D;
                        T* dkj = dk.data() + (b * S + j) * H + a * D;
                        for (std::size_t d = 0; d < D; ++d) {
                            dqi[d] += ds * kj[d];
                            dkj[d] += ds * qi[d];
                        }
                    }
                }
            }
        });

        ops::accumulate(d_input, linear_backward(params, p + "attention.query", c.input, dq));
        ops::accumulate(d_input, linear_backward(params, p + "attention.key", c.input, dk));
        ops::accumulate(d_input, linear_backward(params, p + "attention.value", c.input, dv));
        dx = std::move(d_input);
    }

    apply_mask(dx, st.emb_mask);
    Tensor<T> d_emb = norm_backward(params, "encoder.embeddings.norm", st.emb_norm, dx);
    ops::embedding_backward(d_emb, st.batch.ids, params.grad("encoder.embeddings.word"));
    ops::embedding_backward(d_emb, st.positions, params.grad("encoder.embeddings.position"));
    ops::embedding_backward(d_emb, st.batch.segment_ids, params.grad("encoder.embeddings.segment"));
}

// ----------------------------------------------------------------------------
// Heads

template <typename T>
Tensor<T> MlmHeadPass<T>::forward(const ParameterStore<T>& params, const Tensor<T>& rows) {
    rows_ = rows;
    pre_act_ = linear(params, "mlm.transform", rows_);
    norm_ = norm(params, "mlm.norm", ops::gelu(pre_act_));
    return ops::add_bias(ops::matmul(norm_.out, params.value("encoder.embeddings.word"), ops::Transpose::yes),
                         params.value("mlm.output.bias"));
}

template <typename T>
Tensor<T> MlmHeadPass<T>::backward(ParameterStore<T>& params, const Tensor<T>& d_logits) {
    ops::accumulate(params.grad("mlm.output.bias"), ops::add_bias_backward(d_logits));
    auto g = ops::matmul_backward(norm_.out, params.value("encoder.embeddings.word"), d_logits, ops::Transpose::yes);
    ops::accumulate(params.grad("encoder.embeddings.word"), g.b);
    Tensor<T> d_act = norm_backward(params, "mlm.norm", norm_, g.a);
    Tensor<T> d_pre = ops::gelu_backward(pre_act_, d_act);
    return linear_backward(params, "mlm.transform", rows_, d_pre);
}

template <typename T>
Tensor<T> ClassifierHeadPass<T>::forward(const ParameterStore<T>& params, const Tensor<T>& cls_vector) {
    input_ = cls_vector;
    activated_ = ops::tanh(linear(params, "cls.hidden", input_));
    return linear(params, "cls.output", activated_);
}

template <typename T>
Tensor<T> ClassifierHeadPass<T>::backward(ParameterStore<T>& params, const Tensor<T>& d_logits) {
    Tensor<T> d_act = linear_backward(params, "cls.output", activated_, d_logits);
    return linear_backward(params, "cls.hidden", input_, ops::tanh_backward(activated_, d_act));
}

template <typename T>
EncoderOutput<T> encode_batch(const ParameterStore<T>& params, const ModelConfig& config, const EncodedBatch& batch,
                              ForwardOptions options) {
    EncoderPass<T> pass(config, options);
    return pass.forward(params, batch);
}

template <typename T>
Tensor<T> mlm_logits(const ParameterStore<T>& params, const ModelConfig& config, const EncoderOutput<T>& output) {
    Tensor<T> rows = output.hidden_states;
    rows.reshape({output.hidden_states.rows(), config.hidden});
    MlmHeadPass<T> head;
    Tensor<T> logits = head.forward(params, rows);
    Shape shape = output.hidden_states.shape();
    shape.back() = config.vocab_size;
    logits.reshape(shape);
    return logits;
}

template <typename T>
Tensor<T> cls_logits(const ParameterStore<T>& params, const EncoderOutput<T>& output, std::size_t n_classes) {
    const std::size_t head_classes = classifier_classes(params);
    if (head_classes != n_classes) {
        throw Error(ErrorCategory::config, "classifier head has " + std::to_string(head_classes) +
                                               " classes, expected " + std::to_string(n_classes));
    }
    ClassifierHeadPass<T> head;
    return head.forward(params, output.cls_vector);
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

template <typename T>
ObjectiveResult mlm_objective(ParameterStore<T>& params, const ModelConfig& config, const EncodedBatch& batch,
                              std::span<const std::int32_t> labels, ForwardOptions options, bool with_grad) {
    if (labels.size() != batch.ids.size()) {
        throw Error(ErrorCategory::shape, "mlm objective: labels do not match the batch");
    }
    std::vector<std::size_t> positions;
    std::vector<std::int32_t> targets;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != kIgnoreId) {
            positions.push_back(i);
            targets.push_back(labels[i]);
        }
    }
    ObjectiveResult result;
    if (positions.empty()) {
        return result;
    }
    EncoderPass<T> encoder(config, options);
    const EncoderOutput<T> out = encoder.forward(params, batch);
    const std::size_t H = config.hidden;

    // The head is row-wise, so only scored positions need logits.
    Tensor<T> rows({positions.size(), H});
    for (std::size_t r = 0; r < positions.size(); ++r) {
        std::copy_n(out.hidden_states.data() + positions[r] * H, H, rows.data() + r * H);
    }
    MlmHeadPass<T> head;
    const Tensor<T> logits = head.forward(params, rows);
    const auto ce = ops::cross_entropy(logits, targets, kIgnoreId);
    result.loss = ce.loss;
    result.count = ce.count;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (argmax(logits.row(r)) == static_cast<std::size_t>(targets[r])) {
            ++result.correct;
        }
    }
    if (with_grad) {
        const Tensor<T> d_rows = head.backward(params, ops::cross_entropy_backward(ce, targets, kIgnoreId));
        Tensor<T> d_hidden(out.hidden_states.shape());
        for (std::size_t r = 0; r < positions.size(); ++r) {
            std::copy_n(d_rows.data() + r * H, H, d_hidden.data() + positions[r] * H);
        }
        encoder.backward(params, d_hidden);
    }
    return result;
}

template <typename T>
ObjectiveResult classification_objective(ParameterStore<T>& params, const ModelConfig& config,
                                         const EncodedBatch& batch, std::span<const std::int32_t> labels,
                                         ForwardOptions options, bool with_grad) {
    if (labels.size() != batch.batch) {
        throw Error(ErrorCategory::shape, "classification objective: one label per row expected");
    }
    const std::size_t classes = classifier_classes(params);
    if (classes == 0) {
        throw Error(ErrorCategory::config, "classification objective: store has no classifier head");
    }
    EncoderPass<T> encoder(config, options);
    const EncoderOutput<T> out = encoder.forward(params, batch);
    ClassifierHeadPass<T> head;
    const Tensor<T> logits = head.forward(params, out.cls_vector);
    const auto ce = ops::cross_entropy(logits, labels, kIgnoreId);
    ObjectiveResult result{ce.loss, ce.count, 0};
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] != kIgnoreId && argmax(logits.row(r)) == static_cast<std::size_t>(labels[r])) {
            ++result.correct;
        }
    }
    if (with_grad) {
        const Tensor<T> d_cls = head.backward(params, ops::cross_entropy_backward(ce, labels, kIgnoreId));
        const std::size_t S = batch.seq;
        const std::size_t H = config.hidden;
        Tensor<T> d_hidden(out.hidden_states.shape());
        for (std::size_t b = 0; b < batch.batch; ++b) {
            std::copy_n(d_cls.data() + b * H, H, d_hidden.data() + b * S * H);
        }
        encoder.backward(params, d_hidden);
    }
    return result;
}

template <typename T>
std::vector<std::int32_t> predict_classes(const ParameterStore<T>& params, const ModelConfig& config,
                                          const EncodedBatch& batch) {
    const auto out = encode_batch(params, config, batch);
    ClassifierHeadPass<T> head;
    const Tensor<T> logits = head.forward(params, out.cls_vector);
    std::vector<std::int32_t> predictions(batch.batch);
    for (std::size_t r = 0; r < batch.batch; ++r) {
        predictions[r] = static_cast<std::int32_t>(argmax(logits.row(r)));
    }
    return predictions;
}

#define MLMFORGE_INSTANTIATE_ENCODER(T)                                                                        \
    template class EncoderPass<T>;                                                                           \
    template class MlmHeadPass<T>;                                                                           \
    template class ClassifierHeadPass<T>;                                                                    \
    template ParameterStore<T> init_params<T>(const ModelConfig&, std::uint64_t);                           \
    template void add_classification_head<T>(ParameterStore<T>&, const ModelConfig&, std::size_t,            \
                                             std::uint64_t);                                                 \
    template std::size_t classifier_classes<T>(const ParameterStore<T>&);                                    \
    template EncoderOutput<T> encode_batch<T>(const ParameterStore<T>&, const ModelConfig&,                  \
                                              const EncodedBatch&, ForwardOptions);                          \
    template Tensor<T> mlm_logits<T>(const ParameterStore<T>&, const ModelConfig&, const EncoderOutput<T>&); \
    template Tensor<T> cls_logits<T>(const ParameterStore<T>&, const EncoderOutput<T>&, std::size_t);        \
    template std::size_t argmax<T>(std::span<const T>);                                                      \
    template ObjectiveResult mlm_objective<T>(ParameterStore<T>&, const ModelConfig&, const EncodedBatch&,   \
                                              std::span<const std::int32_t>, ForwardOptions, bool);          \
    template ObjectiveResult classification_objective<T>(ParameterStore<T>&, const ModelConfig&,             \
                                                         const EncodedBatch&, std::span<const std::int32_t>, \
                                                         ForwardOptions, bool);                              \
    template std::vector<std::int32_t> predict_classes<T>(const ParameterStore<T>&, const ModelConfig&,      \
                                                          const EncodedBatch&);

MLMFORGE_INSTANTIATE_ENCODER(float)
MLMFORGE_INSTANTIATE_ENCODER(double)

#undef MLMFORGE_INSTANTIATE_ENCODER

}  // namespace mlmforge
