#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mlmforge/tensor.hpp"

// Dense primitives with hand-written backward passes. Each op views its
// inputs as matrices (rows x last dimension) and raises ErrorCategory::shape
// on mismatched operands and ErrorCategory::numeric on non-finite outputs.
namespace mlmforge::ops {

inline constexpr double kLayerNormEps = 1e-12;

enum class Transpose { no, yes };

template <typename T>
void check_finite(std::string_view op, const Tensor<T>& t);

// c = a * b, or a * b^T with Transpose::yes. `a` may have any rank >= 1; the
// result keeps its leading dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Transpose tb = Transpose::no);

template <typename T>
struct MatmulGrads {
    Tensor<T> a;
    Tensor<T> b;
};

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dout,
                               Transpose tb = Transpose::no);

template <typename T>
Tensor<T> add_bias(Tensor<T> x, const Tensor<T>& bias);

// Gradient w.r.t. the bias: column sums of dout. (The input gradient is dout.)
template <typename T>
Tensor<T> add_bias_backward(const Tensor<T>& dout);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy);

template <typename T>
struct LayerNormResult {
    Tensor<T> out;
    Tensor<T> normalized;  // (x - mean) * rstd, before gain and bias
    std::vector<T> rstd;
};

template <typename T>
LayerNormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                              double eps = kLayerNormEps);

template <typename T>
struct LayerNormGrads {
    Tensor<T> x;
    Tensor<T> gain;
    Tensor<T> bias;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const LayerNormResult<T>& forward, const Tensor<T>& gain,
                                      const Tensor<T>& dout);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy);

// Gathers rows of `table` ([rows, width]) for each id; output [ids.size(), width].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids);

// Scatter-adds dout rows into `dtable` at the looked-up ids.
template <typename T>
void embedding_backward(const Tensor<T>& dout, std::span<const std::int32_t> ids, Tensor<T>& dtable);

template <typename T>
struct CrossEntropyResult {
    double loss = 0.0;       // mean over counted rows
    std::size_t count = 0;   // rows whose target != ignore_id
    Tensor<T> probs;         // row softmax of the logits
};

template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                                    std::int32_t ignore_id);

// Rows with target == ignore_id receive exactly zero gradient.
template <typename T>
Tensor<T> cross_entropy_backward(const CrossEntropyResult<T>& forward,
                                 std::span<const std::int32_t> targets, std::int32_t ignore_id);

// dst += src, shapes must match element counts.
template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace mlmforge::ops
