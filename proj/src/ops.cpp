#include "mlmforge/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <type_traits>

#include <Eigen/Core>

#include "mlmforge/parallel.hpp"

namespace mlmforge::ops {
namespace {

// Wider accumulator so that row statistics of constant rows are exact.
template <typename T>
using Acc = std::conditional_t<std::is_same_v<T, float>, double, long double>;

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
    throw Error(ErrorCategory::shape,
                std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

}  // namespace

template <typename T>
void check_finite(std::string_view op, const Tensor<T>& t) {
    for (T v : t.values()) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCategory::numeric, std::string(op) + ": non-finite output");
        }
    }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Transpose tb) {
    if (a.rank() < 1 || b.rank() != 2) {
        shape_error("matmul", a.shape(), b.shape());
    }
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t bk = tb == Transpose::no ? b.dim(0) : b.dim(1);
    const std::size_t n = tb == Transpose::no ? b.dim(1) : b.dim(0);
    if (bk != k) {
        shape_error("matmul", a.shape(), b.shape());
    }
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor<T> out(out_shape);
    const ConstMap<T> am(a.data(), m, k);
    MutMap<T> om(out.data(), m, n);
    if (tb == Transpose::no) {
        om.noalias() = am * ConstMap<T>(b.data(), k, n);
    } else {
        om.noalias() = am * ConstMap<T>(b.data(), n, k).transpose();
    }
    check_finite("matmul", out);
    return out;
}

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dout, Transpose tb) {
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = tb == Transpose::no ? b.dim(1) : b.dim(0);
    if (dout.rows() != m || dout.cols() != n) {
        shape_error("matmul_backward", a.shape(), dout.shape());
    }
    MatmulGrads<T> grads{Tensor<T>(a.shape()), Tensor<T>(b.shape())};
    const ConstMap<T> am(a.data(), m, k);
    const ConstMap<T> dm(dout.data(), m, n);
    MutMap<T> da(grads.a.data(), m, k);
    if (tb == Transpose::no) {
        // da = dout * b^T, db = a^T * dout
        const ConstMap<T> bm(b.data(), k, n);
        da.noalias() = dm * bm.transpose();
        MutMap<T>(grads.b.data(), k, n).noalias() = am.transpose() * dm;
    } else {
        // b is [n, k]: da = dout * b, db = dout^T * a
        const ConstMap<T> bm(b.data(), n, k);
        da.noalias() = dm * bm;
        MutMap<T>(grads.b.data(), n, k).noalias() = dm.transpose() * am;
    }
    return grads;
}

template <typename T>
Tensor<T> add_bias(Tensor<T> x, const Tensor<T>& bias) {
    if (bias.size() != x.cols()) {
        shape_error("add_bias", x.shape(), bias.shape());
    }
    const std::size_t cols = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        T* row = x.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            row[c] += bias[c];
        }
    }
    check_finite("add_bias", x);
    return x;
}

template <typename T>
Tensor<T> add_bias_backward(const Tensor<T>& dout) {
    const std::size_t cols = dout.cols();
    Tensor<T> db({cols});
    for (std::size_t r = 0; r < dout.rows(); ++r) {
        const T* row = dout.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            db[c] += row[c];
        }
    }
    return db;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    const std::size_t cols = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const T* in = x.data() + r * cols;
        T* out = y.data() + r * cols;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            mx = std::max(mx, in[c]);
        }
        Acc<T> sum = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] = std::exp(in[c] - mx);
            sum += out[c];
        }
        const T inv = static_cast<T>(Acc<T>{1} / sum);
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] *= inv;
        }
    }
    check_finite("softmax", y);
    return y;
}

template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    if (y.shape() != dy.shape()) {
        shape_error("softmax_backward", y.shape(), dy.shape());
    }
    Tensor<T> dx(y.shape());
    const std::size_t cols = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
        const T* yr = y.data() + r * cols;
        const T* gr = dy.data() + r * cols;
        T* out = dx.data() + r * cols;
        Acc<T> dot = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            dot += static_cast<Acc<T>>(yr[c]) * gr[c];
        }
        const T d = static_cast<T>(dot);
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] = yr[c] * (gr[c] - d);
        }
    }
    return dx;
}

template <typename T>
LayerNormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
    if (eps <= 0.0) {
        throw Error(ErrorCategory::config, "layer_norm: eps must be positive");
    }
    const std::size_t cols = x.cols();
    if (gain.size() != cols || bias.size() != cols) {
        shape_error("layer_norm", x.shape(), gain.shape());
    }
    LayerNormResult<T> res{Tensor<T>(x.shape()), Tensor<T>(x.shape()), std::vector<T>(x.rows())};
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const T* in = x.data() + r * cols;
        Acc<T> sum = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            sum += in[c];
        }
        const Acc<T> mean = sum / static_cast<Acc<T>>(cols);
        Acc<T> var = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const Acc<T> d = in[c] - mean;
            var += d * d;
        }
        var /= static_cast<Acc<T>>(cols);
        const Acc<T> rstd = Acc<T>{1} / std::sqrt(var + static_cast<Acc<T>>(eps));
        res.rstd[r] = static_cast<T>(rstd);
        T* nrm = res.normalized.data() + r * cols;
        T* out = res.out.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            nrm[c] = static_cast<T>((in[c] - mean) * rstd);
            out[c] = nrm[c] * gain[c] + bias[c];
        }
    }
    check_finite("layer_norm", res.out);
    return res;
}

template <typename T>
LayerNormGrads<T> layer_norm_backward(const LayerNormResult<T>& fwd, const Tensor<T>& gain, const Tensor<T>& dout) {
    const std::size_t cols = dout.cols();
    if (fwd.out.shape() != dout.shape()) {
        shape_error("layer_norm_backward", fwd.out.shape(), dout.shape());
    }
    LayerNormGrads<T> g{Tensor<T>(dout.shape()), Tensor<T>({cols}), Tensor<T>({cols})};
    std::vector<T> dn(cols);
    for (std::size_t r = 0; r < dout.rows(); ++r) {
        const T* dy = dout.data() + r * cols;
        const T* nrm = fwd.normalized.data() + r * cols;
        Acc<T> mean_dn = 0;
        Acc<T> mean_dn_n = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            dn[c] = dy[c] * gain[c];
            mean_dn += dn[c];
            mean_dn_n += static_cast<Acc<T>>(dn[c]) * nrm[c];
            g.gain[c] += dy[c] * nrm[c];
            g.bias[c] += dy[c];
        }
        mean_dn /= static_cast<Acc<T>>(cols);
        mean_dn_n /= static_cast<Acc<T>>(cols);
        T* dx = g.x.data() + r * cols;
        const Acc<T> rstd = fwd.rstd[r];
        for (std::size_t c = 0; c < cols; ++c) {
            dx[c] = static_cast<T>(rstd * (dn[c] - mean_dn - nrm[c] * mean_dn_n));
        }
    }
    return g;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = T{0.5} * x[i] * (T{1} + std::erf(x[i] * inv_sqrt2));
    }
    check_finite("gelu", y);
    return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    if (x.shape() != dy.shape()) {
        shape_error("gelu_backward", x.shape(), dy.shape());
    }
    Tensor<T> dx(x.shape());
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
        dx[i] = dy[i] * (cdf + v * pdf);
    }
    return dx;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = std::tanh(x[i]);
    }
    check_finite("tanh", y);
    return y;
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy) {
    if (y.shape() != dy.shape()) {
        shape_error("tanh_backward", y.shape(), dy.shape());
    }
    Tensor<T> dx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        dx[i] = dy[i] * (T{1} - y[i] * y[i]);
    }
    return dx;
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids) {
    if (table.rank() != 2) {
        shape_error("embedding_lookup", table.shape(), {ids.size()});
    }
    const std::size_t width = table.cols();
    Tensor<T> out({ids.size(), width});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
            throw Error(ErrorCategory::data, "embedding_lookup: id " + std::to_string(id) +
                                                 " outside table of " + std::to_string(table.rows()) + " rows");
        }
        std::copy_n(table.data() + static_cast<std::size_t>(id) * width, width, out.data() + i * width);
    }
    return out;
}

template <typename T>
void embedding_backward(const Tensor<T>& dout, std::span<const std::int32_t> ids, Tensor<T>& dtable) {
    const std::size_t width = dtable.cols();
    if (dout.rows() != ids.size() || dout.cols() != width) {
        shape_error("embedding_backward", dout.shape(), dtable.shape());
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        T* dst = dtable.data() + static_cast<std::size_t>(ids[i]) * width;
        const T* src = dout.data() + i * width;
        for (std::size_t c = 0; c < width; ++c) {
            dst[c] += src[c];
        }
    }
}

template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                                    std::int32_t ignore_id) {
    if (logits.rows() != targets.size()) {
        shape_error("cross_entropy", logits.shape(), {targets.size()});
    }
    CrossEntropyResult<T> res;
    res.probs = softmax_rows(logits);
    const std::size_t cols = logits.cols();
    double total = 0.0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const auto t = targets[r];
        if (t == ignore_id) {
            continue;
        }
        if (t < 0 || static_cast<std::size_t>(t) >= cols) {
            throw Error(ErrorCategory::data, "cross_entropy: target " + std::to_string(t) + " outside " +
                                                 std::to_string(cols) + " classes");
        }
        // log-sum-exp evaluated directly from the logits for accuracy
        const T* row = logits.data() + r * cols;
        double mx = row[0];
        for (std::size_t c = 1; c < cols; ++c) {
            mx = std::max(mx, static_cast<double>(row[c]));
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            sum += std::exp(static_cast<double>(row[c]) - mx);
        }
        total += mx + std::log(sum) - static_cast<double>(row[t]);
        ++res.count;
    }
    res.loss = res.count == 0 ? 0.0 : total / static_cast<double>(res.count);
    if (!std::isfinite(res.loss)) {
        throw Error(ErrorCategory::numeric, "cross_entropy: non-finite output");
    }
    return res;
}

template <typename T>
Tensor<T> cross_entropy_backward(const CrossEntropyResult<T>& fwd, std::span<const std::int32_t> targets,
                                 std::int32_t ignore_id) {
    Tensor<T> d(fwd.probs.shape());
    if (fwd.count == 0) {
        return d;
    }
    const std::size_t cols = fwd.probs.cols();
    const T scale = static_cast<T>(1.0 / static_cast<double>(fwd.count));
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] == ignore_id) {
            continue;
        }
        const T* p = fwd.probs.data() + r * cols;
        T* out = d.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] = p[c] * scale;
        }
        out[targets[r]] -= scale;
    }
    return d;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.size() != src.size()) {
        shape_error("accumulate", dst.shape(), src.shape());
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        shape_error("add", a.shape(), b.shape());
    }
    Tensor<T> out = a;
    accumulate(out, b);
    check_finite("add", out);
    return out;
}

#define MLMFORGE_INSTANTIATE_OPS(T)                                                                       \
    template void check_finite<T>(std::string_view, const Tensor<T>&);                                  \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, Transpose);                         \
    template MatmulGrads<T> matmul_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                               Transpose);                                               \
    template Tensor<T> add_bias<T>(Tensor<T>, const Tensor<T>&);                                        \
    template Tensor<T> add_bias_backward<T>(const Tensor<T>&);                                          \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                               \
    template Tensor<T> softmax_rows_backward<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template LayerNormResult<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                              double);                                                  \
    template LayerNormGrads<T> layer_norm_backward<T>(const LayerNormResult<T>&, const Tensor<T>&,      \
                                                      const Tensor<T>&);                                \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                                       \
    template Tensor<T> gelu_backward<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> tanh<T>(const Tensor<T>&);                                                       \
    template Tensor<T> tanh_backward<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> embedding_lookup<T>(const Tensor<T>&, std::span<const std::int32_t>);            \
    template void embedding_backward<T>(const Tensor<T>&, std::span<const std::int32_t>, Tensor<T>&);   \
    template CrossEntropyResult<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::int32_t>,    \
                                                    std::int32_t);                                      \
    template Tensor<T> cross_entropy_backward<T>(const CrossEntropyResult<T>&,                          \
                                                 std::span<const std::int32_t>, std::int32_t);          \
    template void accumulate<T>(Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);

MLMFORGE_INSTANTIATE_OPS(float)
MLMFORGE_INSTANTIATE_OPS(double)

#undef MLMFORGE_INSTANTIATE_OPS

}  // namespace mlmforge::ops
