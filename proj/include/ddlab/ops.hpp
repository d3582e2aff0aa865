#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddlab/tensor.hpp"

namespace ddlab {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.size() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void accumulate(TensorNode<T>& dst, std::span<const T> g) {
    auto& grad = dst.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

template <typename T>
T gelu_inner_scale() {
    return static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a.shape(), 2, "matmul");
    detail::require_rank(b.shape(), 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<T> out(m * n);
    detail::MapMat<T>(out.data(), m, n).noalias() =
        detail::CMapMat<T>(a.data().data(), m, k) * detail::CMapMat<T>(b.data().data(), k, n);
    return Tensor<T>::from_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& self) {
        auto& A = *self.inputs[0];
        auto& B = *self.inputs[1];
        detail::CMapMat<T> g(self.grad.data(), m, n);
        if (A.requires_grad)
            detail::MapMat<T>(A.ensure_grad().data(), m, k).noalias() += g * detail::CMapMat<T>(B.data.data(), k, n).transpose();
        if (B.requires_grad)
            detail::MapMat<T>(B.ensure_grad().data(), k, n).noalias() += detail::CMapMat<T>(A.data.data(), m, k).transpose() * g;
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_rank(a.shape(), 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(m * n);
    detail::MapMat<T>(out.data(), n, m) = detail::CMapMat<T>(a.data().data(), m, n).transpose();
    return Tensor<T>::from_op({n, m}, std::move(out), {a}, [m, n](TensorNode<T>& self) {
        auto& A = *self.inputs[0];
        detail::MapMat<T>(A.ensure_grad().data(), m, n) += detail::CMapMat<T>(self.grad.data(), n, m).transpose();
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return Tensor<T>::from_op(std::move(shape), std::move(out), {a}, [](TensorNode<T>& self) {
        detail::accumulate<T>(*self.inputs[0], self.grad);
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same(a.shape(), b.shape(), "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
        for (auto& in : self.inputs)
            if (in->requires_grad) detail::accumulate<T>(*in, self.grad);
    });
}

// x[..., n] + bias[n], broadcast along every leading axis.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    detail::require_rank(bias.shape(), 1, "add_bias");
    const std::size_t n = bias.dim(0);
    if (x.shape().back() != n)
        throw DimensionError("add_bias: trailing extent of " + shape_str(x.shape()) + " differs from bias " +
                             shape_str(bias.shape()));
    const std::size_t rows = x.size() / n;
    std::vector<T> out(x.data().begin(), x.data().end());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias[j];
    return Tensor<T>::from_op(x.shape(), std::move(out), {x, bias}, [rows, n](TensorNode<T>& self) {
        auto& X = *self.inputs[0];
        auto& Bn = *self.inputs[1];
        if (X.requires_grad) detail::accumulate<T>(X, self.grad);
        if (Bn.requires_grad) {
            auto& gb = Bn.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[r * n + j];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
        auto& A = *self.inputs[0];
        auto& B = *self.inputs[1];
        if (A.requires_grad) {
            auto& g = A.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.data[i];
        }
        if (B.requires_grad) {
            auto& g = B.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.data[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [s](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

// Multiplies row r of x[m x n] by the constant mask[r].
template <typename T>
Tensor<T> mul_rows(const Tensor<T>& x, std::span<const T> mask) {
    detail::require_rank(x.shape(), 2, "mul_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (mask.size() != m)
        throw DimensionError("mul_rows: " + std::to_string(mask.size()) + " mask entries for " + shape_str(x.shape()));
    std::vector<T> w(mask.begin(), mask.end());
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] * w[r];
    return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [w = std::move(w), n](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * w[i / n];
    });
}

// tanh approximation of GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T c = detail::gelu_inner_scale<T>();
    const T a = T(0.044715);
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [c, a](TensorNode<T>& self) {
        auto& X = *self.inputs[0];
        auto& g = X.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = X.data[i];
            const T th = std::tanh(c * (v + a * v * v * v));
            const T dinner = c * (T(1) + T(3) * a * v * v);
            g[i] += self.grad[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * dinner);
        }
    });
}

// Normalizes each row of x[m x n] to zero mean and unit variance, then
// applies the learnable scale gamma[n] and shift beta[n].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    detail::require_rank(x.shape(), 2, "layer_norm");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
        throw DimensionError("layer_norm: scale/shift " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                             " do not match " + shape_str(x.shape()));
    std::vector<T> out(x.size()), xhat(x.size()), rstd(m);
    for (std::size_t r = 0; r < m; ++r) {
        const T* row = x.data().data() + r * n;
        T mean = 0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= T(n);
        T var = 0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= T(n);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (row[j] - mean) * rstd[r];
            out[r * n + j] = xhat[r * n + j] * gamma[j] + beta[j];
        }
    }
    return Tensor<T>::from_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](TensorNode<T>& self) {
            auto& X = *self.inputs[0];
            auto& G = *self.inputs[1];
            auto& B = *self.inputs[2];
            const auto& gy = self.grad;
            if (G.requires_grad || B.requires_grad) {
                auto& gg = G.ensure_grad();
                auto& gb = B.ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t j = 0; j < n; ++j) {
                        gg[j] += gy[r * n + j] * xhat[r * n + j];
                        gb[j] += gy[r * n + j];
                    }
            }
            if (X.requires_grad) {
                auto& gx = X.ensure_grad();
                for (std::size_t r = 0; r < m; ++r) {
                    T sum_g = 0, sum_gx = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gh = gy[r * n + j] * G.data[j];
                        sum_g += gh;
                        sum_gx += gh * xhat[r * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gh = gy[r * n + j] * G.data[j];
                        gx[r * n + j] += rstd[r] * (gh - sum_g / T(n) - xhat[r * n + j] * sum_gx / T(n));
                    }
                }
            }
        });
}

// Gathers rows of table[V x d] for each id.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
    detail::require_rank(table.shape(), 2, "embedding");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    std::vector<T> out(idx.size() * d);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab)
            throw IndexError("embedding: token id " + std::to_string(idx[i]) + " outside table of " +
                             std::to_string(vocab) + " rows");
        std::copy_n(table.data().data() + idx[i] * d, d, out.data() + i * d);
    }
    const std::size_t rows = idx.size();
    return Tensor<T>::from_op({rows, d}, std::move(out), {table}, [idx = std::move(idx), d](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
    });
}

// Sub-block rows [r0, r1) x columns [c0, c1) of a matrix.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    detail::require_rank(x.shape(), 2, "slice");
    const std::size_t n = x.dim(1);
    if (r0 >= r1 || c0 >= c1 || r1 > x.dim(0) || c1 > n)
        throw DimensionError("slice: block [" + std::to_string(r0) + "," + std::to_string(r1) + ")x[" +
                             std::to_string(c0) + "," + std::to_string(c1) + ") outside " + shape_str(x.shape()));
    const std::size_t h = r1 - r0, w = c1 - c0;
    std::vector<T> out(h * w);
    for (std::size_t r = 0; r < h; ++r)
        std::copy_n(x.data().data() + (r0 + r) * n + c0, w, out.data() + r * w);
    return Tensor<T>::from_op({h, w}, std::move(out), {x}, [r0, c0, h, w, n](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t j = 0; j < w; ++j) g[(r0 + r) * n + c0 + j] += self.grad[r * w + j];
    });
}

// Joins matrices along axis 0 (rows) or axis 1 (columns).
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
    for (const auto& p : parts) detail::require_rank(p.shape(), 2, "concat");
    const std::size_t other = 1 - axis;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.dim(other) != parts[0].dim(other))
            throw DimensionError("concat: " + shape_str(p.shape()) + " does not line up with " +
                                 shape_str(parts[0].shape()));
        total += p.dim(axis);
    }
    Shape shape = parts[0].shape();
    shape[axis] = total;
    const std::size_t rows = shape[0], cols = shape[1];
    std::vector<T> out(rows * cols);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t h = p.dim(0), w = p.dim(1);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t rr = axis == 0 ? off + r : r;
                const std::size_t cc = axis == 0 ? j : off + j;
                out[rr * cols + cc] = p[r * w + j];
            }
        off += p.dim(axis);
    }
    return Tensor<T>::from_op(shape, std::move(out), parts, [axis, cols, offsets](TensorNode<T>& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            auto& in = *self.inputs[k];
            if (!in.requires_grad) continue;
            auto& g = in.ensure_grad();
            const std::size_t h = in.shape[0], w = in.shape[1];
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t j = 0; j < w; ++j) {
                    const std::size_t rr = axis == 0 ? offsets[k] + r : r;
                    const std::size_t cc = axis == 0 ? j : offsets[k] + j;
                    g[r * w + j] += self.grad[rr * cols + cc];
                }
        }
    });
}

// Repeats each row of x[b x d] `times` times consecutively -> [b*times x d].
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times) {
    detail::require_rank(x.shape(), 2, "repeat_rows");
    const std::size_t b = x.dim(0), d = x.dim(1);
    std::vector<T> out(b * times * d);
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t k = 0; k < times; ++k) std::copy_n(x.data().data() + r * d, d, out.data() + (r * times + k) * d);
    return Tensor<T>::from_op({b * times, d}, std::move(out), {x}, [b, d, times](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t k = 0; k < times; ++k)
                for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[(r * times + k) * d + j];
    });
}

// Row-wise softmax. With `causal`, entry (i, j) for j > i is excluded
// (treated as -inf before normalization).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal = false) {
    detail::require_rank(x.shape(), 2, "softmax_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(x.size(), T(0));
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t limit = causal ? std::min(n, r + 1) : n;
        const T* row = x.data().data() + r * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, row[j]);
        T z = 0;
        for (std::size_t j = 0; j < limit; ++j) z += (out[r * n + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < limit; ++j) out[r * n + j] /= z;
    }
    auto y = out;
    return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [m, n, y = std::move(y)](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < m; ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[r * n + j] * (self.grad[r * n + j] - dot);
        }
    });
}

// Rotary position embedding applied to x[rows x width], where width is a
// whole number of heads of size head_dim and row r sits at positions[r].
// Pairs (2i, 2i+1) inside each head rotate by positions[r] * base^(-2i/head_dim).
template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::size_t head_dim, std::span<const std::int32_t> positions, double base = 10000.0) {
    detail::require_rank(x.shape(), 2, "rope");
    if (head_dim == 0 || head_dim % 2 != 0)
        throw ConfigError("rope: head dimension must be even, got " + std::to_string(head_dim));
    const std::size_t rows = x.dim(0), width = x.dim(1);
    if (width % head_dim != 0)
        throw DimensionError("rope: width " + std::to_string(width) + " is not a multiple of head dim " +
                             std::to_string(head_dim));
    if (positions.size() != rows)
        throw DimensionError("rope: " + std::to_string(positions.size()) + " positions for " + shape_str(x.shape()));
    const std::size_t half = head_dim / 2;
    std::vector<T> cs(rows * half), sn(rows * half);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < half; ++i) {
            const double angle = positions[r] * std::pow(base, -2.0 * double(i) / double(head_dim));
            cs[r * half + i] = static_cast<T>(std::cos(angle));
            sn[r * half + i] = static_cast<T>(std::sin(angle));
        }
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; c += 2) {
            const std::size_t i = (c % head_dim) / 2;
            const T a = x[r * width + c], b = x[r * width + c + 1];
            const T co = cs[r * half + i], si = sn[r * half + i];
            out[r * width + c] = a * co - b * si;
            out[r * width + c + 1] = a * si + b * co;
        }
    return Tensor<T>::from_op(
        x.shape(), std::move(out), {x},
        [rows, width, head_dim, half, cs = std::move(cs), sn = std::move(sn)](TensorNode<T>& self) {
            auto& g = self.inputs[0]->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < width; c += 2) {
                    const std::size_t i = (c % head_dim) / 2;
                    const T ga = self.grad[r * width + c], gb = self.grad[r * width + c + 1];
                    const T co = cs[r * half + i], si = sn[r * half + i];
                    g[r * width + c] += ga * co + gb * si;
                    g[r * width + c + 1] += -ga * si + gb * co;
                }
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (auto v : x.data()) s += v;
    return Tensor<T>::from_op({1}, {s}, {x}, [](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

// Sum of x[i] * w[i] for constant weights w.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights) {
    if (weights.size() != x.size())
        throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " + shape_str(x.shape()));
    std::vector<T> w(weights.begin(), weights.end());
    T s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += x[i] * w[i];
    return Tensor<T>::from_op({1}, {s}, {x}, [w = std::move(w)](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
    });
}

// Per-row negative log-likelihood -log softmax(logits[r])[targets[r]] as a
// vector of length m. Row-max subtraction keeps the log-sum-exp stable.
template <typename T>
Tensor<T> nll_rows(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
    detail::require_rank(logits.shape(), 2, "nll_rows");
    const std::size_t m = logits.dim(0), k = logits.dim(1);
    if (targets.size() != m)
        throw DimensionError("nll_rows: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_str(logits.shape()));
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::vector<T> out(m), lse(m);
    for (std::size_t r = 0; r < m; ++r) {
        if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= k)
            throw IndexError("nll_rows: target " + std::to_string(tgt[r]) + " outside [0," + std::to_string(k) + ")");
        const T* row = logits.data().data() + r * k;
        const T mx = *std::max_element(row, row + k);
        T z = 0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        lse[r] = mx + std::log(z);
        out[r] = lse[r] - row[tgt[r]];
    }
    return Tensor<T>::from_op({m}, std::move(out), {logits},
                              [m, k, tgt = std::move(tgt), lse = std::move(lse)](TensorNode<T>& self) {
                                  auto& L = *self.inputs[0];
                                  auto& g = L.ensure_grad();
                                  for (std::size_t r = 0; r < m; ++r) {
                                      const T gr = self.grad[r];
                                      if (gr == T(0)) continue;
                                      const T* row = L.data.data() + r * k;
                                      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += gr * std::exp(row[j] - lse[r]);
                                      g[r * k + tgt[r]] -= gr;
                                  }
                              });
}

// Weighted mean cross-entropy (nats), sum(w * nll) / sum(w). An empty
// `weights` means every row counts once; all-zero weights yield 0.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                                std::span<const T> weights = {}) {
    auto nll = nll_rows(logits, targets);
    const std::size_t m = nll.size();
    std::vector<T> w(m, T(1));
    if (!weights.empty()) {
        if (weights.size() != m)
            throw DimensionError("softmax_cross_entropy: " + std::to_string(weights.size()) + " weights for " +
                                 std::to_string(m) + " rows");
        w.assign(weights.begin(), weights.end());
    }
    T total = 0;
    for (auto v : w) total += v;
    if (total == T(0)) std::fill(w.begin(), w.end(), T(0));
    else
        for (auto& v : w) v /= total;
    return weighted_sum(nll, std::span<const T>(w));
}

}  // namespace ddlab
