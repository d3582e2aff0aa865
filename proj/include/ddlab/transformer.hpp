#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddlab/errors.hpp"
#include "ddlab/ops.hpp"
#include "ddlab/rng.hpp"
#include "ddlab/tensor.hpp"

namespace ddlab {

enum class NormPlacement { kPost, kPre };

struct ModelConfig {
    std::size_t n_layers = 12;
    std::size_t n_heads = 12;
    std::size_t embed_dim = 768;
    std::size_t seq_len = 512;
    std::size_t vocab_size = 50257;
    bool causal = true;
    bool timestep_conditioning = false;
    std::size_t cond_embed_dim = 128;
    NormPlacement norm_placement = NormPlacement::kPost;
    std::size_t ffn_mult = 4;

    std::size_t head_dim() const { return embed_dim / n_heads; }
    // Rows of the input embedding table: a non-causal denoiser also embeds
    // the mask token, which sits at index vocab_size.
    std::size_t input_vocab() const { return vocab_size + (causal ? 0 : 1); }
    std::size_t mask_id() const { return vocab_size; }

    void validate() const {
        if (n_layers == 0 || n_heads == 0 || embed_dim == 0 || seq_len == 0 || vocab_size == 0 || ffn_mult == 0)
            throw ConfigError("model extents must be positive");
        if (embed_dim % n_heads != 0)
            throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by n_heads " +
                              std::to_string(n_heads));
        if (head_dim() % 2 != 0) throw ConfigError("head dimension " + std::to_string(head_dim()) + " must be even for RoPE");
        if (timestep_conditioning && (cond_embed_dim == 0 || cond_embed_dim % 2 != 0))
            throw ConfigError("cond_embed_dim must be a positive even number");
    }
};

// Trainable parameter count, summed per component.
inline std::size_t param_count(const ModelConfig& c) {
    const std::size_t d = c.embed_dim, f = c.ffn_mult * d;
    std::size_t block = (d * 3 * d + 3 * d)  // fused q/k/v projection
                        + (d * d + d)        // attention output
                        + (d * f + f)        // feed-forward in
                        + (f * d + d)        // feed-forward out
                        + 2 * (2 * d);       // two layer norms
    std::size_t total = c.input_vocab() * d + c.n_layers * block + d * c.vocab_size;
    if (c.norm_placement == NormPlacement::kPre) total += 2 * d;
    if (c.timestep_conditioning) total += c.cond_embed_dim * d + d + d * d + d;
    return total;
}

template <typename T>
struct LayerWeights {
    Tensor<T> qkv_w, qkv_b, out_w, out_b;
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
    Tensor<T> ln2_g, ln2_b;
};

template <typename T>
struct ModelWeights {
    Tensor<T> token_embedding;
    std::vector<LayerWeights<T>> layers;
    Tensor<T> final_ln_g, final_ln_b;  // pre-norm only
    Tensor<T> head_w;
    Tensor<T> time_w1, time_b1, time_w2, time_b2;  // timestep conditioning only

    // Visits every defined parameter in a fixed order with a stable name.
    template <typename F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <typename F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    std::size_t count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
        return n;
    }

   private:
    template <typename Self, typename F>
    static void visit(Self& self, F& f) {
        f("tok_emb", self.token_embedding);
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            auto& L = self.layers[l];
            const std::string p = "h" + std::to_string(l) + ".";
            f(p + "attn.qkv.w", L.qkv_w);
            f(p + "attn.qkv.b", L.qkv_b);
            f(p + "attn.out.w", L.out_w);
            f(p + "attn.out.b", L.out_b);
            f(p + "ln1.g", L.ln1_g);
            f(p + "ln1.b", L.ln1_b);
            f(p + "ffn.in.w", L.ffn_in_w);
            f(p + "ffn.in.b", L.ffn_in_b);
            f(p + "ffn.out.w", L.ffn_out_w);
            f(p + "ffn.out.b", L.ffn_out_b);
            f(p + "ln2.g", L.ln2_g);
            f(p + "ln2.b", L.ln2_b);
        }
        if (self.final_ln_g.defined()) {
            f("ln_f.g", self.final_ln_g);
            f("ln_f.b", self.final_ln_b);
        }
        f("head.w", self.head_w);
        if (self.time_w1.defined()) {
            f("time.w1", self.time_w1);
            f("time.b1", self.time_b1);
            f("time.w2", self.time_w2);
            f("time.b2", self.time_b2);
        }
    }
};

namespace detail {

inline double standard_normal(Rng& rng) {
    double u1;
    do u1 = uniform01(rng);
    while (u1 <= 0.0);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

// normal(0, std) for matrices and embeddings, zeros for biases and shifts,
// ones for norm scales.
template <typename T>
ModelWeights<T> init_weights(const ModelConfig& c, Rng& rng, double std = 0.02) {
    c.validate();
    const std::size_t d = c.embed_dim, f = c.ffn_mult * d;
    auto normal = [&](Shape s) {
        Tensor<T> t(std::move(s), true);
        for (auto& v : t.data()) v = static_cast<T>(std * detail::standard_normal(rng));
        return t;
    };
    auto filled = [](Shape s, T v) {
        Tensor<T> t(std::move(s), true);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    };
    ModelWeights<T> w;
    w.token_embedding = normal({c.input_vocab(), d});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        LayerWeights<T> L;
        L.qkv_w = normal({d, 3 * d});
        L.qkv_b = filled({3 * d}, T(0));
        L.out_w = normal({d, d});
        L.out_b = filled({d}, T(0));
        L.ln1_g = filled({d}, T(1));
        L.ln1_b = filled({d}, T(0));
        L.ffn_in_w = normal({d, f});
        L.ffn_in_b = filled({f}, T(0));
        L.ffn_out_w = normal({f, d});
        L.ffn_out_b = filled({d}, T(0));
        L.ln2_g = filled({d}, T(1));
        L.ln2_b = filled({d}, T(0));
        w.layers.push_back(std::move(L));
    }
    if (c.norm_placement == NormPlacement::kPre) {
        w.final_ln_g = filled({d}, T(1));
        w.final_ln_b = filled({d}, T(0));
    }
    w.head_w = normal({d, c.vocab_size});
    if (c.timestep_conditioning) {
        w.time_w1 = normal({c.cond_embed_dim, d});
        w.time_b1 = filled({d}, T(0));
        w.time_w2 = normal({d, d});
        w.time_b2 = filled({d}, T(0));
    }
    return w;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_bias(matmul(x, w), b);
}

// Sinusoidal features of integer timesteps: [cos(t f_i), sin(t f_i)] with
// f_i = 10000^(-i / (dim/2)). Returns [timesteps x dim].
template <typename T>
Tensor<T> timestep_features(std::span<const std::int32_t> timesteps, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<T> out(timesteps.size() * dim);
    for (std::size_t r = 0; r < timesteps.size(); ++r)
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
            const double a = timesteps[r] * freq;
            out[r * dim + i] = static_cast<T>(std::cos(a));
            out[r * dim + half + i] = static_cast<T>(std::sin(a));
        }
    return Tensor<T>({timesteps.size(), dim}, std::move(out));
}

// Two-layer GELU MLP over sinusoidal features; one row of width d per timestep.
template <typename T>
Tensor<T> timestep_embedding(std::span<const std::int32_t> timesteps, std::int32_t max_timestep, const ModelConfig& c,
                             const ModelWeights<T>& w) {
    if (!c.timestep_conditioning || !w.time_w1.defined()) throw ContractError("model has no timestep conditioning");
    for (auto t : timesteps)
        if (t < 1 || t > max_timestep)
            throw ContractError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(max_timestep) + "]");
    auto feats = timestep_features<T>(timesteps, c.cond_embed_dim);
    return linear(gelu(linear(feats, w.time_w1, w.time_b1)), w.time_w2, w.time_b2);
}

// Multi-head self-attention over `batch` sequences stacked as rows of
// x[batch*n x d]. Queries and keys are rotated by RoPE; causal mode masks
// strictly-future keys.
template <typename T>
Tensor<T> attention(const Tensor<T>& x, std::size_t batch, const LayerWeights<T>& w, const ModelConfig& c) {
    const std::size_t rows = x.dim(0), d = c.embed_dim, dh = c.head_dim();
    if (batch == 0 || rows % batch != 0) throw DimensionError("attention: rows do not split into the batch");
    const std::size_t n = rows / batch;
    if (n > c.seq_len) throw DimensionError("attention: sequence of " + std::to_string(n) + " exceeds seq_len");
    std::vector<std::int32_t> positions(rows);
    for (std::size_t r = 0; r < rows; ++r) positions[r] = static_cast<std::int32_t>(r % n);

    auto qkv = linear(x, w.qkv_w, w.qkv_b);
    auto q = rope(slice(qkv, 0, rows, 0, d), dh, positions);
    auto k = rope(slice(qkv, 0, rows, d, 2 * d), dh, positions);
    auto v = slice(qkv, 0, rows, 2 * d, 3 * d);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    std::vector<Tensor<T>> seqs;
    seqs.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<Tensor<T>> heads;
        heads.reserve(c.n_heads);
        for (std::size_t h = 0; h < c.n_heads; ++h) {
            auto qh = slice(q, b * n, (b + 1) * n, h * dh, (h + 1) * dh);
            auto kh = slice(k, b * n, (b + 1) * n, h * dh, (h + 1) * dh);
            auto vh = slice(v, b * n, (b + 1) * n, h * dh, (h + 1) * dh);
            auto probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), c.causal);
            heads.push_back(matmul(probs, vh));
        }
        seqs.push_back(c.n_heads == 1 ? heads[0] : concat(heads, 1));
    }
    auto merged = batch == 1 ? seqs[0] : concat(seqs, 0);
    return linear(merged, w.out_w, w.out_b);
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const LayerWeights<T>& w) {
    return linear(gelu(linear(x, w.ffn_in_w, w.ffn_in_b)), w.ffn_out_w, w.ffn_out_b);
}

// Logits [batch*n x vocab] for token ids [batch x n] (row-major). Diffusion
// denoisers pass one timestep per sequence.
template <typename T>
Tensor<T> forward(std::span<const std::int32_t> tokens, std::size_t batch, const ModelConfig& c, const ModelWeights<T>& w,
                  std::optional<std::span<const std::int32_t>> timesteps = std::nullopt, std::int32_t max_timestep = 0) {
    if (batch == 0 || tokens.size() % batch != 0) throw DimensionError("forward: token count does not split into the batch");
    const std::size_t n = tokens.size() / batch;
    for (auto id : tokens)
        if (id < 0 || static_cast<std::size_t>(id) >= c.input_vocab())
            throw IndexError("token id " + std::to_string(id) + " outside the input vocabulary of " +
                             std::to_string(c.input_vocab()));

    auto x = embedding(w.token_embedding, tokens);
    if (c.timestep_conditioning) {
        if (!timesteps || timesteps->size() != batch)
            throw ContractError("timestep-conditioned model needs one timestep per sequence");
        x = add(x, repeat_rows(timestep_embedding(*timesteps, max_timestep, c, w), n));
    }
    for (const auto& L : w.layers) {
        if (c.norm_placement == NormPlacement::kPost) {
            x = layer_norm(add(x, attention(x, batch, L, c)), L.ln1_g, L.ln1_b);
            x = layer_norm(add(x, feed_forward(x, L)), L.ln2_g, L.ln2_b);
        } else {
            x = add(x, attention(layer_norm(x, L.ln1_g, L.ln1_b), batch, L, c));
            x = add(x, feed_forward(layer_norm(x, L.ln2_g, L.ln2_b), L));
        }
    }
    if (c.norm_placement == NormPlacement::kPre) x = layer_norm(x, w.final_ln_g, w.final_ln_b);
    return matmul(x, w.head_w);
}

}  // namespace ddlab
