#pragma once

// Absorbing-state discrete diffusion: the masking forward process, its exact
// one-step posterior, the x0-parameterized reverse step and Monte-Carlo
// estimates of the variational bound on -log p(x0).

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "ddlab/ar_objective.hpp"
#include "ddlab/errors.hpp"
#include "ddlab/ops.hpp"
#include "ddlab/rng.hpp"
#include "ddlab/text_pipeline.hpp"
#include "ddlab/transformer.hpp"

namespace ddlab {

// beta[t] = 1 / (T - t + 1) for t in [1, T]; survival[t] is the cumulative
// product of (1 - beta[s]) for s <= t, with survival[0] = 1.
class DiffusionSchedule {
   public:
    DiffusionSchedule(std::int32_t steps, TokenId mask_id) : steps_(steps), mask_id_(mask_id) {
        if (steps < 1) throw ConfigError("diffusion needs at least one step");
        beta_.assign(steps + 1, 0.0);
        survival_.assign(steps + 1, 1.0);
        for (std::int32_t t = 1; t <= steps; ++t) {
            beta_[t] = 1.0 / static_cast<double>(steps - t + 1);
            survival_[t] = survival_[t - 1] * (1.0 - beta_[t]);
        }
    }

    std::int32_t steps() const { return steps_; }
    TokenId mask_id() const { return mask_id_; }
    double beta(std::int32_t t) const { return beta_.at(check(t, 1)); }
    double survival(std::int32_t t) const { return survival_.at(check(t, 0)); }
    // Marginal probability that a clean token is masked after t steps.
    double mask_prob(std::int32_t t) const { return 1.0 - survival(t); }

    // q(x^{t-1} = x0 | x^t = mask, x0): Bayes' rule over one forward step.
    double unmask_posterior(std::int32_t t) const {
        if (t < 1 || t > steps_) throw IndexError("timestep " + std::to_string(t) + " outside [1, T]");
        return survival(t - 1) * beta(t) / mask_prob(t);
    }

   private:
    std::int32_t check(std::int32_t t, std::int32_t lo) const {
        if (t < lo || t > steps_)
            throw IndexError("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                             std::to_string(steps_) + "]");
        return t;
    }

    std::int32_t steps_;
    TokenId mask_id_;
    std::vector<double> beta_;
    std::vector<double> survival_;
};

struct CorruptedBatch {
    Batch x0;
    std::vector<std::int32_t> t;  // one timestep per row
    std::vector<TokenId> xt;
    std::vector<std::uint8_t> masked;
};

// Masks each token of row b independently with probability t[b] / T, the
// closed-form marginal of t forward steps.
inline CorruptedBatch corrupt(const Batch& x0, std::span<const std::int32_t> t, const DiffusionSchedule& schedule, Rng& rng) {
    if (t.size() != x0.rows) throw DimensionError("corrupt: need one timestep per row");
    CorruptedBatch c{x0, {t.begin(), t.end()}, x0.tokens, std::vector<std::uint8_t>(x0.tokens.size(), 0)};
    for (std::size_t b = 0; b < x0.rows; ++b) {
        const double p = schedule.mask_prob(t[b]);
        for (std::size_t l = 0; l < x0.cols; ++l) {
            const std::size_t i = b * x0.cols + l;
            if (uniform01(rng) < p) {
                c.xt[i] = schedule.mask_id();
                c.masked[i] = 1;
            }
        }
    }
    return c;
}

// Two-point posterior over {x0_token, mask}: {P(x0), P(mask)}. At t=1 this is
// the point mass on x0.
inline std::array<double, 2> posterior(TokenId x0_token, TokenId xt_token, std::int32_t t, const DiffusionSchedule& schedule) {
    if (t < 1 || t > schedule.steps()) throw ContractError("posterior needs 1 <= t <= T, got t=" + std::to_string(t));
    if (xt_token == x0_token) {
        if (schedule.survival(t) == 0.0) throw ContractError("no token survives unmasked to t=" + std::to_string(t));
        return {1.0, 0.0};
    }
    if (xt_token != schedule.mask_id())
        throw ContractError("x^t=" + std::to_string(xt_token) + " is reachable from neither x0=" + std::to_string(x0_token) +
                            " nor the mask");
    if (t == 1) return {1.0, 0.0};  // exact; the ratio form rounds past 1
    const double a = schedule.unmask_posterior(t);
    return {a, 1.0 - a};
}

// p_theta(x^{t-1} | x^t) over K = V + 1 categories (mask last) for a single
// position, mixing exact posteriors by the softmax of the clean-token logits.
template <typename T>
std::vector<double> reverse_distribution(std::span<const T> x0_logits, TokenId xt_token, std::int32_t t,
                                         const DiffusionSchedule& schedule) {
    if (t < 2 || t > schedule.steps()) throw ContractError("reverse step needs 2 <= t <= T");
    const std::size_t vocab = x0_logits.size();
    std::vector<double> p(vocab + 1, 0.0);
    if (xt_token != schedule.mask_id()) {
        p.at(static_cast<std::size_t>(xt_token)) = 1.0;
        return p;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (auto v : x0_logits) mx = std::max(mx, static_cast<double>(v));
    double z = 0;
    for (std::size_t v = 0; v < vocab; ++v) z += (p[v] = std::exp(static_cast<double>(x0_logits[v]) - mx));
    const double a = schedule.unmask_posterior(t);
    for (std::size_t v = 0; v < vocab; ++v) p[v] = a * p[v] / z;
    p[vocab] = 1.0 - a;
    return p;
}

// KL(q || p) over a shared support, with 0 log 0 = 0.
inline double kl_divergence(std::span<const double> q, std::span<const double> p) {
    double kl = 0;
    for (std::size_t i = 0; i < q.size(); ++i)
        if (q[i] > 0) kl += q[i] * (std::log(q[i]) - std::log(p[i]));
    return kl;
}

// One Monte-Carlo sample of the bound per row, in bits per token.
// reconstruction_term collects rows that drew t = 1, kl_term the rest;
// `loss` is the same estimate in nats per token, on the tape.
template <typename T>
struct ElboReport {
    Tensor<T> loss;
    double bound_bits_per_token = 0;
    double reconstruction_term = 0;
    double kl_term = 0;
    double ce_aux_term = 0;  // mean clean-token cross-entropy on masked positions, nats
    std::size_t masked_count = 0;
    std::vector<std::int32_t> t_sampled;
};

namespace detail {

// Bound estimate from per-position clean-token NLL (nats) of a corrupted batch.
template <typename T>
ElboReport<T> elbo_from_nll(const Tensor<T>& nll, const CorruptedBatch& c, const DiffusionSchedule& schedule) {
    const std::size_t rows = c.x0.rows, n = c.x0.cols, total = rows * n;
    std::vector<T> weights(total, T(0));
    std::vector<double> row_weight(rows);
    for (std::size_t b = 0; b < rows; ++b) {
        row_weight[b] = static_cast<double>(schedule.steps()) * schedule.unmask_posterior(c.t[b]) / static_cast<double>(total);
        for (std::size_t l = 0; l < n; ++l)
            if (c.masked[b * n + l]) weights[b * n + l] = static_cast<T>(row_weight[b]);
    }
    ElboReport<T> r;
    r.loss = weighted_sum(nll, std::span<const T>(weights));
    r.t_sampled = c.t;
    double ce_sum = 0;
    for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t l = 0; l < n; ++l) {
            const std::size_t i = b * n + l;
            if (!c.masked[i]) continue;
            const double v = static_cast<double>(nll[i]);
            const double term = row_weight[b] * v / kLn2;
            (c.t[b] == 1 ? r.reconstruction_term : r.kl_term) += term;
            ce_sum += v;
            ++r.masked_count;
        }
    r.bound_bits_per_token = r.reconstruction_term + r.kl_term;
    r.ce_aux_term = r.masked_count ? ce_sum / static_cast<double>(r.masked_count) : 0.0;
    return r;
}

template <typename T>
Tensor<T> clean_token_nll(const Tensor<T>& logits, const CorruptedBatch& c) {
    const std::size_t total = c.x0.rows * c.x0.cols;
    if (logits.rank() != 2 || logits.dim(0) != total)
        throw DimensionError("elbo: logits " + shape_str(logits.shape()) + " do not match the batch");
    return nll_rows(logits, std::span<const std::int32_t>(c.x0.tokens));
}

}  // namespace detail

// Given clean-token logits for a corrupted batch: with carry-over only masked
// positions cost anything, and there KL(q || p_theta) collapses to
// P(unmask | t) * (-log softmax(logits)[x0]). Each row's sum is scaled by T
// so that a uniformly drawn t gives an unbiased estimate of the full sum.
template <typename T>
ElboReport<T> elbo_from_logits(const Tensor<T>& logits, const CorruptedBatch& c, const DiffusionSchedule& schedule) {
    return detail::elbo_from_nll(detail::clean_token_nll(logits, c), c, schedule);
}

// Maps (x^t tokens, rows, timesteps) to clean-token logits [rows*n x V].
template <typename T>
using Denoiser = std::function<Tensor<T>(std::span<const TokenId>, std::size_t, std::span<const std::int32_t>)>;

template <typename T>
Denoiser<T> model_denoiser(const ModelConfig& config, const ModelWeights<T>& weights, const DiffusionSchedule& schedule) {
    if (config.causal || !config.timestep_conditioning)
        throw ContractError("diffusion objective needs a non-causal, timestep-conditioned model");
    if (static_cast<std::size_t>(schedule.mask_id()) != config.mask_id())
        throw ContractError("schedule mask id does not match the model vocabulary");
    return [&config, &weights, steps = schedule.steps()](std::span<const TokenId> xt, std::size_t rows,
                                                        std::span<const std::int32_t> t) {
        return forward(xt, rows, config, weights, t, steps);
    };
}

inline std::vector<std::int32_t> sample_timesteps(std::size_t rows, const DiffusionSchedule& schedule, Rng& rng) {
    std::vector<std::int32_t> t(rows);
    for (auto& v : t) v = 1 + static_cast<std::int32_t>(uniform_index(rng, static_cast<std::uint64_t>(schedule.steps())));
    return t;
}

// Draws t ~ Uniform{1..T} per row, corrupts, denoises and scores.
template <typename T>
ElboReport<T> elbo_mc(const Batch& x0, const Denoiser<T>& denoise, const DiffusionSchedule& schedule, Rng& rng) {
    auto t = sample_timesteps(x0.rows, schedule, rng);
    auto c = corrupt(x0, t, schedule, rng);
    auto logits = denoise(c.xt, x0.rows, c.t);
    return elbo_from_logits(logits, c, schedule);
}

template <typename T>
ElboReport<T> elbo_mc(const Batch& x0, const ModelConfig& config, const ModelWeights<T>& weights,
                      const DiffusionSchedule& schedule, Rng& rng) {
    return elbo_mc<T>(x0, model_denoiser(config, weights, schedule), schedule, rng);
}

// Bound (nats/token) plus ce_weight times the clean-token cross-entropy
// summed over masked positions and divided by all B*L positions, both from a
// single denoiser pass.
template <typename T>
struct HybridReport {
    Tensor<T> loss;
    ElboReport<T> elbo;
};

template <typename T>
HybridReport<T> hybrid_from_logits(const Tensor<T>& logits, const CorruptedBatch& c, const DiffusionSchedule& schedule,
                                   double ce_weight) {
    if (ce_weight < 0) throw ContractError("ce_weight must be non-negative");
    auto nll = detail::clean_token_nll(logits, c);
    HybridReport<T> h{{}, detail::elbo_from_nll(nll, c, schedule)};
    if (ce_weight == 0 || h.elbo.masked_count == 0) {
        h.loss = h.elbo.loss;
        return h;
    }
    std::vector<T> w(c.masked.size(), T(0));
    const T each = static_cast<T>(ce_weight / static_cast<double>(c.masked.size()));
    for (std::size_t i = 0; i < w.size(); ++i)
        if (c.masked[i]) w[i] = each;
    h.loss = add(h.elbo.loss, weighted_sum(nll, std::span<const T>(w)));
    return h;
}

template <typename T>
HybridReport<T> hybrid_loss(const Batch& x0, const Denoiser<T>& denoise, const DiffusionSchedule& schedule, double ce_weight,
                            Rng& rng) {
    auto t = sample_timesteps(x0.rows, schedule, rng);
    auto c = corrupt(x0, t, schedule, rng);
    return hybrid_from_logits(denoise(c.xt, x0.rows, c.t), c, schedule, ce_weight);
}

template <typename T>
HybridReport<T> hybrid_loss(const Batch& x0, const ModelConfig& config, const ModelWeights<T>& weights,
                            const DiffusionSchedule& schedule, double ce_weight, Rng& rng) {
    return hybrid_loss<T>(x0, model_denoiser(config, weights, schedule), schedule, ce_weight, rng);
}

struct BoundEstimate {
    double mean_bits_per_token = 0;
    double stderr_bits = 0;
    std::size_t batches = 0;
};

// Mean and standard error of the bound over n_batches freshly drawn
// validation batches, each with fresh timesteps and corruption.
template <typename T>
BoundEstimate validate_bound(const Denoiser<T>& denoise, const TokenStore& store, const DiffusionSchedule& schedule,
                             std::size_t seq_len, std::size_t batch_size, std::size_t n_batches, Rng& rng) {
    if (store.validation.empty()) throw ContractError("validation split is empty");
    if (n_batches == 0) throw ContractError("need at least one validation batch");
    NoGradGuard no_grad;
    WindowSampler sampler(store, Split::kValidation, seq_len, Sampling::kWithReplacement);
    std::vector<double> values;
    values.reserve(n_batches);
    for (std::size_t i = 0; i < n_batches; ++i) {
        auto batch = sampler.sample_batch(batch_size, rng);
        values.push_back(elbo_mc<T>(batch, denoise, schedule, rng).bound_bits_per_token);
    }
    BoundEstimate e;
    e.batches = n_batches;
    for (auto v : values) e.mean_bits_per_token += v;
    e.mean_bits_per_token /= static_cast<double>(n_batches);
    if (n_batches > 1) {
        double ss = 0;
        for (auto v : values) ss += (v - e.mean_bits_per_token) * (v - e.mean_bits_per_token);
        e.stderr_bits = std::sqrt(ss / static_cast<double>(n_batches - 1) / static_cast<double>(n_batches));
    }
    return e;
}

}  // namespace ddlab
