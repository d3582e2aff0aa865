#pragma once

#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "ddlab/errors.hpp"
#include "ddlab/ops.hpp"
#include "ddlab/text_pipeline.hpp"
#include "ddlab/transformer.hpp"

namespace ddlab {

inline constexpr double kLn2 = std::numbers::ln2;

// Exact bits per token under teacher forcing. `loss` is the mean negative
// log-likelihood in nats over the scored tokens and carries the tape.
template <typename T>
struct ArLossReport {
    Tensor<T> loss;
    double bpt = 0;
    std::size_t token_count = 0;
    double nats_total = 0;
};

// Scores logits[rows*len x V] against the rows of `batch`: the logits at
// position l predict token l+1, so each row contributes len-1 predictions
// and the first token is not scored.
template <typename T>
ArLossReport<T> ar_bpt_from_logits(const Tensor<T>& logits, const Batch& batch) {
    if (batch.cols < 2) throw ContractError("autoregressive scoring needs sequences of at least two tokens");
    if (logits.rank() != 2 || logits.dim(0) != batch.rows * batch.cols)
        throw DimensionError("logits " + shape_str(logits.shape()) + " do not match a " + std::to_string(batch.rows) + "x" +
                             std::to_string(batch.cols) + " batch");
    const std::size_t n = batch.cols;
    std::vector<std::int32_t> targets(batch.tokens.size(), 0);
    std::vector<T> weights(batch.tokens.size(), T(0));
    const std::size_t scored = batch.rows * (n - 1);
    for (std::size_t b = 0; b < batch.rows; ++b)
        for (std::size_t l = 0; l + 1 < n; ++l) {
            targets[b * n + l] = batch.tokens[b * n + l + 1];
            weights[b * n + l] = T(1) / static_cast<T>(scored);
        }
    auto nll = nll_rows(logits, targets);
    ArLossReport<T> r;
    r.loss = weighted_sum(nll, std::span<const T>(weights));
    r.token_count = scored;
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (weights[i] != T(0)) r.nats_total += static_cast<double>(nll[i]);
    r.bpt = r.nats_total / (static_cast<double>(scored) * kLn2);
    return r;
}

template <typename T>
ArLossReport<T> ar_bpt(const Batch& batch, const ModelConfig& config, const ModelWeights<T>& weights) {
    if (!config.causal) throw ContractError("ar_bpt requires a causal model");
    auto logits = forward(std::span<const std::int32_t>(batch.tokens), batch.rows, config, weights);
    return ar_bpt_from_logits(logits, batch);
}

}  // namespace ddlab
