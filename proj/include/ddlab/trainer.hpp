#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ddlab/ar_objective.hpp"
#include "ddlab/checkpoint.hpp"
#include "ddlab/diffusion.hpp"
#include "ddlab/kv_config.hpp"
#include "ddlab/metrics.hpp"
#include "ddlab/rng.hpp"
#include "ddlab/text_pipeline.hpp"
#include "ddlab/transformer.hpp"

namespace ddlab {

struct RunConfig {
    ModelKind kind = ModelKind::kAutoregressive;
    ModelConfig model;
    double lr = 6e-4;
    double weight_decay = 0.1;
    std::size_t batch_size = 12;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    std::size_t eval_batches = 100;
    std::size_t eval_batch_size = 0;  // 0: same as batch_size
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::int32_t diffusion_steps = 1000;
    double ce_weight = 0.05;
    double grad_clip = 0;  // global-norm clipping, 0 disables
    std::string run_id;

    // Table defaults for each model family.
    static RunConfig defaults(ModelKind kind) {
        RunConfig c;
        c.kind = kind;
        c.batch_size = kind == ModelKind::kAutoregressive ? 12 : 8;
        c.model.causal = kind == ModelKind::kAutoregressive;
        c.model.timestep_conditioning = kind == ModelKind::kDiffusion;
        return c;
    }

    std::size_t effective_eval_batch() const { return eval_batch_size ? eval_batch_size : batch_size; }

    std::string default_run_id() const {
        return to_string(kind) + "-d" + std::to_string(model.embed_dim) + "-s" + std::to_string(seed);
    }

    // Reads every recognised key; unknown keys are left for the caller to reject.
    static RunConfig from_kv(const KeyValues& kv) {
        auto c = defaults(parse_model_kind(kv.get("model_kind", "ar")));
        auto& m = c.model;
        m.n_layers = kv.number("n_layers", m.n_layers);
        m.n_heads = kv.number("n_heads", m.n_heads);
        m.embed_dim = kv.number("embed_dim", m.embed_dim);
        m.seq_len = kv.number("seq_len", m.seq_len);
        m.vocab_size = kv.number("vocab_size", m.vocab_size);
        m.cond_embed_dim = kv.number("cond_embed_dim", m.cond_embed_dim);
        m.ffn_mult = kv.number("ffn_mult", m.ffn_mult);
        const auto norm = kv.get("norm_placement", "post");
        if (norm != "post" && norm != "pre") throw ConfigError("norm_placement must be post or pre");
        m.norm_placement = norm == "pre" ? NormPlacement::kPre : NormPlacement::kPost;
        c.lr = kv.number("lr", c.lr);
        c.weight_decay = kv.number("weight_decay", c.weight_decay);
        c.batch_size = kv.number("batch_size", c.batch_size);
        c.epochs = kv.number("epochs", c.epochs);
        c.seed = kv.number("seed", c.seed);
        c.eval_batches = kv.number("eval_batches", c.eval_batches);
        c.eval_batch_size = kv.number("eval_batch_size", c.eval_batch_size);
        c.adam_beta1 = kv.number("adam_beta1", c.adam_beta1);
        c.adam_beta2 = kv.number("adam_beta2", c.adam_beta2);
        c.adam_eps = kv.number("adam_eps", c.adam_eps);
        c.diffusion_steps = kv.number("diffusion_steps", c.diffusion_steps);
        c.ce_weight = kv.number("ce_weight", c.ce_weight);
        c.grad_clip = kv.number("grad_clip", c.grad_clip);
        c.run_id = kv.get("run_id", "");
        if (c.run_id.empty()) c.run_id = c.default_run_id();
        return c;
    }

    KeyValues to_kv() const {
        KeyValues kv;
        kv.set("model_kind", to_string(kind));
        kv.set("n_layers", std::to_string(model.n_layers));
        kv.set("n_heads", std::to_string(model.n_heads));
        kv.set("embed_dim", std::to_string(model.embed_dim));
        kv.set("seq_len", std::to_string(model.seq_len));
        kv.set("vocab_size", std::to_string(model.vocab_size));
        kv.set("cond_embed_dim", std::to_string(model.cond_embed_dim));
        kv.set("ffn_mult", std::to_string(model.ffn_mult));
        kv.set("norm_placement", model.norm_placement == NormPlacement::kPre ? "pre" : "post");
        kv.set("lr", format_double(lr));
        kv.set("weight_decay", format_double(weight_decay));
        kv.set("batch_size", std::to_string(batch_size));
        kv.set("epochs", std::to_string(epochs));
        kv.set("seed", std::to_string(seed));
        kv.set("eval_batches", std::to_string(eval_batches));
        kv.set("eval_batch_size", std::to_string(eval_batch_size));
        kv.set("adam_beta1", format_double(adam_beta1));
        kv.set("adam_beta2", format_double(adam_beta2));
        kv.set("adam_eps", format_double(adam_eps));
        kv.set("diffusion_steps", std::to_string(diffusion_steps));
        kv.set("ce_weight", format_double(ce_weight));
        kv.set("grad_clip", format_double(grad_clip));
        kv.set("run_id", run_id.empty() ? default_run_id() : run_id);
        return kv;
    }

    void validate() const {
        model.validate();
        if (model.causal != (kind == ModelKind::kAutoregressive))
            throw ConfigError("autoregressive runs need causal attention and diffusion runs non-causal");
        if (kind == ModelKind::kDiffusion && !model.timestep_conditioning)
            throw ConfigError("diffusion runs need timestep conditioning");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (lr <= 0) throw ConfigError("lr must be positive");
        if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
        if (diffusion_steps < 1) throw ConfigError("diffusion_steps must be at least 1");
        if (ce_weight < 0) throw ConfigError("ce_weight must be non-negative");
    }
};

struct AdamHyper {
    double lr = 6e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One AdamW update of a single parameter block at optimizer step `step`
// (1-based). Weight decay is decoupled: w <- w - lr * wd * w, applied before
// the bias-corrected Adam step and only when `decay` is set.
template <typename T>
void adamw_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v, std::size_t step,
                  const AdamHyper& h, bool decay = true) {
    if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size())
        throw DimensionError("adamw: weight, gradient and moment sizes differ");
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
    const double shrink = decay ? 1.0 - h.lr * h.weight_decay : 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
        const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) * shrink - h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
}

// AdamW over every parameter of a model. Matrices and embeddings decay;
// biases and norm parameters do not.
template <typename T>
class AdamW {
   public:
    explicit AdamW(AdamHyper hyper, double grad_clip = 0) : hyper_(hyper), grad_clip_(grad_clip) {}

    const AdamHyper& hyper() const { return hyper_; }
    std::size_t steps() const { return steps_; }
    void set_steps(std::size_t s) { steps_ = s; }

    std::map<std::string, std::vector<T>>& first_moments() { return m_; }
    std::map<std::string, std::vector<T>>& second_moments() { return v_; }
    const std::map<std::string, std::vector<T>>& first_moments() const { return m_; }
    const std::map<std::string, std::vector<T>>& second_moments() const { return v_; }

    void step(ModelWeights<T>& weights) {
        double norm_sq = 0;
        weights.for_each([&](const std::string& name, Tensor<T>& p) {
            if (!p.has_grad()) return;
            for (auto gv : p.grad()) {
                if (!std::isfinite(static_cast<double>(gv)))
                    throw std::runtime_error("non-finite gradient in parameter " + name);
                norm_sq += static_cast<double>(gv) * static_cast<double>(gv);
            }
        });
        const double clip = (grad_clip_ > 0 && std::sqrt(norm_sq) > grad_clip_) ? grad_clip_ / std::sqrt(norm_sq) : 1.0;
        ++steps_;
        weights.for_each([&](const std::string& name, Tensor<T>& p) {
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.empty()) m.assign(p.size(), T(0));
            if (v.empty()) v.assign(p.size(), T(0));
            std::vector<T> g(p.size(), T(0));
            if (p.has_grad())
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<T>(p.grad()[i] * clip);
            adamw_update<T>(p.data(), g, m, v, steps_, hyper_, p.rank() >= 2);
            p.zero_grad();
        });
    }

   private:
    AdamHyper hyper_;
    double grad_clip_;
    std::size_t steps_ = 0;
    std::map<std::string, std::vector<T>> m_, v_;
};

template <typename T>
struct RunState {
    ModelWeights<T> weights;
    AdamW<T> optimizer;
    std::size_t epoch = 0;  // completed epochs
    double best_test_bpt = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    double wall_seconds = 0;
};

template <typename T>
RunState<T> make_state(const RunConfig& cfg) {
    cfg.validate();
    auto rng = stream(cfg.seed, StreamTag::kInit);
    AdamHyper h{cfg.lr, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    return RunState<T>{init_weights<T>(cfg.model, rng), AdamW<T>(h, cfg.grad_clip)};
}

inline DiffusionSchedule schedule_for(const RunConfig& cfg) {
    return DiffusionSchedule(cfg.diffusion_steps, static_cast<TokenId>(cfg.model.mask_id()));
}

inline std::size_t steps_per_epoch(std::size_t sequences, std::size_t batch_size) {
    return (sequences + batch_size - 1) / batch_size;
}

namespace detail {

inline MetricRow base_row(const RunConfig& cfg, std::size_t epoch, const char* split) {
    MetricRow r;
    r.run_id = cfg.run_id.empty() ? cfg.default_run_id() : cfg.run_id;
    r.model_kind = cfg.kind;
    r.embed_dim = cfg.model.embed_dim;
    r.param_count = param_count(cfg.model);
    r.epoch = epoch;
    r.split = split;
    r.seed = cfg.seed;
    return r;
}

}  // namespace detail

struct EpochStats {
    std::size_t steps = 0;
    double objective_bits = 0;  // mean optimized loss in bits; hybrid for diffusion
};

// One pass of floor(train_tokens / seq_len) sequences: without replacement
// for the autoregressive model, with replacement for diffusion. Returns the
// token-weighted mean training loss in bits per token (the bound estimate
// for diffusion) and advances state.epoch.
template <typename T>
MetricRow train_epoch(RunState<T>& state, const TokenStore& store, const RunConfig& cfg,
                      EpochStats* stats = nullptr) {
    const bool ar = cfg.kind == ModelKind::kAutoregressive;
    const std::size_t epoch = state.epoch + 1;
    WindowSampler sampler(store, Split::kTrain, cfg.model.seq_len, ar ? Sampling::kWithoutReplacement : Sampling::kWithReplacement);
    auto order_rng = stream(cfg.seed, StreamTag::kTrainOrder, {epoch});
    const auto batches = chunk_batches(sampler.epoch_starts(order_rng), cfg.batch_size);
    const auto schedule = schedule_for(cfg);

    double weighted = 0, weight = 0, objective = 0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
        auto batch = sampler.gather(batches[i]);
        Tensor<T> loss;
        double bits = 0;
        if (ar) {
            auto r = ar_bpt(batch, cfg.model, state.weights);
            loss = r.loss;
            bits = r.bpt;
        } else {
            auto noise = stream(cfg.seed, StreamTag::kTrainNoise, {epoch, i});
            auto h = hybrid_loss<T>(batch, cfg.model, state.weights, schedule, cfg.ce_weight, noise);
            loss = h.loss;
            bits = h.elbo.bound_bits_per_token;
        }
        if (!std::isfinite(static_cast<double>(loss.item())))
            throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(i));
        backward(loss);
        state.optimizer.step(state.weights);
        objective += static_cast<double>(loss.item()) / kLn2 * static_cast<double>(batch.rows);
        weighted += bits * static_cast<double>(batch.rows);
        weight += static_cast<double>(batch.rows);
    }
    if (stats) {
        stats->steps += batches.size();
        stats->objective_bits = weight > 0 ? objective / weight : 0.0;
    }
    state.epoch = epoch;
    auto row = detail::base_row(cfg, epoch, "train");
    row.bpt = weight > 0 ? weighted / weight : 0.0;
    return row;
}

// Test-split metric at the current epoch: an exact pass over the aligned
// validation windows for the autoregressive model, and the averaged bound
// estimate (with its standard error) for diffusion. The evaluation stream
// depends only on the run seed.
template <typename T>
MetricRow evaluate(const RunState<T>& state, const TokenStore& store, const RunConfig& cfg) {
    NoGradGuard no_grad;
    auto row = detail::base_row(cfg, state.epoch, "test");
    if (cfg.kind == ModelKind::kAutoregressive) {
        WindowSampler sampler(store, Split::kValidation, cfg.model.seq_len, Sampling::kWithoutReplacement);
        double nats = 0;
        std::size_t tokens = 0;
        for (const auto& starts : chunk_batches(sampler.ordered_starts(), cfg.effective_eval_batch())) {
            auto r = ar_bpt(sampler.gather(starts), cfg.model, state.weights);
            nats += r.nats_total;
            tokens += r.token_count;
        }
        row.bpt = nats / (static_cast<double>(tokens) * kLn2);
    } else {
        auto rng = stream(cfg.seed, StreamTag::kEval);
        const auto schedule = schedule_for(cfg);
        auto est = validate_bound<T>(model_denoiser(cfg.model, state.weights, schedule), store, schedule, cfg.model.seq_len,
                                     cfg.effective_eval_batch(), cfg.eval_batches, rng);
        row.bpt = est.mean_bits_per_token;
        row.stderr_bits = est.stderr_bits;
    }
    return row;
}

// ---------------------------------------------------------------------------
// Run directories: config.txt, metrics.csv, ckpt_last, ckpt_best, state.txt
// and a `done` marker once every epoch has been recorded.

template <typename T>
std::vector<NamedArray> weight_records(const ModelWeights<T>& w) {
    std::vector<NamedArray> out;
    w.for_each([&](const std::string& name, const Tensor<T>& t) { out.push_back(to_record(name, t)); });
    return out;
}

template <typename T>
void load_weight_records(ModelWeights<T>& w, const std::vector<NamedArray>& records) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    w.for_each([&](const std::string& name, Tensor<T>& t) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ParseError("checkpoint lacks parameter " + name);
        if (it->second->shape != t.shape())
            throw DimensionError("checkpoint parameter " + name + " has shape " + shape_str(it->second->shape) +
                                 ", model expects " + shape_str(t.shape()));
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(it->second->values[i]);
    });
}

template <typename T>
void save_weights(const std::filesystem::path& path, const ModelWeights<T>& w) {
    write_checkpoint(path.string(), weight_records(w));
}

namespace detail {

inline void atomic_replace(const std::filesystem::path& tmp, const std::filesystem::path& dst) {
    std::filesystem::rename(tmp, dst);
}

template <typename T>
void save_run_state(const std::filesystem::path& dir, const RunState<T>& s) {
    auto records = weight_records(s.weights);
    for (const auto& [name, m] : s.optimizer.first_moments()) records.push_back(to_record("adam.m." + name, {m.size()}, m));
    for (const auto& [name, v] : s.optimizer.second_moments()) records.push_back(to_record("adam.v." + name, {v.size()}, v));
    write_checkpoint((dir / "ckpt_last.tmp").string(), records);
    atomic_replace(dir / "ckpt_last.tmp", dir / "ckpt_last");

    KeyValues kv;
    kv.set("epoch", std::to_string(s.epoch));
    kv.set("optimizer_steps", std::to_string(s.optimizer.steps()));
    kv.set("best_test_bpt", format_double(s.best_test_bpt));
    kv.set("best_epoch", std::to_string(s.best_epoch));
    kv.set("wall_seconds", format_double(s.wall_seconds));
    {
        std::ofstream os(dir / "state.txt.tmp", std::ios::trunc);
        os << kv.str();
        if (!os) throw std::runtime_error("cannot write run state in " + dir.string());
    }
    atomic_replace(dir / "state.txt.tmp", dir / "state.txt");
}

template <typename T>
void load_run_state(const std::filesystem::path& dir, RunState<T>& s) {
    auto records = read_checkpoint((dir / "ckpt_last").string());
    load_weight_records(s.weights, records);
    for (const auto& r : records) {
        std::vector<T> vals(r.values.begin(), r.values.end());
        if (r.name.rfind("adam.m.", 0) == 0) s.optimizer.first_moments()[r.name.substr(7)] = std::move(vals);
        else if (r.name.rfind("adam.v.", 0) == 0) s.optimizer.second_moments()[r.name.substr(7)] = std::move(vals);
    }
    auto kv = KeyValues::load(dir / "state.txt");
    s.epoch = kv.number<std::size_t>("epoch", 0);
    s.optimizer.set_steps(kv.number<std::size_t>("optimizer_steps", 0));
    s.best_test_bpt = std::stod(kv.require("best_test_bpt"));
    s.best_epoch = kv.number<std::size_t>("best_epoch", 0);
    s.wall_seconds = std::stod(kv.get("wall_seconds", "0"));
}

}  // namespace detail

struct RunOptions {
    bool resume = false;
    // Stop after this many completed epochs (simulates an interruption).
    std::optional<std::size_t> stop_after_epoch;
    std::function<void(const MetricRow&)> on_row;
};

struct RunResult {
    std::vector<MetricRow> rows;  // the full trace in run_dir/metrics.csv
    std::size_t steps_performed = 0;
    std::size_t best_epoch = 0;
    double best_test_bpt = 0;
    bool complete = false;
};

inline bool run_complete(const std::filesystem::path& dir) { return std::filesystem::exists(dir / "done"); }

// Trains for cfg.epochs epochs, recording a test row at initialization and a
// train/test pair per epoch. The best test epoch is tracked and its weights
// saved to ckpt_best; training itself never halts early.
template <typename T = float>
RunResult run(const RunConfig& cfg_in, const TokenStore& store, const std::filesystem::path& dir, const RunOptions& opt = {}) {
    RunConfig cfg = cfg_in;
    if (cfg.run_id.empty()) cfg.run_id = cfg.default_run_id();
    if (cfg.model.vocab_size != store.vocab_size)
        throw ConfigError("model vocab_size " + std::to_string(cfg.model.vocab_size) + " differs from the token store's " +
                          std::to_string(store.vocab_size));
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto config_text = cfg.to_kv().str();
    const auto metrics_path = dir / "metrics.csv";
    const auto started = std::chrono::steady_clock::now();

    RunResult result;
    auto state = make_state<T>(cfg);
    const bool resuming = opt.resume && fs::exists(dir / "state.txt") && fs::exists(dir / "ckpt_last");
    if (resuming) {
        const auto existing = read_file(dir / "config.txt");
        if (existing != config_text) throw ConfigError("run directory " + dir.string() + " was created with a different config");
        detail::load_run_state(dir, state);
        std::vector<MetricRow> kept;
        for (auto& r : read_metrics_csv(metrics_path))
            if (r.epoch <= state.epoch) kept.push_back(std::move(r));
        write_metrics_csv(metrics_path, kept);
        result.rows = std::move(kept);
    } else {
        fs::remove(dir / "done");
        std::ofstream(dir / "config.txt", std::ios::trunc) << config_text;
        write_metrics_csv(metrics_path, {});
        auto row = evaluate(state, store, cfg);
        row.wall_seconds = 0;
        state.best_test_bpt = row.bpt;
        state.best_epoch = 0;
        append_metrics_csv(metrics_path, {row});
        if (opt.on_row) opt.on_row(row);
        result.rows.push_back(row);
        save_weights(dir / "ckpt_best", state.weights);
        detail::save_run_state(dir, state);
    }

    const double wall_base = state.wall_seconds;
    auto elapsed = [&] {
        return wall_base + std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    };
    while (state.epoch < cfg.epochs) {
        if (opt.stop_after_epoch && state.epoch >= *opt.stop_after_epoch) break;
        EpochStats stats;
        auto train = train_epoch(state, store, cfg, &stats);
        result.steps_performed += stats.steps;
        train.wall_seconds = elapsed();
        auto test = evaluate(state, store, cfg);
        test.wall_seconds = elapsed();
        append_metrics_csv(metrics_path, {train, test});
        for (const auto* r : {&train, &test}) {
            if (opt.on_row) opt.on_row(*r);
            result.rows.push_back(*r);
        }
        if (test.bpt < state.best_test_bpt) {
            state.best_test_bpt = test.bpt;
            state.best_epoch = state.epoch;
            save_weights(dir / "ckpt_best", state.weights);
        }
        state.wall_seconds = elapsed();
        detail::save_run_state(dir, state);
    }
    result.best_epoch = state.best_epoch;
    result.best_test_bpt = state.best_test_bpt;
    result.complete = state.epoch >= cfg.epochs;
    if (result.complete) std::ofstream(dir / "done") << "epochs = " << state.epoch << "\n";
    return result;
}

}  // namespace ddlab
