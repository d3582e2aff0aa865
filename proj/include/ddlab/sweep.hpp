#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ddlab/kv_config.hpp"
#include "ddlab/metrics.hpp"
#include "ddlab/text_pipeline.hpp"
#include "ddlab/trainer.hpp"

namespace ddlab {

// Default root for relative store and output paths.
inline std::filesystem::path data_root() {
    if (const char* env = std::getenv("DDLAB_DATA_DIR"); env && *env) return env;
    return std::filesystem::current_path();
}

inline std::filesystem::path resolve_data_path(const std::filesystem::path& p) {
    return p.is_absolute() ? p : data_root() / p;
}

struct SweepCell {
    ModelKind kind;
    std::size_t embed_dim;
    std::uint64_t seed;
    RunConfig config;
    std::filesystem::path dir;
};

struct SweepGrid {
    std::filesystem::path store;
    std::filesystem::path out_dir;
    std::vector<ModelKind> model_kinds;
    std::vector<std::size_t> embed_dims;
    std::vector<std::uint64_t> seeds;
    std::size_t max_parallel = 1;
    // Run keys shared by every cell; model_kind, embed_dim, seed and run_id
    // are filled in per cell.
    KeyValues base;

    static SweepGrid from_kv(const KeyValues& kv) {
        SweepGrid g;
        g.store = resolve_data_path(kv.require("store"));
        g.out_dir = resolve_data_path(kv.require("out_dir"));
        for (const auto& k : kv.strings("model_kinds", {"ar", "diffusion"})) g.model_kinds.push_back(parse_model_kind(k));
        g.embed_dims = kv.list<std::size_t>("embed_dims", {});
        g.seeds = kv.list<std::uint64_t>("seeds", {0});
        g.max_parallel = kv.number<std::size_t>("max_parallel", 1);
        if (g.max_parallel == 0) throw ConfigError("max_parallel must be positive");
        for (const auto& [k, v] : kv.entries()) {
            if (k == "store" || k == "out_dir" || k == "model_kinds" || k == "embed_dims" || k == "seeds" ||
                k == "max_parallel")
                continue;
            if (k == "model_kind" || k == "embed_dim" || k == "seed" || k == "run_id")
                throw ConfigError("grid key '" + k + "' is set per cell; use the plural list form");
            g.base.set(k, v);
        }
        // Surface typos before any run starts.
        for (const auto& cell : g.cells()) (void)cell;
        return g;
    }

    static SweepGrid load(const std::filesystem::path& path) { return from_kv(KeyValues::load(path)); }

    // One cell per (kind, dim, seed), each with its own run directory.
    std::vector<SweepCell> cells() const {
        std::vector<SweepCell> out;
        for (auto kind : model_kinds)
            for (auto dim : embed_dims)
                for (auto seed : seeds) {
                    KeyValues kv = base;
                    kv.set("model_kind", to_string(kind));
                    kv.set("embed_dim", std::to_string(dim));
                    kv.set("seed", std::to_string(seed));
                    auto cfg = RunConfig::from_kv(kv);
                    kv.reject_unused();
                    cfg.validate();
                    SweepCell c{kind, dim, seed, cfg, out_dir / cfg.run_id};
                    out.push_back(std::move(c));
                }
        return out;
    }
};

struct SweepOutcome {
    std::size_t completed = 0;  // trained in this invocation
    std::size_t skipped = 0;    // already done
    std::size_t failed = 0;
    std::size_t steps = 0;
    std::vector<std::string> errors;
};

// Runs every pending cell on up to max_parallel worker threads. Each cell
// writes only to its own directory, so results do not depend on scheduling.
// A failing cell leaves error.txt and the sweep moves on.
inline SweepOutcome execute(const SweepGrid& grid, const TokenStore& store) {
    const auto cells = grid.cells();
    SweepOutcome outcome;
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const auto& cell = cells[i];
            if (run_complete(cell.dir)) {
                std::lock_guard lock(mu);
                ++outcome.skipped;
                continue;
            }
            try {
                std::filesystem::remove(cell.dir / "error.txt");
                RunOptions opt;
                opt.resume = true;
                auto cfg = cell.config;
                // The vocabulary size defaults to the store's.
                if (!grid.base.has("vocab_size")) cfg.model.vocab_size = store.vocab_size;
                auto res = run<float>(cfg, store, cell.dir, opt);
                std::lock_guard lock(mu);
                ++outcome.completed;
                outcome.steps += res.steps_performed;
            } catch (const std::exception& e) {
                std::error_code ec;
                std::filesystem::create_directories(cell.dir, ec);
                std::ofstream(cell.dir / "error.txt") << e.what() << "\n";
                std::lock_guard lock(mu);
                ++outcome.failed;
                outcome.errors.push_back(cell.config.run_id + ": " + e.what());
            }
        }
    };
    const std::size_t n = std::min(grid.max_parallel, std::max<std::size_t>(cells.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return outcome;
}

inline SweepOutcome execute(const SweepGrid& grid) {
    if (grid.embed_dims.empty() || grid.model_kinds.empty() || grid.seeds.empty()) return {};
    return execute(grid, load_store(grid.store));
}

}  // namespace ddlab
