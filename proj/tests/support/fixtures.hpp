#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "ddlab/ddlab.hpp"

namespace ddlab::testing {

inline std::filesystem::path source_dir() { return DDLAB_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
   public:
    explicit TempDir(const std::string& tag = "ddlab") {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

   private:
    std::filesystem::path path_;
};

inline ModelConfig tiny_config(bool diffusion, std::size_t vocab = 7, std::size_t seq_len = 4) {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.embed_dim = 8;
    c.seq_len = seq_len;
    c.vocab_size = vocab;
    c.causal = !diffusion;
    c.timestep_conditioning = diffusion;
    c.cond_embed_dim = 4;
    return c;
}

// Byte-level store built from a prefix of the committed Shakespeare subset.
inline TokenStore shakespeare_store(std::size_t chars = 0, double fraction = 0.9) {
    auto text = read_file(data_dir() / "shakespeare_subset.txt");
    if (chars) text.resize(std::min(chars, text.size()));
    return build_store_from_text(text, Tokenizer::from_spec("bytes"), fraction);
}

// A store whose splits are given directly.
inline TokenStore literal_store(std::vector<TokenId> train, std::vector<TokenId> validation, std::size_t vocab) {
    TokenStore s;
    s.train = std::move(train);
    s.validation = std::move(validation);
    s.tokenizer_id = "literal";
    s.vocab_size = vocab;
    return s;
}

inline RunConfig small_run(ModelKind kind, std::size_t vocab = 256, std::size_t seq_len = 16) {
    auto c = RunConfig::defaults(kind);
    c.model.n_layers = 1;
    c.model.n_heads = 2;
    c.model.embed_dim = 16;
    c.model.seq_len = seq_len;
    c.model.vocab_size = vocab;
    c.model.cond_embed_dim = 8;
    c.diffusion_steps = 16;
    c.batch_size = 4;
    c.epochs = 3;
    c.eval_batches = 3;
    c.lr = 3e-3;
    c.run_id = c.default_run_id();
    return c;
}

}  // namespace ddlab::testing
