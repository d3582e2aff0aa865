#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ddlab/errors.hpp"
#include "ddlab/rng.hpp"
#include "ddlab/tokenizer.hpp"

namespace ddlab {

inline constexpr char kTokenStoreMagic[] = "DDTOK1";

enum class Split { kTrain, kValidation };
enum class Sampling { kWithoutReplacement, kWithReplacement };

// Tokenized corpus with its train/validation cut. Immutable once built.
struct TokenStore {
    std::vector<TokenId> train;
    std::vector<TokenId> validation;
    std::string tokenizer_id;
    std::size_t vocab_size = 0;
    std::uint64_t corpus_checksum = 0;

    const std::vector<TokenId>& tokens(Split s) const { return s == Split::kTrain ? train : validation; }
};

// Row-major [rows x cols] matrix of token ids.
struct Batch {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<TokenId> tokens;

    std::span<const TokenId> row(std::size_t r) const { return std::span<const TokenId>(tokens).subspan(r * cols, cols); }
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Cuts the raw text at floor(split_fraction * #code points) and tokenizes
// each side on its own.
inline TokenStore build_store_from_text(std::string_view text, const Tokenizer& tokenizer, double split_fraction = 0.9) {
    if (text.empty()) throw std::runtime_error("corpus is empty");
    if (!(split_fraction > 0.0 && split_fraction <= 1.0))
        throw ConfigError("split fraction must lie in (0, 1], got " + std::to_string(split_fraction));
    const auto cps = detail::decode_utf8(text);
    const auto cut_cp = static_cast<std::size_t>(split_fraction * static_cast<double>(cps.size()));
    const std::size_t cut = cut_cp >= cps.size() ? text.size() : cps[cut_cp].begin;
    TokenStore store;
    store.train = tokenizer.encode(text.substr(0, cut));
    store.validation = tokenizer.encode(text.substr(cut));
    store.tokenizer_id = tokenizer.id();
    store.vocab_size = tokenizer.vocab_size();
    store.corpus_checksum = fnv1a64(text);
    return store;
}

inline TokenStore build_store(const std::filesystem::path& corpus, const Tokenizer& tokenizer, double split_fraction = 0.9) {
    return build_store_from_text(read_file(corpus), tokenizer, split_fraction);
}

inline std::vector<std::string> store_warnings(const TokenStore& store) {
    std::vector<std::string> w;
    if (store.validation.empty()) w.push_back("validation split is empty; test metrics cannot be computed");
    if (store.train.empty()) w.push_back("training split is empty");
    return w;
}

inline void save_store(const std::filesystem::path& path, const TokenStore& store) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    auto u64 = [&](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    auto ids = [&](const std::vector<TokenId>& v) {
        u64(v.size());
        for (auto id : v) {
            const auto u = static_cast<std::uint32_t>(id);
            os.write(reinterpret_cast<const char*>(&u), sizeof u);
        }
    };
    os.write(kTokenStoreMagic, 6);
    u64(store.tokenizer_id.size());
    os.write(store.tokenizer_id.data(), static_cast<std::streamsize>(store.tokenizer_id.size()));
    u64(store.vocab_size);
    u64(store.corpus_checksum);
    ids(store.train);
    ids(store.validation);
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

inline TokenStore load_store(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    auto u64 = [&]() {
        std::uint64_t v;
        if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("truncated token store " + path.string());
        return v;
    };
    char magic[6];
    if (!is.read(magic, 6) || std::memcmp(magic, kTokenStoreMagic, 6) != 0)
        throw ParseError(path.string() + " is not a DDTOK1 token store");
    TokenStore store;
    const auto len = u64();
    if (len > 4096) throw ParseError("implausible tokenizer id length in " + path.string());
    store.tokenizer_id.resize(len);
    is.read(store.tokenizer_id.data(), static_cast<std::streamsize>(len));
    store.vocab_size = u64();
    store.corpus_checksum = u64();
    auto ids = [&](std::vector<TokenId>& v) {
        v.resize(u64());
        for (auto& id : v) {
            std::uint32_t u;
            if (!is.read(reinterpret_cast<char*>(&u), sizeof u)) throw ParseError("truncated token store " + path.string());
            if (u >= store.vocab_size) throw ParseError("token id " + std::to_string(u) + " exceeds vocabulary");
            id = static_cast<TokenId>(u);
        }
    };
    ids(store.train);
    ids(store.validation);
    return store;
}

// Fixed-length windows over one split. Both sampling modes produce
// floor(tokens / seq_len) sequences per epoch.
class WindowSampler {
   public:
    WindowSampler(const TokenStore& store, Split split, std::size_t seq_len, Sampling mode)
        : tokens_(&store.tokens(split)), seq_len_(seq_len), mode_(mode) {
        if (seq_len == 0) throw ConfigError("sequence length must be positive");
        if (seq_len > tokens_->size())
            throw ConfigError("sequence length " + std::to_string(seq_len) + " exceeds split of " +
                              std::to_string(tokens_->size()) + " tokens");
    }

    std::size_t sequences_per_epoch() const { return tokens_->size() / seq_len_; }
    std::size_t seq_len() const { return seq_len_; }

    // Start offsets of every sequence in one epoch, in visiting order.
    // Without replacement: a permutation of the aligned, non-overlapping
    // windows. With replacement: uniform offsets in [0, tokens - seq_len].
    std::vector<std::size_t> epoch_starts(Rng& rng) const {
        const std::size_t count = sequences_per_epoch();
        std::vector<std::size_t> starts(count);
        if (mode_ == Sampling::kWithoutReplacement) {
            for (std::size_t k = 0; k < count; ++k) starts[k] = k * seq_len_;
            for (std::size_t k = count; k > 1; --k) std::swap(starts[k - 1], starts[uniform_index(rng, k)]);
        } else {
            const std::size_t span = tokens_->size() - seq_len_ + 1;
            for (auto& s : starts) s = uniform_index(rng, span);
        }
        return starts;
    }

    // Aligned windows in corpus order (deterministic evaluation pass).
    std::vector<std::size_t> ordered_starts() const {
        std::vector<std::size_t> starts(sequences_per_epoch());
        for (std::size_t k = 0; k < starts.size(); ++k) starts[k] = k * seq_len_;
        return starts;
    }

    Batch gather(std::span<const std::size_t> starts) const {
        Batch b{starts.size(), seq_len_, {}};
        b.tokens.reserve(starts.size() * seq_len_);
        for (auto s : starts) b.tokens.insert(b.tokens.end(), tokens_->begin() + s, tokens_->begin() + s + seq_len_);
        return b;
    }

    // One batch of batch_size sequences drawn on its own.
    Batch sample_batch(std::size_t batch_size, Rng& rng) const {
        std::vector<std::size_t> starts;
        if (mode_ == Sampling::kWithReplacement) {
            const std::size_t span = tokens_->size() - seq_len_ + 1;
            for (std::size_t i = 0; i < batch_size; ++i) starts.push_back(uniform_index(rng, span));
        } else {
            auto all = epoch_starts(rng);
            if (batch_size > all.size()) throw ConfigError("batch larger than the window partition");
            starts.assign(all.begin(), all.begin() + batch_size);
        }
        return gather(starts);
    }

   private:
    const std::vector<TokenId>* tokens_;
    std::size_t seq_len_;
    Sampling mode_;
};

// Splits an epoch's start offsets into batches of batch_size; the final
// batch may be short.
inline std::vector<std::vector<std::size_t>> chunk_batches(const std::vector<std::size_t>& starts, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < starts.size(); i += batch_size)
        out.emplace_back(starts.begin() + i, starts.begin() + std::min(starts.size(), i + batch_size));
    return out;
}

}  // namespace ddlab
