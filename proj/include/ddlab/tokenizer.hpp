#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddlab/detail/unicode_tables.hpp"
#include "ddlab/errors.hpp"

namespace ddlab {

using TokenId = std::int32_t;

namespace detail {

inline bool in_ranges(char32_t cp, std::span<const CodepointRange> ranges) {
    auto it = std::upper_bound(ranges.begin(), ranges.end(), cp,
                               [](char32_t v, const CodepointRange& r) { return v < r.first; });
    return it != ranges.begin() && cp <= std::prev(it)->last;
}

inline bool is_letter(char32_t cp) { return in_ranges(cp, kLetterRanges); }
inline bool is_number(char32_t cp) { return in_ranges(cp, kNumberRanges); }
inline bool is_space(char32_t cp) { return in_ranges(cp, kSpaceRanges); }

// One decoded code point and the byte span it came from. Invalid UTF-8
// bytes decode to a single code point outside the Unicode range so they
// fall in the "other" class and still round-trip byte for byte.
struct CodePoint {
    char32_t value;
    std::size_t begin;
    std::size_t end;
};

inline std::vector<CodePoint> decode_utf8(std::string_view s) {
    std::vector<CodePoint> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
        char32_t cp = 0;
        bool ok = len > 0 && i + len <= s.size();
        if (ok) {
            cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
            for (std::size_t k = 1; k < len && ok; ++k) {
                const auto bk = static_cast<unsigned char>(s[i + k]);
                ok = (bk >> 6) == 0x2;
                cp = (cp << 6) | (bk & 0x3F);
            }
        }
        if (!ok) {
            out.push_back({0x110000u + b0, i, i + 1});
            ++i;
        } else {
            out.push_back({cp, i, i + len});
            i += len;
        }
    }
    return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

}  // namespace detail

// Splits text the way GPT-2's pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
// does, returning byte ranges of the pieces.
inline std::vector<std::string_view> gpt2_pretokenize(std::string_view text) {
    using detail::is_letter;
    using detail::is_number;
    using detail::is_space;
    const auto cps = detail::decode_utf8(text);
    const std::size_t n = cps.size();
    auto other = [&](std::size_t k) { return !is_space(cps[k].value) && !is_letter(cps[k].value) && !is_number(cps[k].value); };
    std::vector<std::string_view> pieces;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        const char32_t c = cps[i].value;
        // Contractions.
        if (c == U'\'' && i + 1 < n) {
            const char32_t c1 = cps[i + 1].value;
            const char32_t c2 = i + 2 < n ? cps[i + 2].value : 0;
            if (c1 == U's' || c1 == U't' || c1 == U'm' || c1 == U'd') j = i + 2;
            else if ((c1 == U'r' && c2 == U'e') || (c1 == U'v' && c2 == U'e') || (c1 == U'l' && c2 == U'l')) j = i + 3;
        }
        if (j == i) {
            const std::size_t s = (c == U' ' && i + 1 < n) ? i + 1 : i;
            if (s < n && is_letter(cps[s].value)) {
                j = s;
                while (j < n && is_letter(cps[j].value)) ++j;
            } else if (s < n && is_number(cps[s].value)) {
                j = s;
                while (j < n && is_number(cps[j].value)) ++j;
            } else if (s < n && other(s)) {
                j = s;
                while (j < n && other(j)) ++j;
            }
        }
        if (j == i) {
            // Whitespace run; leave the last space for the next word when one follows.
            std::size_t k = i;
            while (k < n && is_space(cps[k].value)) ++k;
            if (k == n || k - i == 1) j = k;
            else j = k - 1;
        }
        pieces.push_back(text.substr(cps[i].begin, cps[j - 1].end - cps[i].begin));
        i = j;
    }
    return pieces;
}

// The reversible byte -> printable code point table used by GPT-2.
inline std::array<char32_t, 256> gpt2_byte_to_unicode() {
    std::array<char32_t, 256> table{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) table[b] = direct[b] ? char32_t(b) : next++;
    return table;
}

// Vocabulary, ranked merges and byte mapping in GPT-2 distribution format.
struct TokenizerAssets {
    std::unordered_map<std::string, TokenId> vocab;
    std::vector<std::pair<std::string, std::string>> merges;
    std::array<char32_t, 256> byte_to_unicode = gpt2_byte_to_unicode();

    // Reads encoder.json (or vocab.json) and vocab.bpe (or merges.txt) from dir.
    static TokenizerAssets load(const std::filesystem::path& dir) {
        auto pick = [&](std::initializer_list<const char*> names) {
            for (auto name : names)
                if (std::filesystem::exists(dir / name)) return dir / name;
            throw std::runtime_error("no " + std::string(*names.begin()) + " in " + dir.string());
        };
        return from_files(pick({"encoder.json", "vocab.json"}), pick({"vocab.bpe", "merges.txt"}));
    }

    static TokenizerAssets from_files(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
        auto slurp = [](const std::filesystem::path& p) {
            std::ifstream is(p, std::ios::binary);
            if (!is) throw std::runtime_error("cannot open " + p.string());
            std::ostringstream ss;
            ss << is.rdbuf();
            return ss.str();
        };
        return parse(slurp(vocab_path), slurp(merges_path));
    }

    static TokenizerAssets parse(const std::string& vocab_json, const std::string& merges_text) {
        TokenizerAssets a;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(vocab_json);
        } catch (const nlohmann::json::parse_error& e) {
            const auto upto = std::min<std::size_t>(e.byte, vocab_json.size());
            const auto line = 1 + std::count(vocab_json.begin(), vocab_json.begin() + upto, '\n');
            throw ParseError(std::string("vocabulary JSON: ") + e.what(), static_cast<std::size_t>(line));
        }
        if (!j.is_object()) throw ParseError("vocabulary JSON must be an object", 1);
        std::vector<bool> used(j.size(), false);
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!it.value().is_number_integer()) throw ParseError("vocabulary entry " + it.key() + " is not an integer id");
            const auto id = it.value().get<long long>();
            if (id < 0 || static_cast<std::size_t>(id) >= j.size() || used[id])
                throw ParseError("vocabulary ids are not dense: bad id " + std::to_string(id) + " for " + it.key());
            used[id] = true;
            a.vocab.emplace(it.key(), static_cast<TokenId>(id));
        }

        std::istringstream ms(merges_text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(ms, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || (lineno == 1 && line.rfind("#version", 0) == 0)) continue;
            const auto sp = line.find(' ');
            if (sp == std::string::npos || sp == 0 || sp + 1 == line.size() || line.find(' ', sp + 1) != std::string::npos)
                throw ParseError("merge rule must be two space-separated symbols: '" + line + "'", lineno);
            std::string left = line.substr(0, sp), right = line.substr(sp + 1);
            if (!a.vocab.contains(left + right))
                throw ParseError("merge result '" + left + right + "' is not in the vocabulary", lineno);
            a.merges.emplace_back(std::move(left), std::move(right));
        }
        return a;
    }
};

// Byte-level tokenizer: token id == byte value.
class ByteTokenizer {
   public:
    static constexpr std::size_t kVocabSize = 256;

    std::string id() const { return "bytes"; }
    std::size_t vocab_size() const { return kVocabSize; }

    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> ids;
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back(c);
        return ids;
    }

    std::string decode(std::span<const TokenId> ids) const {
        std::string out;
        out.reserve(ids.size());
        for (auto id : ids) {
            if (id < 0 || id >= TokenId(kVocabSize)) throw IndexError("byte token id " + std::to_string(id) + " out of range");
            out += static_cast<char>(id);
        }
        return out;
    }
};

// GPT-2 byte-pair encoder: regex-style pre-tokenization, byte -> unicode
// mapping, then greedy lowest-rank merging inside each piece.
class BpeTokenizer {
   public:
    explicit BpeTokenizer(TokenizerAssets assets, std::string name = "gpt2") : assets_(std::move(assets)), name_(std::move(name)) {
        for (std::size_t r = 0; r < assets_.merges.size(); ++r)
            ranks_.emplace(assets_.merges[r].first + ' ' + assets_.merges[r].second, static_cast<int>(r));
        for (int b = 0; b < 256; ++b) {
            std::string s;
            detail::append_utf8(s, assets_.byte_to_unicode[b]);
            byte_symbol_[b] = s;
            unicode_to_byte_.emplace(assets_.byte_to_unicode[b], static_cast<unsigned char>(b));
        }
        id_to_token_.resize(assets_.vocab.size());
        for (const auto& [tok, id] : assets_.vocab) id_to_token_[id] = tok;
    }

    static BpeTokenizer load(const std::filesystem::path& dir) { return BpeTokenizer(TokenizerAssets::load(dir)); }

    std::string id() const { return name_; }
    std::size_t vocab_size() const { return assets_.vocab.size(); }
    const TokenizerAssets& assets() const { return assets_; }

    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> ids;
        std::unordered_map<std::string_view, std::vector<TokenId>> cache;
        for (auto piece : gpt2_pretokenize(text)) {
            auto hit = cache.find(piece);
            if (hit == cache.end()) hit = cache.emplace(piece, encode_piece(piece)).first;
            ids.insert(ids.end(), hit->second.begin(), hit->second.end());
        }
        return ids;
    }

    std::string decode(std::span<const TokenId> ids) const {
        std::string mapped;
        for (auto id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
                throw IndexError("BPE token id " + std::to_string(id) + " out of range");
            mapped += id_to_token_[id];
        }
        std::string out;
        out.reserve(mapped.size());
        for (const auto& cp : detail::decode_utf8(mapped)) {
            auto it = unicode_to_byte_.find(cp.value);
            if (it == unicode_to_byte_.end()) throw ParseError("vocabulary symbol outside the byte alphabet");
            out += static_cast<char>(it->second);
        }
        return out;
    }

   private:
    std::vector<TokenId> encode_piece(std::string_view piece) const {
        std::vector<std::string> symbols;
        symbols.reserve(piece.size());
        for (unsigned char b : piece) symbols.push_back(byte_symbol_[b]);

        while (symbols.size() > 1) {
            int best = std::numeric_limits<int>::max();
            std::size_t best_at = 0;
            for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
                auto it = ranks_.find(symbols[k] + ' ' + symbols[k + 1]);
                if (it != ranks_.end() && it->second < best) {
                    best = it->second;
                    best_at = k;
                }
            }
            if (best == std::numeric_limits<int>::max()) break;
            const std::string first = symbols[best_at], second = symbols[best_at + 1];
            std::vector<std::string> merged;
            merged.reserve(symbols.size());
            for (std::size_t k = 0; k < symbols.size();) {
                if (k + 1 < symbols.size() && symbols[k] == first && symbols[k + 1] == second) {
                    merged.push_back(first + second);
                    k += 2;
                } else {
                    merged.push_back(std::move(symbols[k]));
                    ++k;
                }
            }
            symbols = std::move(merged);
        }

        std::vector<TokenId> ids;
        ids.reserve(symbols.size());
        for (const auto& s : symbols) {
            auto it = assets_.vocab.find(s);
            if (it == assets_.vocab.end()) throw ParseError("symbol '" + s + "' missing from the vocabulary");
            ids.push_back(it->second);
        }
        return ids;
    }

    TokenizerAssets assets_;
    std::string name_;
    std::unordered_map<std::string, int> ranks_;
    std::array<std::string, 256> byte_symbol_;
    std::unordered_map<char32_t, unsigned char> unicode_to_byte_;
    std::vector<std::string> id_to_token_;
};

// Either tokenizer behind one interface.
class Tokenizer {
   public:
    Tokenizer(ByteTokenizer t) : impl_(std::move(t)) {}
    Tokenizer(BpeTokenizer t) : impl_(std::move(t)) {}

    // "bytes" selects the byte-level tokenizer; anything else is a directory
    // holding GPT-2 assets.
    static Tokenizer from_spec(const std::string& spec) {
        if (spec == "bytes") return Tokenizer(ByteTokenizer{});
        return Tokenizer(BpeTokenizer::load(spec));
    }

    std::string id() const {
        return std::visit([](const auto& t) { return t.id(); }, impl_);
    }
    std::size_t vocab_size() const {
        return std::visit([](const auto& t) { return t.vocab_size(); }, impl_);
    }
    std::vector<TokenId> encode(std::string_view text) const {
        return std::visit([&](const auto& t) { return t.encode(text); }, impl_);
    }
    std::string decode(std::span<const TokenId> ids) const {
        return std::visit([&](const auto& t) { return t.decode(ids); }, impl_);
    }

   private:
    std::variant<ByteTokenizer, BpeTokenizer> impl_;
};

}  // namespace ddlab
