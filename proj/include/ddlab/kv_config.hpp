#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ddlab/errors.hpp"

namespace ddlab {

// Flat "key = value" text with '#' comments. Lookups are recorded so callers
// can reject keys nobody asked for.
class KeyValues {
   public:
    KeyValues() = default;

    static KeyValues parse(const std::string& text, const std::string& origin = "config") {
        KeyValues kv;
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError(origin + ": expected 'key = value'", lineno);
            auto key = trim(line.substr(0, eq));
            if (key.empty()) throw ParseError(origin + ": empty key", lineno);
            if (kv.values_.contains(key)) throw ParseError(origin + ": duplicate key '" + key + "'", lineno);
            kv.values_[key] = trim(line.substr(eq + 1));
        }
        return kv;
    }

    static KeyValues load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot read " + path.string());
        std::ostringstream ss;
        ss << is.rdbuf();
        return parse(ss.str(), path.string());
    }

    bool has(const std::string& key) const { return values_.contains(key); }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    std::string get(const std::string& key, const std::string& fallback) const {
        used_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require(const std::string& key) const {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required key '" + key + "'");
        return it->second;
    }

    template <typename N>
    N number(const std::string& key, N fallback) const {
        used_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : to_number<N>(key, it->second);
    }

    bool flag(const std::string& key, bool fallback) const {
        auto v = get(key, fallback ? "true" : "false");
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("key '" + key + "' expects a boolean, got '" + v + "'");
    }

    template <typename N>
    std::vector<N> list(const std::string& key, std::vector<N> fallback) const {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<N> out;
        for (const auto& item : split(it->second)) out.push_back(to_number<N>(key, item));
        return out;
    }

    std::vector<std::string> strings(const std::string& key, std::vector<std::string> fallback) const {
        used_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : split(it->second);
    }

    // Keys present in the file that no lookup touched.
    std::vector<std::string> unused() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.contains(k)) out.push_back(k);
        return out;
    }

    void reject_unused() const {
        auto extra = unused();
        if (extra.empty()) return;
        std::string msg = "unknown config key(s):";
        for (const auto& k : extra) msg += " " + k;
        throw ConfigError(msg);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    std::string str() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

   private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    }

    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::istringstream is(s);
        std::string item;
        while (std::getline(is, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    template <typename N>
    static N to_number(const std::string& key, const std::string& text) {
        N v{};
        const char* end = text.data() + text.size();
        auto [ptr, ec] = std::from_chars(text.data(), end, v);
        if (ec != std::errc() || ptr != end) throw ConfigError("key '" + key + "' expects a number, got '" + text + "'");
        return v;
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

}  // namespace ddlab
