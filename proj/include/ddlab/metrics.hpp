#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ddlab/errors.hpp"

namespace ddlab {

enum class ModelKind { kAutoregressive, kDiffusion };

inline std::string to_string(ModelKind k) { return k == ModelKind::kAutoregressive ? "ar" : "diffusion"; }

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "ar") return ModelKind::kAutoregressive;
    if (s == "diffusion") return ModelKind::kDiffusion;
    throw ConfigError("model_kind must be 'ar' or 'diffusion', got '" + s + "'");
}

inline constexpr char kMetricsHeader[] = "run_id,model_kind,embed_dim,param_count,epoch,split,bpt,stderr,wall_seconds,seed";

// One (run, epoch, split) measurement.
struct MetricRow {
    std::string run_id;
    ModelKind model_kind = ModelKind::kAutoregressive;
    std::size_t embed_dim = 0;
    std::size_t param_count = 0;
    std::size_t epoch = 0;
    std::string split;  // "train" or "test"
    double bpt = 0;
    std::optional<double> stderr_bits;
    double wall_seconds = 0;
    std::uint64_t seed = 0;

    // Everything except wall-clock time, for determinism comparisons.
    bool same_measurement(const MetricRow& o) const {
        return run_id == o.run_id && model_kind == o.model_kind && embed_dim == o.embed_dim &&
               param_count == o.param_count && epoch == o.epoch && split == o.split && bpt == o.bpt &&
               stderr_bits == o.stderr_bits && seed == o.seed;
    }
};

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string to_csv(const MetricRow& r) {
    std::ostringstream os;
    os << r.run_id << ',' << to_string(r.model_kind) << ',' << r.embed_dim << ',' << r.param_count << ',' << r.epoch << ','
       << r.split << ',' << format_double(r.bpt) << ',' << (r.stderr_bits ? format_double(*r.stderr_bits) : "") << ','
       << format_double(r.wall_seconds) << ',' << r.seed;
    return os.str();
}

inline MetricRow parse_metric_row(const std::string& line, std::size_t lineno = 0) {
    std::vector<std::string> f;
    std::istringstream is(line);
    std::string item;
    while (std::getline(is, item, ',')) f.push_back(item);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 10) throw ParseError("metrics row needs 10 fields, got " + std::to_string(f.size()), lineno);
    try {
        MetricRow r;
        r.run_id = f[0];
        r.model_kind = parse_model_kind(f[1]);
        r.embed_dim = std::stoull(f[2]);
        r.param_count = std::stoull(f[3]);
        r.epoch = std::stoull(f[4]);
        r.split = f[5];
        if (r.split != "train" && r.split != "test") throw ParseError("split must be train or test", lineno);
        r.bpt = std::stod(f[6]);
        if (!f[7].empty()) r.stderr_bits = std::stod(f[7]);
        r.wall_seconds = std::stod(f[8]);
        r.seed = std::stoull(f[9]);
        if (!std::isfinite(r.bpt)) throw ParseError("non-finite bpt", lineno);
        return r;
    } catch (const std::logic_error& e) {
        throw ParseError(std::string("bad metrics row: ") + e.what(), lineno);
    }
}

inline std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(is, line) || line != kMetricsHeader) throw ParseError(path.string() + ": unexpected metrics header", 1);
    std::vector<MetricRow> rows;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty()) rows.push_back(parse_metric_row(line, lineno));
    }
    return rows;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << kMetricsHeader << '\n';
    for (const auto& r : rows) os << to_csv(r) << '\n';
}

inline void append_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw std::runtime_error("cannot append to " + path.string());
    for (const auto& r : rows) os << to_csv(r) << '\n';
    os.flush();
}

// Every metrics.csv below root, in path order.
inline std::vector<MetricRow> collect_metrics(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_regular_file(root)) files.push_back(root);
    else
        for (const auto& e : std::filesystem::recursive_directory_iterator(root))
            if (e.is_regular_file() && e.path().filename() == "metrics.csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<MetricRow> rows;
    for (const auto& f : files) {
        auto part = read_metrics_csv(f);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

}  // namespace ddlab
