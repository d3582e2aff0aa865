#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ddlab/errors.hpp"
#include "ddlab/metrics.hpp"

namespace ddlab {

// Test BPT against embedding dimension, dims ascending.
struct Curve {
    std::vector<std::size_t> dims;
    std::vector<double> bpt;
};

enum class PeakStatus { kPeak, kNoPeak, kTooFewDims };

inline const char* to_string(PeakStatus s) {
    switch (s) {
        case PeakStatus::kPeak: return "peak";
        case PeakStatus::kNoPeak: return "no peak";
        default: return "too few dims";
    }
}

struct EpochSummary {
    std::size_t epoch = 0;
    Curve curve;
    double best_bpt = 0;
    std::size_t argmin_dim = 0;
    PeakStatus peak = PeakStatus::kTooFewDims;
    double peak_bpt = 0;        // valid when peak == kPeak
    std::size_t argmax_dim = 0; // interpolation-threshold estimate
};

struct KindSummary {
    ModelKind kind = ModelKind::kAutoregressive;
    std::vector<EpochSummary> epochs;  // ascending epoch
    Curve early_stopped;               // min over epochs, per dim
    std::vector<std::size_t> early_stopped_epoch;
    Curve final_epoch;
    std::size_t final_epoch_index = 0;

    const EpochSummary* at_epoch(std::size_t e) const {
        for (const auto& s : epochs)
            if (s.epoch == e) return &s;
        return nullptr;
    }
};

struct DescentSummary {
    std::vector<KindSummary> kinds;  // in ModelKind order

    const KindSummary* find(ModelKind k) const {
        for (const auto& s : kinds)
            if (s.kind == k) return &s;
        return nullptr;
    }
};

struct PeakResult {
    PeakStatus status = PeakStatus::kTooFewDims;
    double value = 0;
    std::size_t index = 0;
};

// Largest interior point, reported only when it is strictly above both
// endpoints of the scan.
inline PeakResult interior_peak(const std::vector<double>& y) {
    if (y.size() < 3) return {};
    std::size_t best = 1;
    for (std::size_t i = 2; i + 1 < y.size(); ++i)
        if (y[i] > y[best]) best = i;
    if (y[best] > y.front() && y[best] > y.back()) return {PeakStatus::kPeak, y[best], best};
    return {PeakStatus::kNoPeak, 0, 0};
}

inline EpochSummary summarize_curve(std::size_t epoch, Curve curve) {
    EpochSummary s;
    s.epoch = epoch;
    if (curve.dims.empty()) throw ContractError("empty curve");
    const auto best = std::min_element(curve.bpt.begin(), curve.bpt.end()) - curve.bpt.begin();
    s.best_bpt = curve.bpt[best];
    s.argmin_dim = curve.dims[best];
    const auto p = interior_peak(curve.bpt);
    s.peak = p.status;
    if (p.status == PeakStatus::kPeak) {
        s.peak_bpt = p.value;
        s.argmax_dim = curve.dims[p.index];
    }
    s.curve = std::move(curve);
    return s;
}

// Seed-averaged test curves per (kind, epoch). Only dims present at an
// epoch contribute to that epoch's curve; row order does not matter.
inline DescentSummary analyze(const std::vector<MetricRow>& rows) {
    // kind -> epoch -> dim -> (sum, count)
    std::map<ModelKind, std::map<std::size_t, std::map<std::size_t, std::pair<double, std::size_t>>>> acc;
    for (const auto& r : rows) {
        if (r.split != "test") continue;
        auto& cell = acc[r.model_kind][r.epoch][r.embed_dim];
        cell.first += r.bpt;
        ++cell.second;
    }
    DescentSummary out;
    for (const auto& [kind, by_epoch] : acc) {
        KindSummary ks;
        ks.kind = kind;
        std::map<std::size_t, std::pair<double, std::size_t>> envelope;  // dim -> (min, epoch)
        for (const auto& [epoch, by_dim] : by_epoch) {
            Curve c;
            for (const auto& [dim, sc] : by_dim) {
                const double mean = sc.first / static_cast<double>(sc.second);
                c.dims.push_back(dim);
                c.bpt.push_back(mean);
                auto it = envelope.find(dim);
                if (it == envelope.end() || mean < it->second.first) envelope[dim] = {mean, epoch};
            }
            ks.epochs.push_back(summarize_curve(epoch, std::move(c)));
        }
        for (const auto& [dim, me] : envelope) {
            ks.early_stopped.dims.push_back(dim);
            ks.early_stopped.bpt.push_back(me.first);
            ks.early_stopped_epoch.push_back(me.second);
        }
        ks.final_epoch_index = ks.epochs.back().epoch;
        ks.final_epoch = ks.epochs.back().curve;
        out.kinds.push_back(std::move(ks));
    }
    return out;
}

// Refuses the threshold estimate when a curve spans fewer than three dims.
inline std::size_t require_threshold(const EpochSummary& s) {
    if (s.peak == PeakStatus::kTooFewDims) throw ContractError("threshold estimation needs at least three dims");
    if (s.peak == PeakStatus::kNoPeak) throw ContractError("curve has no interior peak");
    return s.argmax_dim;
}

}  // namespace ddlab
