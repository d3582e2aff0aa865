#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ddlab/analysis.hpp"
#include "ddlab/metrics.hpp"

namespace ddlab {

namespace svg {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

// Axis range covering [lo, hi] plus a 5% margin on each side.
struct Range {
    double lo = 0, hi = 1;
    static Range padded(double lo, double hi) {
        double span = hi - lo;
        if (!(span > 0)) span = std::max(std::abs(lo), 1.0) * 0.1;
        return {lo - 0.05 * span, hi + 0.05 * span};
    }
};

// Piecewise-linear map through a few viridis anchors, 0 <= u <= 1.
inline std::string epoch_color(double u) {
    static const double anchors[5][3] = {
        {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
    u = std::clamp(u, 0.0, 1.0) * 4.0;
    const int i = std::min(3, static_cast<int>(u));
    const double f = u - i;
    char buf[8];
    int c[3];
    for (int k = 0; k < 3; ++k) c[k] = static_cast<int>(std::lround(anchors[i][k] + f * (anchors[i + 1][k] - anchors[i][k])));
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
    return buf;
}

struct Series {
    std::string name;
    std::string color;
    std::vector<double> x, y;
    bool dashed = false;
    double opacity = 1.0;
};

// A line chart with one polyline (plus point markers) per series and a
// legend entry per series. Plot-area geometry and data ranges are exposed as
// attributes on the #plot-area rect.
class LineChart {
   public:
    LineChart(std::string title, std::string x_label, std::string y_label)
        : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

    void add(Series s) { series_.push_back(std::move(s)); }

    std::string render() const {
        double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
        for (const auto& s : series_)
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, s.y[i]);
                y1 = std::max(y1, s.y[i]);
            }
        if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
        const auto xr = Range::padded(x0, x1), yr = Range::padded(y0, y1);

        const double left = 70, top = 40, pw = 520, ph = 380, legend_w = 170;
        const double height = std::max(top + ph + 60, top + 20 + 14.0 * static_cast<double>(series_.size()));
        const double width = left + pw + legend_w;
        auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
        auto py = [&](double y) { return top + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

        std::ostringstream o;
        o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
          << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
        o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        o << "<text x=\"" << num(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title_)
          << "</text>\n";
        o << "<rect id=\"plot-area\" x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\""
          << num(ph) << "\" fill=\"none\" stroke=\"#333\" data-xmin=\"" << format_double(xr.lo) << "\" data-xmax=\""
          << format_double(xr.hi) << "\" data-ymin=\"" << format_double(yr.lo) << "\" data-ymax=\"" << format_double(yr.hi)
          << "\"/>\n";
        o << "<g class=\"ticks\" stroke=\"#333\">\n";
        for (int i = 0; i <= 5; ++i) {
            const double xv = xr.lo + (xr.hi - xr.lo) * i / 5.0, yv = yr.lo + (yr.hi - yr.lo) * i / 5.0;
            o << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(px(xv)) << "\" y2=\""
              << num(top + ph + 4) << "\"/>";
            o << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(top + ph + 16) << "\" text-anchor=\"middle\" stroke=\"none\">"
              << label(xv) << "</text>";
            o << "<line x1=\"" << num(left - 4) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(left) << "\" y2=\""
              << num(py(yv)) << "\"/>";
            o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\" stroke=\"none\">"
              << label(yv) << "</text>\n";
        }
        o << "</g>\n";
        o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(top + ph + 36) << "\" text-anchor=\"middle\">"
          << escape(x_label_) << "</text>\n";
        o << "<text transform=\"translate(18 " << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
          << escape(y_label_) << "</text>\n";

        for (std::size_t k = 0; k < series_.size(); ++k) {
            const auto& s = series_[k];
            o << "<g class=\"series\" data-name=\"" << escape(s.name) << "\" stroke=\"" << s.color << "\" fill=\"" << s.color
              << "\" opacity=\"" << num(s.opacity) << "\">\n";
            if (s.x.size() > 1) {
                o << "<polyline fill=\"none\" stroke-width=\"1.5\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
                  << " points=\"";
                for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
                o << "\"/>\n";
            }
            for (std::size_t i = 0; i < s.x.size(); ++i)
                o << "<circle class=\"marker\" cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"2.5\"/>\n";
            o << "</g>\n";
        }

        o << "<g class=\"legend\">\n";
        for (std::size_t k = 0; k < series_.size(); ++k) {
            const auto& s = series_[k];
            const double ly = top + 10 + 14.0 * static_cast<double>(k);
            const double lx = left + pw + 14;
            o << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 20) << "\" y2=\"" << num(ly)
              << "\" stroke=\"" << s.color << "\" stroke-width=\"2\" opacity=\"" << num(s.opacity) << "\""
              << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>";
            o << "<text class=\"legend-entry\" x=\"" << num(lx + 26) << "\" y=\"" << num(ly + 4) << "\">" << escape(s.name)
              << "</text>\n";
        }
        o << "</g>\n</svg>\n";
        return o.str();
    }

   private:
    static std::string escape(const std::string& s) {
        std::string out;
        for (char c : s) {
            switch (c) {
                case '&': out += "&amp;"; break;
                case '<': out += "&lt;"; break;
                case '>': out += "&gt;"; break;
                case '"': out += "&quot;"; break;
                default: out += c;
            }
        }
        return out;
    }

    std::string title_, x_label_, y_label_;
    std::vector<Series> series_;
};

inline std::vector<double> as_double(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace svg

inline std::string kind_title(ModelKind k) { return k == ModelKind::kAutoregressive ? "autoregressive" : "diffusion"; }

// Test BPT against embedding dimension with one epoch-colored curve per
// recorded epoch.
inline std::string render_epoch_curves(const KindSummary& ks) {
    svg::LineChart chart("Test BPT by embedding dimension, " + kind_title(ks.kind), "embedding dimension",
                         "test BPT (bits/token)");
    const double first = static_cast<double>(ks.epochs.front().epoch);
    const double last = static_cast<double>(ks.epochs.back().epoch);
    for (const auto& e : ks.epochs) {
        const double u = last > first ? (static_cast<double>(e.epoch) - first) / (last - first) : 0.0;
        chart.add({"epoch " + std::to_string(e.epoch), svg::epoch_color(u), svg::as_double(e.curve.dims), e.curve.bpt});
    }
    return chart.render();
}

// Final-epoch (solid) and early-stopped (dashed, more opaque) curves for
// every model kind.
inline std::string render_early_stopping(const DescentSummary& s) {
    svg::LineChart chart("Final epoch vs early stopping", "embedding dimension", "test BPT (bits/token)");
    for (const auto& ks : s.kinds) {
        const std::string color = ks.kind == ModelKind::kAutoregressive ? "#1f77b4" : "#d62728";
        chart.add({kind_title(ks.kind) + ", epoch " + std::to_string(ks.final_epoch_index), color,
                   svg::as_double(ks.final_epoch.dims), ks.final_epoch.bpt, false, 0.55});
        chart.add({kind_title(ks.kind) + ", early stopped", color, svg::as_double(ks.early_stopped.dims),
                   ks.early_stopped.bpt, true, 1.0});
    }
    return chart.render();
}

inline std::string render_summary_table(const DescentSummary& s) {
    std::ostringstream o;
    char buf[160];
    for (const auto& ks : s.kinds) {
        o << "== " << kind_title(ks.kind) << " ==\n";
        std::snprintf(buf, sizeof buf, "%6s %10s %10s %10s %10s\n", "epoch", "best_bpt", "argmin_dim", "peak_bpt", "argmax_dim");
        o << buf;
        for (const auto& e : ks.epochs) {
            if (e.peak == PeakStatus::kPeak)
                std::snprintf(buf, sizeof buf, "%6zu %10.4f %10zu %10.4f %10zu\n", e.epoch, e.best_bpt, e.argmin_dim, e.peak_bpt,
                              e.argmax_dim);
            else
                std::snprintf(buf, sizeof buf, "%6zu %10.4f %10zu %21s\n", e.epoch, e.best_bpt, e.argmin_dim, to_string(e.peak));
            o << buf;
        }
        o << "early stopped (min over epochs):\n";
        for (std::size_t i = 0; i < ks.early_stopped.dims.size(); ++i) {
            std::snprintf(buf, sizeof buf, "  dim %6zu  bpt %8.4f  epoch %zu  final %8.4f\n", ks.early_stopped.dims[i],
                          ks.early_stopped.bpt[i], ks.early_stopped_epoch[i],
                          i < ks.final_epoch.bpt.size() ? ks.final_epoch.bpt[i] : NAN);
            o << buf;
        }
    }
    return o.str();
}

struct ReportFiles {
    std::vector<std::filesystem::path> written;
};

// Writes descent_<kind>.svg per kind, early_stopping.svg and summary.txt.
inline ReportFiles render_report(const std::vector<MetricRow>& rows, const std::filesystem::path& out_dir) {
    if (rows.empty()) throw ContractError("no metrics to report");
    const auto summary = analyze(rows);
    std::filesystem::create_directories(out_dir);
    ReportFiles files;
    auto write = [&](const std::string& name, const std::string& text) {
        const auto p = out_dir / name;
        std::ofstream os(p, std::ios::binary | std::ios::trunc);
        os << text;
        if (!os) throw std::runtime_error("cannot write " + p.string());
        files.written.push_back(p);
    };
    for (const auto& ks : summary.kinds) write("descent_" + to_string(ks.kind) + ".svg", render_epoch_curves(ks));
    write("early_stopping.svg", render_early_stopping(summary));
    write("summary.txt", render_summary_table(summary));
    return files;
}

}  // namespace ddlab
