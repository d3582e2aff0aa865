#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <regex>

#include "fixtures.hpp"

using namespace ddlab;
using namespace ddlab::testing;

namespace {

MetricRow test_row(ModelKind kind, std::size_t dim, std::size_t epoch, double bpt, std::uint64_t seed = 0) {
    MetricRow r;
    r.model_kind = kind;
    r.embed_dim = dim;
    r.epoch = epoch;
    r.split = "test";
    r.bpt = bpt;
    r.seed = seed;
    r.run_id = to_string(kind) + "-d" + std::to_string(dim) + "-s" + std::to_string(seed);
    return r;
}

// Curves shaped like the published behaviour: a bump in test BPT that
// sharpens with training, peaking near dim 400 for the autoregressive model
// and near 600 for diffusion, over dims that are multiples of 12.
std::vector<MetricRow> descent_fixture() {
    std::vector<MetricRow> rows;
    for (auto [kind, centre, floor] : {std::tuple{ModelKind::kAutoregressive, 408.0, 6.6}, std::tuple{ModelKind::kDiffusion, 600.0, 7.1}})
        for (std::size_t epoch : {10, 20, 30, 40, 50})
            for (std::size_t dim = 48; dim <= 1200; dim += 48 + (dim >= 384 && dim < 624 ? -36 : 0)) {
                const double x = (static_cast<double>(dim) - centre) / 120.0;
                const double bump = 0.02 * static_cast<double>(epoch) * std::exp(-x * x);
                const double slope = 0.5 * std::exp(-static_cast<double>(dim) / 150.0);
                for (std::uint64_t seed : {0, 1}) rows.push_back(test_row(kind, dim, epoch, floor + slope + bump + 0.01 * seed, seed));
            }
    return rows;
}

std::string slurp(const std::filesystem::path& p) { return read_file(p); }

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

double attr(const std::string& svg, const std::string& name) {
    std::smatch m;
    if (!std::regex_search(svg, m, std::regex("id=\"plot-area\"[^>]*" + name + "=\"([^\"]+)\""))) return NAN;
    return std::stod(m[1]);
}

}  // namespace

// ---- analysis ----

TEST(Analyze, HandCheckableCurve) {
    auto s = summarize_curve(5, Curve{{8, 16, 32}, {3, 5, 2}});
    EXPECT_EQ(s.peak, PeakStatus::kPeak);
    EXPECT_EQ(s.argmax_dim, 16u);
    EXPECT_EQ(s.peak_bpt, 5);
    EXPECT_EQ(s.best_bpt, 2);
    EXPECT_EQ(s.argmin_dim, 32u);
    EXPECT_EQ(require_threshold(s), 16u);
}

TEST(Analyze, MonotoneCurveHasNoPeak) {
    auto s = summarize_curve(1, Curve{{8, 16, 32, 64}, {5, 4, 3, 2}});
    EXPECT_EQ(s.peak, PeakStatus::kNoPeak);
    EXPECT_STREQ(to_string(s.peak), "no peak");
    EXPECT_THROW(require_threshold(s), ContractError);
}

TEST(Analyze, InteriorMaximumMustBeatBothEndpoints) {
    EXPECT_EQ(summarize_curve(1, Curve{{8, 16, 32}, {5, 4, 2}}).peak, PeakStatus::kNoPeak);
    EXPECT_EQ(summarize_curve(1, Curve{{8, 16, 32}, {5, 5, 2}}).peak, PeakStatus::kNoPeak);
}

TEST(Analyze, TooFewDimsRefusesTheThreshold) {
    auto s = summarize_curve(1, Curve{{8, 16}, {3, 5}});
    EXPECT_EQ(s.peak, PeakStatus::kTooFewDims);
    EXPECT_THROW(require_threshold(s), ContractError);
}

TEST(Analyze, RecoversThresholdsOfADescentShapedFixture) {
    auto summary = analyze(descent_fixture());
    ASSERT_EQ(summary.kinds.size(), 2u);
    const auto* ar = summary.find(ModelKind::kAutoregressive);
    const auto* df = summary.find(ModelKind::kDiffusion);
    ASSERT_TRUE(ar && df);
    const auto ar_dim = require_threshold(*ar->at_epoch(50));
    const auto df_dim = require_threshold(*df->at_epoch(50));
    EXPECT_NEAR(static_cast<double>(ar_dim), 400.0, 24.0);
    EXPECT_NEAR(static_cast<double>(df_dim), 600.0, 24.0);
    EXPECT_LT(ar_dim, df_dim);
}

TEST(Analyze, AveragesSeedsAndIgnoresTrainRows) {
    auto rows = std::vector<MetricRow>{test_row(ModelKind::kAutoregressive, 8, 1, 2.0, 0),
                                       test_row(ModelKind::kAutoregressive, 8, 1, 4.0, 1)};
    auto train = rows[0];
    train.split = "train";
    train.bpt = 100;
    rows.push_back(train);
    auto s = analyze(rows);
    EXPECT_EQ(s.kinds[0].epochs[0].curve.bpt, (std::vector<double>{3.0}));
}

TEST(Analyze, RowOrderDoesNotMatter) {
    auto rows = descent_fixture();
    const auto reference = render_summary_table(analyze(rows));
    const auto fig = render_early_stopping(analyze(rows));
    std::mt19937 gen(3);
    for (int i = 0; i < 5; ++i) {
        std::shuffle(rows.begin(), rows.end(), gen);
        EXPECT_EQ(render_summary_table(analyze(rows)), reference);
        EXPECT_EQ(render_early_stopping(analyze(rows)), fig);
    }
}

TEST(Analyze, EarlyStoppedEnvelopeIsBelowEveryEpochCurve) {
    for (const auto& ks : analyze(descent_fixture()).kinds)
        for (const auto& e : ks.epochs)
            for (std::size_t i = 0; i < e.curve.dims.size(); ++i) {
                const auto it = std::find(ks.early_stopped.dims.begin(), ks.early_stopped.dims.end(), e.curve.dims[i]);
                ASSERT_NE(it, ks.early_stopped.dims.end());
                EXPECT_LE(ks.early_stopped.bpt[it - ks.early_stopped.dims.begin()], e.curve.bpt[i]);
            }
}

// ---- report ----

TEST(Report, SingleRowRendersOneMarker) {
    TempDir dir;
    auto files = render_report({test_row(ModelKind::kDiffusion, 32, 0, 7.5)}, dir.path());
    EXPECT_EQ(files.written.size(), 3u);
    const auto svg = slurp(dir / "descent_diffusion.svg");
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_EQ(count(svg, "class=\"marker\""), 1u);
    EXPECT_EQ(count(svg, "<polyline"), 0u);
    EXPECT_THROW(render_report({}, dir.path()), ContractError);
}

TEST(Report, RepeatRenderIsByteIdentical) {
    TempDir a, b;
    render_report(descent_fixture(), a.path());
    render_report(descent_fixture(), b.path());
    for (const char* f : {"descent_ar.svg", "descent_diffusion.svg", "early_stopping.svg", "summary.txt"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Report, AxesCoverTheDataWithFivePercentMargins) {
    const auto rows = descent_fixture();
    const auto ks = *analyze(rows).find(ModelKind::kAutoregressive);
    const auto svg = render_epoch_curves(ks);
    double ylo = INFINITY, yhi = -INFINITY;
    for (const auto& e : ks.epochs)
        for (auto v : e.curve.bpt) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
    const double xlo = 48, xhi = 1200;
    EXPECT_NEAR(attr(svg, "data-xmin"), xlo - 0.05 * (xhi - xlo), 1e-9);
    EXPECT_NEAR(attr(svg, "data-xmax"), xhi + 0.05 * (xhi - xlo), 1e-9);
    EXPECT_NEAR(attr(svg, "data-ymin"), ylo - 0.05 * (yhi - ylo), 1e-9);
    EXPECT_NEAR(attr(svg, "data-ymax"), yhi + 0.05 * (yhi - ylo), 1e-9);
}

TEST(Report, LegendListsEveryEpoch) {
    const auto ks = *analyze(descent_fixture()).find(ModelKind::kDiffusion);
    const auto svg = render_epoch_curves(ks);
    for (std::size_t e : {10, 20, 30, 40, 50})
        EXPECT_NE(svg.find(">epoch " + std::to_string(e) + "</text>"), std::string::npos) << e;
    EXPECT_EQ(count(svg, "class=\"legend-entry\""), 5u);
    EXPECT_EQ(count(svg, "<polyline"), 5u);
}

TEST(Report, EarlyStoppingFigureHasBothCurveFamilies) {
    const auto svg = render_early_stopping(analyze(descent_fixture()));
    EXPECT_EQ(count(svg, "<polyline"), 4u);
    EXPECT_EQ(count(svg, "stroke-dasharray"), 4u);  // two dashed curves, two legend swatches
    EXPECT_NE(svg.find("autoregressive, early stopped"), std::string::npos);
    EXPECT_NE(svg.find("diffusion, epoch 50"), std::string::npos);
}

// ---- sweep ----

namespace {

struct SweepFixture {
    TempDir dir;
    std::filesystem::path store_path;

    SweepFixture() {
        store_path = dir / "store.tok";
        save_store(store_path, shakespeare_store(2500));
    }

    KeyValues grid(const std::string& out, std::size_t parallel) const {
        auto kv = KeyValues::parse(
            "model_kinds = ar, diffusion\n"
            "embed_dims = 8, 16\n"
            "seeds = 0\n"
            "n_layers = 1\n"
            "n_heads = 2\n"
            "seq_len = 16\n"
            "batch_size = 8\n"
            "diffusion_steps = 8\n"
            "cond_embed_dim = 8\n"
            "epochs = 2\n"
            "eval_batches = 2\n");
        kv.set("store", store_path.string());
        kv.set("out_dir", (dir / out).string());
        kv.set("max_parallel", std::to_string(parallel));
        return kv;
    }
};

}  // namespace

TEST(Sweep, EmptyGridIsANoOp) {
    TempDir dir;
    auto kv = KeyValues::parse("store = /nonexistent/store.tok\nembed_dims = \n");
    kv.set("out_dir", (dir / "runs").string());
    auto g = SweepGrid::from_kv(kv);
    auto out = execute(g);
    EXPECT_EQ(out.completed + out.skipped + out.failed, 0u);
    EXPECT_FALSE(std::filesystem::exists(dir / "runs"));
}

TEST(Sweep, SecondInvocationTrainsNothing) {
    SweepFixture f;
    auto g = SweepGrid::from_kv(f.grid("runs", 1));
    ASSERT_EQ(g.cells().size(), 4u);
    auto first = execute(g);
    EXPECT_EQ(first.completed, 4u);
    EXPECT_GT(first.steps, 0u);
    auto second = execute(g);
    EXPECT_EQ(second.completed, 0u);
    EXPECT_EQ(second.skipped, 4u);
    EXPECT_EQ(second.steps, 0u);
}

TEST(Sweep, ParallelismDoesNotChangeResults) {
    SweepFixture f;
    execute(SweepGrid::from_kv(f.grid("serial", 1)));
    execute(SweepGrid::from_kv(f.grid("parallel", 2)));
    auto a = collect_metrics(f.dir / "serial"), b = collect_metrics(f.dir / "parallel");
    ASSERT_EQ(a.size(), b.size());
    ASSERT_EQ(a.size(), 4u * 5u);
    auto key = [](const MetricRow& r) { return std::tie(r.run_id, r.epoch, r.split); };
    auto by_key = [&](const MetricRow& x, const MetricRow& y) { return key(x) < key(y); };
    std::sort(a.begin(), a.end(), by_key);
    std::sort(b.begin(), b.end(), by_key);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].same_measurement(b[i])) << to_csv(a[i]);
}

TEST(Sweep, FailingCellIsIsolated) {
    SweepFixture f;
    auto g = SweepGrid::from_kv(f.grid("runs", 1));
    // A damaged checkpoint left behind by an earlier attempt.
    const auto broken = g.out_dir / "diffusion-d8-s0";
    std::filesystem::create_directories(broken);
    std::ofstream(broken / "state.txt") << "epoch = 1\n";
    std::ofstream(broken / "ckpt_last") << "garbage";
    auto out = execute(g);
    EXPECT_EQ(out.failed, 1u);
    EXPECT_EQ(out.completed, 3u);
    ASSERT_EQ(out.errors.size(), 1u);
    EXPECT_NE(out.errors[0].find("diffusion-d8-s0"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(broken / "error.txt"));
    EXPECT_FALSE(run_complete(broken));
}

TEST(Sweep, GridRejectsPerCellKeysAndBadCells) {
    SweepFixture f;
    auto kv = f.grid("runs", 1);
    kv.set("embed_dim", "8");
    EXPECT_THROW(SweepGrid::from_kv(kv), ConfigError);
    auto odd = f.grid("runs", 1);
    odd.set("embed_dims", "8, 10");
    odd.set("n_heads", "4");
    EXPECT_THROW(SweepGrid::from_kv(odd), ConfigError);
    auto typo = f.grid("runs", 1);
    typo.set("epoch", "3");
    EXPECT_THROW(SweepGrid::from_kv(typo), ConfigError);
}

TEST(Sweep, ParamCountGrowsAcrossTheDeskGrid) {
    auto kv = KeyValues::load(source_dir() / "configs" / "desk_grid.txt");
    kv.set("store", "/unused");
    kv.set("out_dir", "/unused");
    auto g = SweepGrid::from_kv(kv);
    EXPECT_EQ(g.cells().size(), 60u);
    for (auto kind : g.model_kinds) {
        std::size_t prev = 0;
        for (const auto& c : g.cells()) {
            if (c.kind != kind || c.seed != 0) continue;
            EXPECT_GT(param_count(c.config.model), prev);
            prev = param_count(c.config.model);
        }
    }
}

TEST(KeyValues, ParsingErrorsCarryTheLine) {
    try {
        KeyValues::parse("a = 1\nnot a pair\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(KeyValues::parse("a = 1\na = 2\n"), ParseError);
    auto kv = KeyValues::parse("xs = 1, 2 ,3  # comment\n");
    EXPECT_EQ(kv.list<int>("xs", {}), (std::vector<int>{1, 2, 3}));
    EXPECT_THROW(KeyValues::parse("n = abc\n").number<int>("n", 0), ConfigError);
}
