// Command-line front end: prepare, train, sweep, report, verify.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <unistd.h>

#include "ddlab/ddlab.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_prepare(const std::string& corpus, const std::string& tokenizer_spec, const std::string& out, double fraction) {
    auto tok = ddlab::Tokenizer::from_spec(tokenizer_spec == "bytes" ? tokenizer_spec
                                                                     : ddlab::resolve_data_path(tokenizer_spec).string());
    auto store = ddlab::build_store(ddlab::resolve_data_path(corpus), tok, fraction);
    for (const auto& w : ddlab::store_warnings(store)) std::cerr << "warning: " << w << "\n";
    const auto path = ddlab::resolve_data_path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    ddlab::save_store(path, store);
    std::cout << "tokenizer " << store.tokenizer_id << ", vocab " << store.vocab_size << ", train " << store.train.size()
              << " tokens, validation " << store.validation.size() << " tokens -> " << path.string() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, bool resume, const std::string& out_override) {
    auto kv = ddlab::KeyValues::load(config_path);
    const auto store_path = ddlab::resolve_data_path(kv.require("store"));
    auto out_key = kv.get("out_dir", "runs");
    auto store = ddlab::load_store(store_path);
    if (!kv.has("vocab_size")) kv.set("vocab_size", std::to_string(store.vocab_size));
    auto cfg = ddlab::RunConfig::from_kv(kv);
    kv.reject_unused();
    const fs::path dir = out_override.empty() ? ddlab::resolve_data_path(out_key) / cfg.run_id : fs::path(out_override);
    ddlab::RunOptions opt;
    opt.resume = resume;
    opt.on_row = [](const ddlab::MetricRow& r) {
        std::printf("epoch %3zu %-5s bpt %.4f%s\n", r.epoch, r.split.c_str(), r.bpt,
                    r.stderr_bits ? (" +- " + std::to_string(*r.stderr_bits)).c_str() : "");
        std::fflush(stdout);
    };
    auto res = ddlab::run<float>(cfg, store, dir, opt);
    std::cout << "best test bpt " << res.best_test_bpt << " at epoch " << res.best_epoch << "; run dir " << dir.string()
              << "\n";
    return 0;
}

int cmd_sweep(const std::string& grid_path) {
    auto grid = ddlab::SweepGrid::load(grid_path);
    auto outcome = ddlab::execute(grid);
    std::cout << "trained " << outcome.completed << ", skipped " << outcome.skipped << ", failed " << outcome.failed
              << ", optimizer steps " << outcome.steps << "\n";
    for (const auto& e : outcome.errors) std::cerr << "failed: " << e << "\n";
    return outcome.failed ? 1 : 0;
}

int cmd_report(const std::string& metrics, const std::string& out) {
    auto rows = ddlab::collect_metrics(ddlab::resolve_data_path(metrics));
    auto files = ddlab::render_report(rows, ddlab::resolve_data_path(out));
    for (const auto& f : files.written) std::cout << f.string() << "\n";
    return 0;
}

// The oracle checks live in the acceptance binary built next to this one.
int cmd_verify(bool full) {
    std::error_code ec;
    const auto self = fs::read_symlink("/proc/self/exe", ec);
    std::vector<fs::path> candidates;
    if (!ec) {
        candidates.push_back(self.parent_path() / "ddlab_acceptance");
        candidates.push_back(self.parent_path() / "tests" / "ddlab_acceptance");
    }
    for (const auto& c : candidates) {
        if (!fs::exists(c)) continue;
        const std::string cmd = "\"" + c.string() + "\"" + (full ? "" : " --quick");
        const int status = std::system(cmd.c_str());
        return status == 0 ? 0 : 1;
    }
    std::cerr << "ddlab_acceptance not found next to this executable; build the tests target\n";
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ddlab: autoregressive and diffusion language model double-descent lab"};
    app.require_subcommand(1);

    std::string corpus, tokenizer = "bytes", store_out;
    double fraction = 0.9;
    auto* prepare = app.add_subcommand("prepare", "Tokenize a corpus into a train/validation token store");
    prepare->add_option("--corpus", corpus, "UTF-8 text file")->required();
    prepare->add_option("--tokenizer", tokenizer, "'bytes' or a directory with GPT-2 encoder.json and vocab.bpe");
    prepare->add_option("--out", store_out, "Output token store")->required();
    prepare->add_option("--train-fraction", fraction, "Leading fraction of the text used for training");

    std::string config, run_dir;
    bool resume = false;
    auto* train = app.add_subcommand("train", "Train one model");
    train->add_option("--config", config, "Run config (key = value)")->required()->check(CLI::ExistingFile);
    train->add_flag("--resume", resume, "Continue from the run directory's last checkpoint");
    train->add_option("--run-dir", run_dir, "Override the run directory");

    std::string grid;
    auto* sweep = app.add_subcommand("sweep", "Run every pending cell of a grid");
    sweep->add_option("--grid", grid, "Grid file (key = value)")->required()->check(CLI::ExistingFile);

    std::string metrics, report_out;
    auto* report = app.add_subcommand("report", "Summarize metrics and render SVG figures");
    report->add_option("--metrics", metrics, "metrics.csv or a directory searched recursively")->required();
    report->add_option("--out", report_out, "Output directory")->required();

    bool full = false;
    auto* verify = app.add_subcommand("verify", "Run the oracle and acceptance checks");
    verify->add_flag("--full", full, "Include the long training criteria");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*prepare) return cmd_prepare(corpus, tokenizer, store_out, fraction);
        if (*train) return cmd_train(config, resume, run_dir);
        if (*sweep) return cmd_sweep(grid);
        if (*report) return cmd_report(metrics, report_out);
        if (*verify) return cmd_verify(full);
    } catch (const ddlab::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
