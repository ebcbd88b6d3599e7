// Command-line front end: train, eval, histogram, compare.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splitprune/checkpoint.hpp"
#include "splitprune/errors.hpp"
#include "splitprune/experiment.hpp"
#include "splitprune/metrics.hpp"

namespace sp = splitprune;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kIo = 3;

// Relative output paths land under $SPLITPRUNE_OUTPUT_ROOT when it is set.
std::string resolve_output(const std::string& dir) {
    const char* root = std::getenv("SPLITPRUNE_OUTPUT_ROOT");
    if (!root || !*root || fs::path(dir).is_absolute()) return dir;
    return (fs::path(root) / dir).string();
}

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed, const std::string& out, bool quiet) {
    sp::ExperimentConfig c = sp::load_config(config_path);
    if (seed) c.seed = *seed;
    if (!out.empty()) c.output_dir = out;
    c.output_dir = resolve_output(c.output_dir);
    sp::RunOptions opts;
    if (!quiet) {
        opts.on_epoch = [](const sp::ReportRow& r) {
            const auto& m = r.metrics;
            std::printf("epoch %3d  A1 %6.2f  A2 %6.2f  A3 %6.2f  sparsity %6.2f  channels %6.2f  L %.6g\n", m.epoch,
                        m.clean_accuracy, m.fgsm_accuracy, m.ifgsm_accuracy, m.sparsity, m.channel_sparsity, m.lagrangian);
            std::fflush(stdout);
        };
    }
    const sp::RunResult r = sp::run_experiment(c, opts);
    const auto& t = r.test_row.metrics;
    std::printf("test (best epoch %d)  A1 %.2f  A2 %.2f  A3 %.2f  sparsity %.2f  channels %.2f\n", t.epoch, t.clean_accuracy,
                t.fgsm_accuracy, t.ifgsm_accuracy, t.sparsity, t.channel_sparsity);
    if (!r.warnings.empty())
        std::printf("%zu descent warnings logged to %s\n", r.warnings.size(),
                    (fs::path(c.output_dir) / "descent_warnings.csv").string().c_str());
    std::printf("outputs in %s\n", c.output_dir.c_str());
    return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& attack_text, const std::string& config_path,
             const std::string& split, std::uint64_t seed) {
    const sp::Checkpoint ckpt = sp::load_checkpoint(ckpt_path);
    sp::ExperimentConfig c;
    if (!config_path.empty()) {
        c = sp::load_config(config_path);
    } else if (!ckpt.config_text.empty()) {
        c = sp::parse_config(ckpt.config_text);
    } else {
        throw sp::ValidationError("checkpoint carries no config; pass --config to describe the evaluation data");
    }
    const sp::AttackSpec spec = sp::parse_attack(attack_text);
    const sp::DataSplits data = sp::make_splits(c.data);
    const sp::Dataset* d = split == "train" ? &data.train : split == "val" ? &data.val : &data.test;
    const double acc = sp::accuracy(ckpt.model, *d, spec, seed);
    std::printf("split=%s examples=%zu attack=%s accuracy=%.4f sparsity=%.4f", split.c_str(), d->size(),
                sp::to_string(spec).c_str(), acc, sp::sparsity(ckpt.model));
    if (!ckpt.model.groups().empty()) std::printf(" channel_sparsity=%.4f", sp::channel_sparsity(ckpt.model));
    std::printf("\n");
    return kOk;
}

int cmd_histogram(const std::string& ckpt_path, const std::string& out, double lo, double hi, std::size_t bins) {
    const sp::Checkpoint ckpt = sp::load_checkpoint(ckpt_path);
    const std::string path = resolve_output(out);
    sp::emit_histogram_svg(ckpt.model, path, lo, hi, bins);
    std::printf("small-weight fraction (|w| < 1e-3): %.4f%%\nwrote %s\n", sp::small_weight_fraction(ckpt.model, 1e-3),
                path.c_str());
    return kOk;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& csv_out) {
    const sp::Comparison cmp = sp::compare_runs(paths);
    std::cout << cmp.text;
    if (!csv_out.empty()) {
        const std::string path = resolve_output(csv_out);
        std::ofstream f(path, std::ios::binary);
        if (!f) throw sp::IoError("cannot write " + path);
        f << cmp.csv;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse adversarial training with relaxed splitting pruners"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "run an experiment from a config file");
    std::string config_path, out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
    train->add_option("--config", config_path, "config file (key=value lines)")->required();
    train->add_option("--seed", seed, "override the master seed");
    train->add_option("--out", out, "override the output directory");
    train->add_flag("--quiet", quiet, "suppress per-epoch progress");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under an attack");
    std::string ckpt, attack_text = "none", eval_config, split = "test";
    std::uint64_t eval_seed = 0;
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("--attack", attack_text, "attack spec, e.g. ifgsm:eps=0.0314,alpha=0.0078,steps=20,init=1")->required();
    eval->add_option("--config", eval_config, "config describing the data (defaults to the one stored in the checkpoint)");
    eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--seed", eval_seed, "attack seed");

    auto* hist = app.add_subcommand("histogram", "write an SVG weight histogram");
    std::string hist_ckpt, svg_out;
    double lo = -0.5, hi = 0.5;
    std::size_t bins = 100;
    hist->add_option("--checkpoint", hist_ckpt, "checkpoint file")->required();
    hist->add_option("--out", svg_out, "output SVG path")->required();
    hist->add_option("--lo", lo, "lower edge");
    hist->add_option("--hi", hi, "upper edge");
    hist->add_option("--bins", bins, "bin count");

    auto* compare = app.add_subcommand("compare", "side-by-side best-epoch metrics of several runs");
    std::vector<std::string> csvs;
    std::string compare_csv;
    compare->add_option("csv", csvs, "results.csv files")->required()->expected(2, -1);
    compare->add_option("--csv-out", compare_csv, "also write the comparison as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kValidation;
    }

    try {
        if (*train) return cmd_train(config_path, seed, out, quiet);
        if (*eval) return cmd_eval(ckpt, attack_text, eval_config, split, eval_seed);
        if (*hist) return cmd_histogram(hist_ckpt, svg_out, lo, hi, bins);
        if (*compare) return cmd_compare(csvs, compare_csv);
    } catch (const sp::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kIo;
    } catch (const sp::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kIo;
    }
    return kOk;
}
