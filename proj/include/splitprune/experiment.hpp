#pragma once

#include <functional>
#include <string>
#include <vector>

#include "splitprune/checkpoint.hpp"
#include "splitprune/config.hpp"
#include "splitprune/metrics.hpp"

namespace splitprune {

inline constexpr const char* kResultsSchema = "# splitprune-results v1";
inline constexpr const char* kResultsColumns =
    "config_hash,seed,pruner,split,epoch,a1,a2,a3,sparsity,channel_sparsity,lagrangian,seconds,best_val";

struct ReportRow {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string pruner;
    std::string split;  // "val" per epoch, "test" for the final best-model row
    MetricsRecord metrics;
    bool best_val = false;
};

struct DescentWarning {
    int epoch = 0;
    std::size_t batch = 0;
    double before = 0.0;
    double after = 0.0;
};

struct RunResult {
    std::vector<ReportRow> rows;
    std::vector<DescentWarning> warnings;
    Model best_model;         // finalized (u-substituted) model with the best validation score
    PrunerState best_state;
    Model final_model;        // finalized model after the last epoch
    ReportRow test_row;
};

struct RunOptions {
    bool write_files = true;                // CSV, checkpoints, warnings log under output_dir
    std::function<void(const ReportRow&)> on_epoch;  // progress callback
};

// Adversarial training with the configured pruner stepping every mini-batch.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

std::string format_rows_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_rows_csv(const std::string& text, const std::string& origin = "csv");
std::vector<ReportRow> read_rows_csv(const std::string& path);

// Standalone SVG bar chart of the weight histogram over [lo, hi].
std::string histogram_svg(const Model& model, double lo, double hi, std::size_t bins);
void emit_histogram_svg(const Model& model, const std::string& path, double lo = -0.5, double hi = 0.5,
                        std::size_t bins = 100);

struct Comparison {
    std::vector<std::string> runs;
    std::vector<ReportRow> rows;  // best (test) row of each run
    std::string text;
    std::string csv;
};

// Aligns the test rows of several result files and reports per-metric deltas
// against the first run.
Comparison compare_runs(const std::vector<std::string>& csv_paths);
Comparison compare_rows(const std::vector<std::string>& names, const std::vector<std::vector<ReportRow>>& runs);

}  // namespace splitprune
