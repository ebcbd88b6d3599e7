#include "splitprune/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "splitprune/errors.hpp"

namespace splitprune {

namespace {

std::string fmt(double v) { return format_double(v); }

double full_loss(const Model& model, const Dataset& data) {
    return softmax_cross_entropy(predict(model, data.inputs), data.labels);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("failed writing " + path.string());
}

MetricsRecord evaluate(const Model& finalized, const Dataset& data, const ExperimentConfig& c, std::uint64_t attack_seed) {
    MetricsRecord r;
    r.clean_accuracy = accuracy(finalized, data, AttackSpec{}, attack_seed);
    r.fgsm_accuracy = accuracy(finalized, data, c.eval_attacks[0], attack_seed);
    r.ifgsm_accuracy = accuracy(finalized, data, c.eval_attacks[1], attack_seed);
    r.sparsity = sparsity(finalized);
    r.channel_sparsity = finalized.groups().empty() ? 0.0 : channel_sparsity(finalized);
    return r;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& c, const RunOptions& options) {
    validate(c);
    const DataSplits data = make_splits(c.data);
    validate(data.train, c.train_attack.lo, c.train_attack.hi);
    if (c.optim.batch_size > data.train.size())
        throw ValidationError("optim.batch_size " + std::to_string(c.optim.batch_size) + " exceeds the " +
                              std::to_string(data.train.size()) + " training examples");

    const std::string hash = config_hash(c);
    Model model = build_model(c.model, data.train.example_shape(), data.train.classes, derive_seed(c.seed, StreamPurpose::init));
    PrunerHyper hyper{c.pruner.beta, c.pruner.lambda, c.pruner.lambda1, c.pruner.lambda2, c.optim.lr, c.pruner.prox};
    PrunerState state = make_pruner_state(c.pruner.algorithm, hyper, model);

    std::vector<Tensor> velocity;
    if (c.optim.momentum > 0.0)
        for (const auto& t : state.w) velocity.emplace_back(t.shape(), 0.0);

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<ReportRow> rows;
    std::vector<DescentWarning> warnings;
    double best_score = -1.0;
    std::optional<Model> best_model;
    std::optional<PrunerState> best_state;
    std::optional<Model> finalized;
    std::size_t best_row = 0;

    for (int epoch = 1; epoch <= c.optim.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        state.hyper.eta = learning_rate(c.optim, epoch);
        Rng shuffle_rng = make_rng(c.seed, StreamPurpose::shuffle, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        const std::size_t batches = (order.size() + c.optim.batch_size - 1) / c.optim.batch_size;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t begin = b * c.optim.batch_size, end = std::min(order.size(), begin + c.optim.batch_size);
            auto [x, y] = batch(data.train, std::span(order).subspan(begin, end - begin));
            model.set_parameter_values(state.w);

            Rng attack_rng = make_rng(c.seed, StreamPurpose::attack, static_cast<std::uint64_t>(epoch), b);
            const Tensor x_adv = attack(model, x, y, c.train_attack, Mode::train, attack_rng);

            const std::uint64_t noise_seed = derive_seed(c.seed, StreamPurpose::train_noise, static_cast<std::uint64_t>(epoch), b);
            Rng noise(noise_seed);
            Tape tape;
            const auto params = bind_parameters(model, tape, true);
            Var loss = softmax_cross_entropy(forward(model, tape.constant(x_adv), params, Mode::train, noise), y);
            const double f_before = loss.value().item();
            const Gradients grads = tape.backward(loss);
            std::vector<Tensor> g = parameter_gradients(model, params, grads);
            if (!velocity.empty()) {
                for (std::size_t p = 0; p < g.size(); ++p)
                    for (std::size_t i = 0; i < g[p].size(); ++i) g[p][i] = velocity[p][i] = c.optim.momentum * velocity[p][i] + g[p][i];
            }

            const double before = state_lagrangian(state, f_before);
            pruner_step(state, g);

            // Re-evaluate on the same adversarial batch and noise draw.
            model.set_parameter_values(state.w);
            Rng replay(noise_seed);
            const double f_after = softmax_cross_entropy(predict(model, x_adv, Mode::train, replay), y);
            const double after = state_lagrangian(state, f_after);
            if (after > before + c.monitor_slack) warnings.push_back({epoch, b, before, after});
        }

        model.set_parameter_values(state.w);
        state.history.push_back(state_lagrangian(state, full_loss(model, data.train)));
        finalized = finalize_epoch(state, model);

        ReportRow row;
        row.config_hash = hash;
        row.seed = c.seed;
        row.pruner = to_string(c.pruner.algorithm);
        row.split = "val";
        row.metrics = evaluate(*finalized, data.val, c, derive_seed(c.seed, StreamPurpose::eval_attack, static_cast<std::uint64_t>(epoch)));
        row.metrics.epoch = epoch;
        row.metrics.lagrangian = state.history.back();
        if (c.record_time)
            row.metrics.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double score = c.select_robust ? row.metrics.ifgsm_accuracy : row.metrics.clean_accuracy;
        if (score > best_score) {
            best_score = score;
            best_model = *finalized;
            best_state = state;
            best_row = rows.size();
        }
        rows.push_back(row);
        if (options.on_epoch) options.on_epoch(row);
    }
    rows[best_row].best_val = true;

    ReportRow test;
    test.config_hash = hash;
    test.seed = c.seed;
    test.pruner = to_string(c.pruner.algorithm);
    test.split = "test";
    test.metrics = evaluate(*best_model, data.test, c,
                            derive_seed(c.seed, StreamPurpose::eval_attack, static_cast<std::uint64_t>(c.optim.epochs) + 1));
    test.metrics.epoch = rows[best_row].metrics.epoch;
    test.metrics.lagrangian = rows[best_row].metrics.lagrangian;
    test.best_val = true;
    rows.push_back(test);

    if (options.write_files) {
        namespace fs = std::filesystem;
        const fs::path dir(c.output_dir);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
        write_text(dir / "results.csv", format_rows_csv(rows));
        write_text(dir / "config.txt", serialize(c));
        std::string log = "epoch,batch,before,after\n";
        for (const auto& w : warnings)
            log += std::to_string(w.epoch) + "," + std::to_string(w.batch) + "," + fmt(w.before) + "," + fmt(w.after) + "\n";
        write_text(dir / "descent_warnings.csv", log);
        save_checkpoint({*best_model, *best_state, serialize(c)}, (dir / "best.ckpt").string());
        save_checkpoint({*finalized, state, serialize(c)}, (dir / "final.ckpt").string());
    }

    return RunResult{std::move(rows), std::move(warnings), std::move(*best_model), std::move(*best_state),
                     std::move(*finalized), test};
}

// ---- results CSV ----

std::string format_rows_csv(const std::vector<ReportRow>& rows) {
    std::string out = std::string(kResultsSchema) + "\n" + kResultsColumns + "\n";
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out += r.config_hash + "," + std::to_string(r.seed) + "," + r.pruner + "," + r.split + "," + std::to_string(m.epoch) +
               "," + fmt(m.clean_accuracy) + "," + fmt(m.fgsm_accuracy) + "," + fmt(m.ifgsm_accuracy) + "," +
               fmt(m.sparsity) + "," + fmt(m.channel_sparsity) + "," + fmt(m.lagrangian) + "," + fmt(m.seconds) + "," +
               (r.best_val ? "1" : "0") + "\n";
    }
    return out;
}

std::vector<ReportRow> parse_rows_csv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kResultsSchema)
        throw FormatError(origin + ": missing or unsupported schema line (expected '" + kResultsSchema + "')");
    if (!std::getline(in, line) || line != kResultsColumns) throw FormatError(origin + ": unexpected column header");
    std::vector<ReportRow> rows;
    std::size_t line_no = 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() != 13) throw FormatError(origin + ": line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields");
        try {
            ReportRow r;
            r.config_hash = f[0];
            r.seed = std::stoull(f[1]);
            r.pruner = f[2];
            r.split = f[3];
            r.metrics.epoch = std::stoi(f[4]);
            r.metrics.clean_accuracy = std::stod(f[5]);
            r.metrics.fgsm_accuracy = std::stod(f[6]);
            r.metrics.ifgsm_accuracy = std::stod(f[7]);
            r.metrics.sparsity = std::stod(f[8]);
            r.metrics.channel_sparsity = std::stod(f[9]);
            r.metrics.lagrangian = std::stod(f[10]);
            r.metrics.seconds = std::stod(f[11]);
            r.best_val = f[12] == "1";
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw FormatError(origin + ": line " + std::to_string(line_no) + " has a malformed number");
        }
    }
    return rows;
}

std::vector<ReportRow> read_rows_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_rows_csv(ss.str(), path);
}

// ---- histogram SVG ----

std::string histogram_svg(const Model& model, double lo, double hi, std::size_t bins) {
    const auto edges = uniform_edges(lo, hi, bins);
    const Histogram h = weight_histogram(model, edges);
    const std::size_t peak = std::max<std::size_t>(1, *std::max_element(h.counts.begin(), h.counts.end()));
    const double width = 800, height = 320, left = 50, right = 20, top = 30, bottom = 40;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    const double bar_w = plot_w / static_cast<double>(bins);
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                  width, height, width, height);
    out += buf;
    out += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">weights: %zu values, %zu bins on [%.4g, %.4g], peak %zu</text>\n",
                  left, h.total(), bins, lo, hi, peak);
    out += buf;
    for (std::size_t i = 0; i < bins; ++i) {
        const double bh = plot_h * static_cast<double>(h.counts[i]) / static_cast<double>(peak);
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"steelblue\"><title>[%.6g, %.6g): %zu</title></rect>\n",
                      left + bar_w * static_cast<double>(i), top + plot_h - bh, bar_w, bh, edges[i], edges[i + 1], h.counts[i]);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", left,
                  top + plot_h, left + plot_w, top + plot_h);
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\">%.4g</text>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">%.4g</text>\n",
                  left, height - 15, lo, left + plot_w, height - 15, hi);
    out += buf;
    out += "</svg>\n";
    return out;
}

void emit_histogram_svg(const Model& model, const std::string& path, double lo, double hi, std::size_t bins) {
    const std::string svg = histogram_svg(model, lo, hi, bins);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << svg;
    if (!f) throw IoError("failed writing " + path);
}

// ---- comparisons ----

Comparison compare_rows(const std::vector<std::string>& names, const std::vector<std::vector<ReportRow>>& runs) {
    if (runs.size() < 2) throw ParameterError("compare needs at least two runs");
    Comparison cmp;
    cmp.runs = names;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto& rs = runs[k];
        auto it = std::find_if(rs.begin(), rs.end(), [](const ReportRow& r) { return r.split == "test"; });
        if (it == rs.end()) it = std::find_if(rs.begin(), rs.end(), [](const ReportRow& r) { return r.best_val; });
        if (it == rs.end()) throw FormatError(names[k] + ": no best-epoch row");
        cmp.rows.push_back(*it);
    }

    struct Metric {
        const char* name;
        double MetricsRecord::*field;
    };
    const Metric metrics[] = {{"a1", &MetricsRecord::clean_accuracy},
                              {"a2", &MetricsRecord::fgsm_accuracy},
                              {"a3", &MetricsRecord::ifgsm_accuracy},
                              {"sparsity", &MetricsRecord::sparsity},
                              {"channel_sparsity", &MetricsRecord::channel_sparsity},
                              {"lagrangian", &MetricsRecord::lagrangian}};

    std::string csv = "metric";
    for (std::size_t k = 0; k < names.size(); ++k) csv += ",run" + std::to_string(k);
    for (std::size_t k = 1; k < names.size(); ++k) csv += ",delta" + std::to_string(k);
    csv += "\n";
    csv += "pruner";
    for (const auto& r : cmp.rows) csv += "," + r.pruner;
    for (std::size_t k = 1; k < names.size(); ++k) csv += ",";
    csv += "\n";

    std::ostringstream text;
    char buf[64];
    text << "runs:\n";
    for (std::size_t k = 0; k < names.size(); ++k)
        text << "  run" << k << " = " << names[k] << " (pruner " << cmp.rows[k].pruner << ", epoch " << cmp.rows[k].metrics.epoch << ")\n";
    std::snprintf(buf, sizeof buf, "%-18s", "metric");
    text << buf;
    for (std::size_t k = 0; k < names.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%14s", ("run" + std::to_string(k)).c_str());
        text << buf;
    }
    for (std::size_t k = 1; k < names.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%14s", ("delta" + std::to_string(k)).c_str());
        text << buf;
    }
    text << "\n";
    for (const auto& m : metrics) {
        csv += m.name;
        std::snprintf(buf, sizeof buf, "%-18s", m.name);
        text << buf;
        const double base = cmp.rows[0].metrics.*m.field;
        for (const auto& r : cmp.rows) {
            csv += "," + fmt(r.metrics.*m.field);
            std::snprintf(buf, sizeof buf, "%14.4f", r.metrics.*m.field);
            text << buf;
        }
        for (std::size_t k = 1; k < cmp.rows.size(); ++k) {
            const double d = cmp.rows[k].metrics.*m.field - base;
            csv += "," + fmt(d);
            std::snprintf(buf, sizeof buf, "%+14.4f", d);
            text << buf;
        }
        csv += "\n";
        text << "\n";
    }
    cmp.csv = csv;
    cmp.text = text.str();
    return cmp;
}

Comparison compare_runs(const std::vector<std::string>& csv_paths) {
    if (csv_paths.size() < 2) throw ParameterError("compare needs at least two result files");
    std::vector<std::vector<ReportRow>> runs;
    for (const auto& p : csv_paths) runs.push_back(read_rows_csv(p));
    return compare_rows(csv_paths, runs);
}

}  // namespace splitprune
