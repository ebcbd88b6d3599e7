// Python module splitprune._core: prox operators, configs, training runs and
// checkpoint evaluation. Tensors cross the boundary as float64 numpy arrays.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "splitprune/attacks.hpp"
#include "splitprune/checkpoint.hpp"
#include "splitprune/config.hpp"
#include "splitprune/errors.hpp"
#include "splitprune/experiment.hpp"
#include "splitprune/metrics.hpp"
#include "splitprune/prox.hpp"
#include "splitprune/pruner.hpp"

namespace py = pybind11;
namespace sp = splitprune;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

sp::Tensor to_tensor(const Array& a) {
    sp::Shape shape(a.shape(), a.shape() + a.ndim());
    if (shape.empty()) shape = {1};
    return sp::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const sp::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict row_dict(const sp::ReportRow& r) {
    py::dict d;
    d["config_hash"] = r.config_hash;
    d["seed"] = r.seed;
    d["pruner"] = r.pruner;
    d["split"] = r.split;
    d["epoch"] = r.metrics.epoch;
    d["a1"] = r.metrics.clean_accuracy;
    d["a2"] = r.metrics.fgsm_accuracy;
    d["a3"] = r.metrics.ifgsm_accuracy;
    d["sparsity"] = r.metrics.sparsity;
    d["channel_sparsity"] = r.metrics.channel_sparsity;
    d["lagrangian"] = r.metrics.lagrangian;
    d["seconds"] = r.metrics.seconds;
    d["best_val"] = r.best_val;
    return d;
}

py::dict train(const std::string& config_text, std::uint64_t seed, const std::string& output_dir) {
    sp::ExperimentConfig c = sp::parse_config(config_text);
    c.seed = seed;
    sp::RunOptions opts;
    opts.write_files = !output_dir.empty();
    if (opts.write_files) c.output_dir = output_dir;
    std::optional<sp::RunResult> run;
    {
        py::gil_scoped_release release;
        run.emplace(sp::run_experiment(c, opts));
    }
    const sp::RunResult& r = *run;
    py::list rows;
    for (const auto& row : r.rows) rows.append(row_dict(row));
    py::dict out;
    out["rows"] = rows;
    out["test"] = row_dict(r.test_row);
    out["warnings"] = r.warnings.size();
    return out;
}

py::dict evaluate(const std::string& checkpoint, const std::string& attack, const std::string& split, std::uint64_t seed) {
    const sp::Checkpoint ck = sp::load_checkpoint(checkpoint);
    if (ck.config_text.empty()) throw sp::ValidationError("checkpoint carries no config");
    const sp::ExperimentConfig c = sp::parse_config(ck.config_text);
    const sp::DataSplits data = sp::make_splits(c.data);
    const sp::Dataset* d = split == "train" ? &data.train : split == "val" ? &data.val : &data.test;
    py::dict out;
    out["accuracy"] = sp::accuracy(ck.model, *d, sp::parse_attack(attack), seed);
    out["sparsity"] = sp::sparsity(ck.model);
    out["channel_sparsity"] = ck.model.groups().empty() ? 0.0 : sp::channel_sparsity(ck.model);
    out["small_weight_fraction"] = sp::small_weight_fraction(ck.model, 1e-3);
    out["examples"] = d->size();
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Relaxed splitting pruners with adversarial training";

    // Translators run newest first, so the base class goes in first.
    py::register_exception<sp::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<sp::ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<sp::ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<sp::ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<sp::FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<sp::IoError>(m, "IoError", PyExc_OSError);

    m.def("hard_threshold", [](const Array& w, double a) { return to_array(sp::hard_threshold(to_tensor(w), a)); },
          py::arg("w"), py::arg("a"));
    m.def("soft_threshold", [](const Array& w, double a) { return to_array(sp::soft_threshold(to_tensor(w), a)); },
          py::arg("w"), py::arg("a"));
    m.def("prox_group_lasso", [](const Array& g, double lam) {
        const sp::Tensor t = to_tensor(g);
        return sp::prox_group_lasso(t.data(), lam);
    }, py::arg("g"), py::arg("lam"));
    m.def("prox_group_l0", [](const Array& g, double lam) {
        const sp::Tensor t = to_tensor(g);
        return sp::prox_group_l0(t.data(), lam);
    }, py::arg("g"), py::arg("lam"));
    m.def("rvsm_threshold", &sp::rvsm_threshold, py::arg("lam"), py::arg("beta"));

    m.def("normalize_attack", [](const std::string& s) { return sp::to_string(sp::parse_attack(s)); }, py::arg("spec"));
    m.def("normalize_config", [](const std::string& text) {
        const sp::ExperimentConfig c = sp::parse_config(text);
        sp::validate(c);
        return sp::serialize(c);
    }, py::arg("text"), "Parse, validate and return the canonical config text.");
    m.def("config_hash", [](const std::string& text) { return sp::config_hash(sp::parse_config(text)); }, py::arg("text"));

    m.def("make_blobs", [](std::size_t n, std::size_t classes, std::size_t dim, double spread, std::uint64_t seed) {
        const sp::Dataset d = sp::make_blobs(n, classes, dim, spread, seed);
        return py::make_tuple(to_array(d.inputs), d.labels);
    }, py::arg("n_per_class"), py::arg("classes"), py::arg("dim"), py::arg("spread"), py::arg("seed"));

    m.def("train", &train, py::arg("config_text"), py::arg("seed") = 0, py::arg("output_dir") = "",
          "Run one experiment. Files are written only when output_dir is given.");
    m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("attack") = "none", py::arg("split") = "test",
          py::arg("seed") = 0);
    m.def("histogram_svg", [](const std::string& checkpoint, double lo, double hi, std::size_t bins) {
        return sp::histogram_svg(sp::load_checkpoint(checkpoint).model, lo, hi, bins);
    }, py::arg("checkpoint"), py::arg("lo") = -0.5, py::arg("hi") = 0.5, py::arg("bins") = 100);
}
