#include "splitprune/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "splitprune/errors.hpp"

namespace splitprune {

namespace {

std::string fmt(double v) { return format_double(v); }

template <typename T>
std::string join(const std::vector<T>& xs, char sep = ',') {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += sep;
        if constexpr (std::is_floating_point_v<T>) out += fmt(xs[i]);
        else out += std::to_string(xs[i]);
    }
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

const char* family_name(ModelFamily f) {
    switch (f) {
        case ModelFamily::mlp: return "mlp";
        case ModelFamily::residual: return "residual";
        case ModelFamily::conv: return "conv";
    }
    return "mlp";
}

const char* data_name(DataKind k) {
    switch (k) {
        case DataKind::blobs: return "blobs";
        case DataKind::spirals: return "spirals";
        case DataKind::tiny_images: return "tiny_images";
        case DataKind::csv: return "csv";
        case DataKind::idx: return "idx";
    }
    return "blobs";
}

}  // namespace

std::string serialize(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "# splitprune experiment config v1\n";
    os << "model.family=" << family_name(c.model.family) << '\n';
    os << "model.widths=" << join(c.model.widths) << '\n';
    os << "model.width=" << c.model.width << '\n';
    os << "model.blocks=" << c.model.blocks << '\n';
    os << "model.members=" << c.model.members << '\n';
    os << "model.sigma=" << fmt(c.model.sigma) << '\n';
    os << "model.skip=" << int(c.model.skip) << '\n';
    os << "model.eval_noise=" << int(c.model.eval_noise) << '\n';
    os << "model.conv_channels=" << join(c.model.conv_channels) << '\n';
    os << "model.kernel=" << c.model.kernel << '\n';
    os << "data.kind=" << data_name(c.data.kind) << '\n';
    os << "data.n_per_class=" << c.data.n_per_class << '\n';
    os << "data.classes=" << c.data.classes << '\n';
    os << "data.dim=" << c.data.dim << '\n';
    os << "data.spread=" << fmt(c.data.spread) << '\n';
    os << "data.turns=" << fmt(c.data.turns) << '\n';
    os << "data.noise=" << fmt(c.data.noise) << '\n';
    os << "data.height=" << c.data.height << '\n';
    os << "data.width=" << c.data.width << '\n';
    os << "data.channels=" << c.data.channels << '\n';
    os << "data.seed=" << c.data.seed << '\n';
    os << "data.path=" << c.data.path << '\n';
    os << "data.labels_path=" << c.data.labels_path << '\n';
    os << "data.header=" << int(c.data.header) << '\n';
    os << "data.test_fraction=" << fmt(c.data.test_fraction) << '\n';
    os << "data.val_fraction=" << fmt(c.data.val_fraction) << '\n';
    os << "train.attack=" << to_string(c.train_attack) << '\n';
    std::vector<std::string> evals;
    for (const auto& a : c.eval_attacks) evals.push_back(to_string(a));
    os << "eval.attacks=";
    for (std::size_t i = 0; i < evals.size(); ++i) os << (i ? ";" : "") << evals[i];
    os << '\n';
    os << "pruner.algorithm=" << to_string(c.pruner.algorithm) << '\n';
    os << "pruner.beta=" << fmt(c.pruner.beta) << '\n';
    os << "pruner.lambda=" << fmt(c.pruner.lambda) << '\n';
    os << "pruner.lambda1=" << fmt(c.pruner.lambda1) << '\n';
    os << "pruner.lambda2=" << fmt(c.pruner.lambda2) << '\n';
    os << "pruner.prox=" << to_string(c.pruner.prox) << '\n';
    os << "optim.lr=" << fmt(c.optim.lr) << '\n';
    os << "optim.momentum=" << fmt(c.optim.momentum) << '\n';
    os << "optim.epochs=" << c.optim.epochs << '\n';
    os << "optim.batch_size=" << c.optim.batch_size << '\n';
    os << "optim.decay_epochs=" << join(c.optim.decay_epochs) << '\n';
    os << "optim.decay_factor=" << fmt(c.optim.decay_factor) << '\n';
    os << "select.robust=" << int(c.select_robust) << '\n';
    os << "monitor.slack=" << fmt(c.monitor_slack) << '\n';
    os << "report.time=" << int(c.record_time) << '\n';
    os << "seed=" << c.seed << '\n';
    os << "output_dir=" << c.output_dir << '\n';
    return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;

    auto num = [&](const std::string& v, const std::string& key) {
        std::size_t used = 0;
        double d = 0.0;
        try {
            d = std::stod(v, &used);
        } catch (const std::logic_error&) {
            used = 0;
        }
        if (used == 0 || used != v.size())
            throw ParseError("config line " + std::to_string(line_no) + ": '" + key + "' expects a number, got '" + v + "'");
        return d;
    };
    auto uint = [&](const std::string& v, const std::string& key) -> std::uint64_t {
        std::size_t used = 0;
        unsigned long long d = 0;
        try {
            d = std::stoull(v, &used);
        } catch (const std::logic_error&) {
            used = 0;
        }
        if (used == 0 || used != v.size() || v.front() == '-')
            throw ParseError("config line " + std::to_string(line_no) + ": '" + key + "' expects a non-negative integer, got '" + v + "'");
        return d;
    };
    auto flag = [&](const std::string& v, const std::string& key) {
        if (v == "1" || v == "true") return true;
        if (v == "0" || v == "false") return false;
        throw ParseError("config line " + std::to_string(line_no) + ": '" + key + "' expects 0/1, got '" + v + "'");
    };
    auto sizes = [&](const std::string& v, const std::string& key) {
        std::vector<std::size_t> out;
        for (const auto& s : split(v, ',')) out.push_back(static_cast<std::size_t>(uint(trim(s), key)));
        return out;
    };

    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters{
        {"model.family", [&](auto& v, auto&) {
             if (v == "mlp") c.model.family = ModelFamily::mlp;
             else if (v == "residual") c.model.family = ModelFamily::residual;
             else if (v == "conv") c.model.family = ModelFamily::conv;
             else throw ParseError("config line " + std::to_string(line_no) + ": unknown model family '" + v + "'");
         }},
        {"model.widths", [&](auto& v, auto& k) { c.model.widths = sizes(v, k); }},
        {"model.width", [&](auto& v, auto& k) { c.model.width = uint(v, k); }},
        {"model.blocks", [&](auto& v, auto& k) { c.model.blocks = uint(v, k); }},
        {"model.members", [&](auto& v, auto& k) { c.model.members = uint(v, k); }},
        {"model.sigma", [&](auto& v, auto& k) { c.model.sigma = num(v, k); }},
        {"model.skip", [&](auto& v, auto& k) { c.model.skip = flag(v, k); }},
        {"model.eval_noise", [&](auto& v, auto& k) { c.model.eval_noise = flag(v, k); }},
        {"model.conv_channels", [&](auto& v, auto& k) { c.model.conv_channels = sizes(v, k); }},
        {"model.kernel", [&](auto& v, auto& k) { c.model.kernel = uint(v, k); }},
        {"data.kind", [&](auto& v, auto&) {
             if (v == "blobs") c.data.kind = DataKind::blobs;
             else if (v == "spirals") c.data.kind = DataKind::spirals;
             else if (v == "tiny_images") c.data.kind = DataKind::tiny_images;
             else if (v == "csv") c.data.kind = DataKind::csv;
             else if (v == "idx") c.data.kind = DataKind::idx;
             else throw ParseError("config line " + std::to_string(line_no) + ": unknown data kind '" + v + "'");
         }},
        {"data.n_per_class", [&](auto& v, auto& k) { c.data.n_per_class = uint(v, k); }},
        {"data.classes", [&](auto& v, auto& k) { c.data.classes = uint(v, k); }},
        {"data.dim", [&](auto& v, auto& k) { c.data.dim = uint(v, k); }},
        {"data.spread", [&](auto& v, auto& k) { c.data.spread = num(v, k); }},
        {"data.turns", [&](auto& v, auto& k) { c.data.turns = num(v, k); }},
        {"data.noise", [&](auto& v, auto& k) { c.data.noise = num(v, k); }},
        {"data.height", [&](auto& v, auto& k) { c.data.height = uint(v, k); }},
        {"data.width", [&](auto& v, auto& k) { c.data.width = uint(v, k); }},
        {"data.channels", [&](auto& v, auto& k) { c.data.channels = uint(v, k); }},
        {"data.seed", [&](auto& v, auto& k) { c.data.seed = uint(v, k); }},
        {"data.path", [&](auto& v, auto&) { c.data.path = v; }},
        {"data.labels_path", [&](auto& v, auto&) { c.data.labels_path = v; }},
        {"data.header", [&](auto& v, auto& k) { c.data.header = flag(v, k); }},
        {"data.test_fraction", [&](auto& v, auto& k) { c.data.test_fraction = num(v, k); }},
        {"data.val_fraction", [&](auto& v, auto& k) { c.data.val_fraction = num(v, k); }},
        {"train.attack", [&](auto& v, auto&) { c.train_attack = parse_attack(v); }},
        {"eval.attacks", [&](auto& v, auto&) {
             c.eval_attacks.clear();
             for (const auto& a : split(v, ';')) c.eval_attacks.push_back(parse_attack(trim(a)));
         }},
        {"pruner.algorithm", [&](auto& v, auto&) { c.pruner.algorithm = parse_algorithm(v); }},
        {"pruner.beta", [&](auto& v, auto& k) { c.pruner.beta = num(v, k); }},
        {"pruner.lambda", [&](auto& v, auto& k) { c.pruner.lambda = num(v, k); }},
        {"pruner.lambda1", [&](auto& v, auto& k) { c.pruner.lambda1 = num(v, k); }},
        {"pruner.lambda2", [&](auto& v, auto& k) { c.pruner.lambda2 = num(v, k); }},
        {"pruner.prox", [&](auto& v, auto&) { c.pruner.prox = parse_group_prox(v); }},
        {"optim.lr", [&](auto& v, auto& k) { c.optim.lr = num(v, k); }},
        {"optim.momentum", [&](auto& v, auto& k) { c.optim.momentum = num(v, k); }},
        {"optim.epochs", [&](auto& v, auto& k) { c.optim.epochs = static_cast<int>(uint(v, k)); }},
        {"optim.batch_size", [&](auto& v, auto& k) { c.optim.batch_size = uint(v, k); }},
        {"optim.decay_epochs", [&](auto& v, auto& k) {
             c.optim.decay_epochs.clear();
             for (auto e : sizes(v, k)) c.optim.decay_epochs.push_back(static_cast<int>(e));
         }},
        {"optim.decay_factor", [&](auto& v, auto& k) { c.optim.decay_factor = num(v, k); }},
        {"select.robust", [&](auto& v, auto& k) { c.select_robust = flag(v, k); }},
        {"monitor.slack", [&](auto& v, auto& k) { c.monitor_slack = num(v, k); }},
        {"report.time", [&](auto& v, auto& k) { c.record_time = flag(v, k); }},
        {"seed", [&](auto& v, auto& k) { c.seed = uint(v, k); }},
        {"output_dir", [&](auto& v, auto&) { c.output_dir = v; }},
    };

    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("config line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw ParseError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        try {
            it->second(value, key);
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const Error& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& m) { throw ValidationError(m); };
    if (c.model.family == ModelFamily::mlp && c.model.widths.size() < 2) fail("model.widths needs at least two entries");
    for (auto w : c.model.widths)
        if (w == 0) fail("model.widths contains a zero width");
    if (c.model.members == 0) fail("model.members must be >= 1");
    if (!(c.model.sigma >= 0.0)) fail("model.sigma must be >= 0");
    if (c.model.family == ModelFamily::residual && c.model.width == 0) fail("model.width must be > 0");
    if (c.model.family == ModelFamily::conv && (c.model.conv_channels.empty() || c.model.kernel == 0))
        fail("conv model needs channels and a positive kernel");
    if (c.optim.epochs < 1) fail("optim.epochs must be >= 1");
    if (c.optim.batch_size == 0) fail("optim.batch_size must be >= 1");
    if (!(c.optim.lr > 0.0)) fail("optim.lr must be > 0");
    if (!(c.optim.momentum >= 0.0 && c.optim.momentum < 1.0)) fail("optim.momentum must be in [0, 1)");
    if (!(c.optim.decay_factor > 0.0)) fail("optim.decay_factor must be > 0");
    for (int e : c.optim.decay_epochs)
        if (e >= c.optim.epochs) fail("decay epoch " + std::to_string(e) + " is not below the epoch count");
    if (!(c.data.val_fraction > 0.0 && c.data.val_fraction < 1.0)) fail("data.val_fraction must be in (0, 1)");
    if (!(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0)) fail("data.test_fraction must be in (0, 1)");
    if (c.eval_attacks.size() != 2) fail("eval.attacks must list exactly two attacks (the A2 and A3 columns)");
    validate(c.train_attack);
    for (const auto& a : c.eval_attacks) validate(a);
    if (!(c.monitor_slack >= 0.0)) fail("monitor.slack must be >= 0");
    PrunerHyper h{c.pruner.beta, c.pruner.lambda, c.pruner.lambda1, c.pruner.lambda2, c.optim.lr, c.pruner.prox};
    try {
        make_pruner_state(c.pruner.algorithm, h, {}, {});
    } catch (const Error& e) {
        fail(std::string("pruner: ") + e.what());
    }
}

std::string config_hash(const ExperimentConfig& c) {
    // Where a run is written does not change what it computes.
    ExperimentConfig keyed = c;
    keyed.output_dir.clear();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : serialize(keyed)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double learning_rate(const OptimConfig& o, int epoch) {
    double lr = o.lr;
    for (int d : o.decay_epochs)
        if (d <= epoch) lr *= o.decay_factor;
    return lr;
}

Model build_model(const ModelConfig& m, const Shape& example_shape, std::size_t classes, std::uint64_t init_seed) {
    const std::size_t features = shape_size(example_shape);
    Model model = [&]() -> Model {
        switch (m.family) {
            case ModelFamily::mlp: {
                if (example_shape.size() != 1) throw ValidationError("mlp needs flat feature vectors, data is " + shape_string(example_shape));
                if (m.widths.front() != features || m.widths.back() != classes)
                    throw ValidationError("model.widths must start at " + std::to_string(features) + " features and end at " +
                                          std::to_string(classes) + " classes");
                return build_mlp(m.widths, Activation::relu, init_seed);
            }
            case ModelFamily::residual: {
                if (example_shape.size() != 1) throw ValidationError("residual net needs flat feature vectors, data is " + shape_string(example_shape));
                Model r = build_residual_ensemble(m.members, {features, m.width, m.blocks, classes}, m.sigma, init_seed);
                return m.skip ? r : strip_skip_connections(r);
            }
            case ModelFamily::conv: {
                if (example_shape.size() != 3) throw ValidationError("conv net needs [c x h x w] examples, data is " + shape_string(example_shape));
                return build_conv_net({example_shape[0], example_shape[1], example_shape[2], m.conv_channels, m.kernel, classes}, init_seed);
            }
        }
        throw ValidationError("unknown model family");
    }();
    model.set_noise_at_eval(m.eval_noise);
    return model;
}

Dataset load_dataset(const DataConfig& d) {
    switch (d.kind) {
        case DataKind::blobs: return make_blobs(d.n_per_class, d.classes, d.dim, d.spread, d.seed);
        case DataKind::spirals: return make_spirals(d.n_per_class, d.turns, d.noise, d.seed);
        case DataKind::tiny_images: return make_tiny_images(d.n_per_class, d.classes, d.height, d.width, d.seed, d.channels, d.noise);
        case DataKind::csv: {
            Dataset ds = load_csv(d.path, d.header);
            validate(ds);
            return ds;
        }
        case DataKind::idx: return load_idx(d.path, d.labels_path);
    }
    throw ValidationError("unknown data kind");
}

DataSplits make_splits(const DataConfig& d) {
    const Dataset all = load_dataset(d);
    Split outer = split_train_val(all, d.test_fraction, derive_seed(d.seed, StreamPurpose::split, 0));
    Split inner = split_train_val(outer.train, d.val_fraction, derive_seed(d.seed, StreamPurpose::split, 1));
    return {std::move(inner.train), std::move(inner.val), std::move(outer.val)};
}

}  // namespace splitprune
