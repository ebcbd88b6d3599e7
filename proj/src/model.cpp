#include "splitprune/model.hpp"

#include <cmath>
#include <string>

#include "splitprune/errors.hpp"

namespace splitprune {

namespace {

Shape next_shape(const Shape& cur, const LayerSpec& l, std::size_t index) {
    auto fail = [&](const std::string& what) {
        throw DimensionError("layer " + std::to_string(index) + ": " + what + " (input shape " + shape_string(cur) + ")");
    };
    switch (l.kind) {
        case LayerKind::linear:
            if (l.in == 0 || l.out == 0) throw ParameterError("layer " + std::to_string(index) + ": zero width");
            if (cur.size() != 1 || cur[0] != l.in) fail("linear expects " + std::to_string(l.in) + " features");
            return {l.out};
        case LayerKind::residual:
            if (l.in == 0 || l.in != l.out) throw ParameterError("layer " + std::to_string(index) + ": residual width must be positive and square");
            if (cur.size() != 1 || cur[0] != l.in) fail("residual block expects " + std::to_string(l.in) + " features");
            return {l.out};
        case LayerKind::conv2d:
            if (l.in == 0 || l.out == 0 || l.kh == 0 || l.kw == 0)
                throw ParameterError("layer " + std::to_string(index) + ": zero conv dimension");
            if (cur.size() != 3 || cur[0] != l.in) fail("conv2d expects " + std::to_string(l.in) + " channels");
            if (l.kh > cur[1] || l.kw > cur[2]) fail("kernel larger than input");
            return {l.out, cur[1] - l.kh + 1, cur[2] - l.kw + 1};
        case LayerKind::relu:
            return cur;
        case LayerKind::flatten:
            return {shape_size(cur)};
    }
    fail("unknown layer kind");
    return {};
}

std::size_t fan_in(const LayerSpec& l) {
    return l.kind == LayerKind::conv2d ? l.in * l.kh * l.kw : l.in;
}

}  // namespace

Model::Model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t members, double noise_sigma)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), members_(members), sigma_(noise_sigma) {
    if (members_ == 0) throw ParameterError("model needs at least one member");
    if (!(sigma_ >= 0.0)) throw ParameterError("noise sigma must be >= 0");
    if (layers_.empty()) throw ParameterError("model needs at least one layer");
    if (input_shape_.empty()) throw DimensionError("empty input shape");

    Shape cur = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) cur = next_shape(cur, layers_[i], i);
    if (cur.size() != 1) throw DimensionError("model output must be a feature vector, got " + shape_string(cur));

    const std::size_t L = layers_.size();
    weight_ids_.assign(members_ * L, kNoParam);
    bias_ids_.assign(members_ * L, kNoParam);
    for (std::size_t m = 0; m < members_; ++m) {
        for (std::size_t i = 0; i < L; ++i) {
            const LayerSpec& l = layers_[i];
            if (!l.has_parameters()) continue;
            const std::size_t global = m * L + i;
            const std::string prefix = "m" + std::to_string(m) + ".l" + std::to_string(i);
            Shape wshape = l.kind == LayerKind::conv2d ? Shape{l.out, l.in, l.kh, l.kw} : Shape{l.out, l.in};
            weight_ids_[global] = params_.size();
            params_.push_back({prefix + ".weight", Tensor(wshape, 0.0), true, global});
            const std::size_t row = shape_size(wshape) / l.out;
            for (std::size_t g = 0; g < l.out; ++g) groups_.push_back({global, g, weight_ids_[global], g * row, row});
            bias_ids_[global] = params_.size();
            params_.push_back({prefix + ".bias", Tensor({l.out}, 0.0), false, global});
        }
    }
}

std::size_t Model::output_dim() const {
    Shape cur = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) cur = next_shape(cur, layers_[i], i);
    return cur[0];
}

bool Model::has_residual_blocks() const {
    for (const auto& l : layers_)
        if (l.kind == LayerKind::residual) return true;
    return false;
}

bool Model::skip_connections() const {
    for (const auto& l : layers_)
        if (l.kind == LayerKind::residual && l.skip) return true;
    return false;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

std::size_t Model::weight_id(std::size_t member, std::size_t layer) const {
    return weight_ids_.at(member * layers_.size() + layer);
}

std::size_t Model::bias_id(std::size_t member, std::size_t layer) const {
    return bias_ids_.at(member * layers_.size() + layer);
}

std::vector<Tensor> Model::parameter_values() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
}

void Model::set_parameter_values(std::span<const Tensor> values) {
    if (values.size() != params_.size())
        throw ContractError("expected " + std::to_string(params_.size()) + " parameter tensors, got " +
                            std::to_string(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].shape() != params_[i].value.shape())
            throw DimensionError("parameter " + params_[i].name + " expects shape " +
                                 shape_string(params_[i].value.shape()) + ", got " + shape_string(values[i].shape()));
        params_[i].value = values[i];
    }
}

void Model::initialize(std::uint64_t seed) {
    Rng rng = make_rng(seed, StreamPurpose::init);
    for (auto& p : params_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(layers_[p.layer % layers_.size()])));
        std::uniform_real_distribution<double> uni(-bound, bound);
        for (auto& v : p.value.data()) v = uni(rng);
    }
}

void Model::strip_skips() {
    if (!has_residual_blocks()) throw ContractError("strip_skip_connections: model has no residual blocks");
    for (auto& l : layers_)
        if (l.kind == LayerKind::residual) l.skip = false;
}

Model build_mlp(std::span<const std::size_t> widths, Activation activation, std::uint64_t seed) {
    if (widths.size() < 2) throw ParameterError("build_mlp: need at least two widths");
    for (auto w : widths)
        if (w == 0) throw ParameterError("build_mlp: zero width");
    std::vector<LayerSpec> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        layers.push_back({LayerKind::linear, widths[i], widths[i + 1]});
        if (activation == Activation::relu && i + 2 < widths.size()) layers.push_back({LayerKind::relu});
    }
    Model m({widths[0]}, std::move(layers), 1, 0.0);
    m.initialize(seed);
    return m;
}

Model build_residual_ensemble(std::size_t members, const ResidualSpec& spec, double noise_sigma, std::uint64_t seed) {
    if (members == 0) throw ParameterError("build_residual_ensemble: ensemble size must be >= 1");
    if (!(noise_sigma >= 0.0)) throw ParameterError("build_residual_ensemble: sigma must be >= 0");
    if (spec.input_dim == 0 || spec.width == 0 || spec.classes == 0)
        throw ParameterError("build_residual_ensemble: zero dimension");
    std::vector<LayerSpec> layers;
    layers.push_back({LayerKind::linear, spec.input_dim, spec.width});
    layers.push_back({LayerKind::relu});
    for (std::size_t b = 0; b < spec.blocks; ++b) layers.push_back({LayerKind::residual, spec.width, spec.width, 0, 0, true});
    layers.push_back({LayerKind::linear, spec.width, spec.classes});
    Model m({spec.input_dim}, std::move(layers), members, noise_sigma);
    m.initialize(seed);
    return m;
}

Model build_conv_net(const ConvSpec& spec, std::uint64_t seed) {
    if (spec.conv_channels.empty()) throw ParameterError("build_conv_net: need at least one conv layer");
    std::vector<LayerSpec> layers;
    std::size_t c = spec.channels;
    for (auto co : spec.conv_channels) {
        layers.push_back({LayerKind::conv2d, c, co, spec.kernel, spec.kernel});
        layers.push_back({LayerKind::relu});
        c = co;
    }
    layers.push_back({LayerKind::flatten});
    // Infer flattened size from the layer chain.
    Model probe({spec.channels, spec.height, spec.width}, layers, 1, 0.0);
    layers.push_back({LayerKind::linear, probe.output_dim(), spec.classes});
    Model m({spec.channels, spec.height, spec.width}, std::move(layers), 1, 0.0);
    m.initialize(seed);
    return m;
}

Model strip_skip_connections(const Model& model) {
    Model out = model;
    out.strip_skips();
    return out;
}

std::vector<Var> bind_parameters(const Model& model, Tape& tape, bool requires_grad) {
    std::vector<Var> vars;
    vars.reserve(model.parameters().size());
    for (const auto& p : model.parameters()) vars.push_back(requires_grad ? tape.leaf(p.value) : tape.constant(p.value));
    return vars;
}

static void check_input(const Model& model, const Shape& s) {
    if (s.size() != model.input_shape().size() + 1 || !std::equal(model.input_shape().begin(), model.input_shape().end(), s.begin() + 1))
        throw DimensionError("model expects batches of " + shape_string(model.input_shape()) + ", got " + shape_string(s));
}

Var forward(const Model& model, Var input, std::span<const Var> params, Mode mode, Rng& rng) {
    check_input(model, input.shape());
    if (params.size() != model.parameters().size()) throw ContractError("forward: parameter binding size mismatch");
    const bool noisy = model.noise_sigma() > 0.0 && (mode == Mode::train || model.noise_at_eval());
    const auto& layers = model.layers();
    Var total{};
    for (std::size_t m = 0; m < model.members(); ++m) {
        Var x = input;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerSpec& l = layers[i];
            switch (l.kind) {
                case LayerKind::linear:
                    x = linear(x, params[model.weight_id(m, i)], params[model.bias_id(m, i)]);
                    break;
                case LayerKind::conv2d:
                    x = conv2d(x, params[model.weight_id(m, i)], params[model.bias_id(m, i)]);
                    break;
                case LayerKind::relu:
                    x = relu(x);
                    break;
                case LayerKind::flatten:
                    x = flatten(x);
                    break;
                case LayerKind::residual: {
                    Var h = relu(linear(x, params[model.weight_id(m, i)], params[model.bias_id(m, i)]));
                    if (l.skip) h = add(x, h);
                    if (noisy) h = add(h, gaussian_noise(*input.tape, h.shape(), model.noise_sigma(), rng));
                    x = h;
                    break;
                }
            }
        }
        total = m == 0 ? x : add(total, x);
    }
    return scale(total, 1.0 / static_cast<double>(model.members()));
}

Tensor predict(const Model& model, const Tensor& input, Mode mode, Rng& rng) {
    check_input(model, input.shape());
    const bool noisy = model.noise_sigma() > 0.0 && (mode == Mode::train || model.noise_at_eval());
    const auto& layers = model.layers();
    const auto& params = model.parameters();
    Tensor total;
    for (std::size_t m = 0; m < model.members(); ++m) {
        Tensor x = input;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerSpec& l = layers[i];
            switch (l.kind) {
                case LayerKind::linear:
                    x = linear_forward(x, params[model.weight_id(m, i)].value, params[model.bias_id(m, i)].value);
                    break;
                case LayerKind::conv2d:
                    x = conv2d_forward(x, params[model.weight_id(m, i)].value, &params[model.bias_id(m, i)].value);
                    break;
                case LayerKind::relu:
                    x = relu(x);
                    break;
                case LayerKind::flatten:
                    x = x.reshaped({x.dim(0), x.size() / x.dim(0)});
                    break;
                case LayerKind::residual: {
                    Tensor h = relu(linear_forward(x, params[model.weight_id(m, i)].value, params[model.bias_id(m, i)].value));
                    if (l.skip) h = add(x, h);
                    if (noisy) h = add(h, gaussian_tensor(h.shape(), model.noise_sigma(), rng));
                    x = std::move(h);
                    break;
                }
            }
        }
        total = m == 0 ? std::move(x) : add(total, x);
    }
    return scale(total, 1.0 / static_cast<double>(model.members()));
}

Tensor predict(const Model& model, const Tensor& input) {
    Rng unused(0);
    return predict(model, input, Mode::eval, unused);
}

std::vector<Tensor> parameter_gradients(const Model& model, std::span<const Var> params, const Gradients& grads) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto it = grads.find(params[i].id);
        out.push_back(it == grads.end() ? Tensor(model.parameters()[i].value.shape(), 0.0) : it->second);
    }
    return out;
}

}  // namespace splitprune
