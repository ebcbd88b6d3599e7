#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "splitprune/autodiff.hpp"
#include "splitprune/rng.hpp"
#include "splitprune/tensor.hpp"

namespace splitprune {

inline constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

enum class LayerKind : std::uint8_t {
    linear = 1,
    conv2d = 2,
    relu = 3,
    flatten = 4,
    // x -> [x +] relu(W x + b) [+ noise]
    residual = 5,
};

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in = 0;   // features or input channels
    std::size_t out = 0;  // features or output channels
    std::size_t kh = 0;
    std::size_t kw = 0;
    bool skip = true;  // residual only

    bool has_parameters() const {
        return kind == LayerKind::linear || kind == LayerKind::conv2d || kind == LayerKind::residual;
    }
    bool operator==(const LayerSpec&) const = default;
};

struct Parameter {
    std::string name;
    Tensor value;
    bool is_weight = false;
    std::size_t layer = 0;  // global layer index (member * layers_per_member + local)
};

// One prunable group: a contiguous run of a weight tensor (one output row of a
// linear layer or one output filter of a conv layer).
struct GroupLabel {
    std::size_t layer = 0;
    std::size_t group = 0;  // index within the layer
    std::size_t param = 0;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const GroupLabel&) const = default;
};

enum class Mode { train, eval };

enum class Activation { relu, identity };

// Layered model made of n independently parameterized members sharing one
// architecture; the output is the mean of the member logits.
class Model {
public:
    Model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t members, double noise_sigma);

    const Shape& input_shape() const noexcept { return input_shape_; }
    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    std::size_t members() const noexcept { return members_; }
    double noise_sigma() const noexcept { return sigma_; }
    bool noise_at_eval() const noexcept { return noise_at_eval_; }
    void set_noise_at_eval(bool on) { noise_at_eval_ = on; }
    std::size_t output_dim() const;

    bool has_residual_blocks() const;
    bool skip_connections() const;

    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    const std::vector<GroupLabel>& groups() const noexcept { return groups_; }
    std::size_t parameter_count() const;

    // Parameter ids for (member, local layer); kNoParam where absent.
    std::size_t weight_id(std::size_t member, std::size_t layer) const;
    std::size_t bias_id(std::size_t member, std::size_t layer) const;

    std::vector<Tensor> parameter_values() const;
    void set_parameter_values(std::span<const Tensor> values);

    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    void initialize(std::uint64_t seed);

    void strip_skips();

private:
    Shape input_shape_;
    std::vector<LayerSpec> layers_;
    std::size_t members_;
    double sigma_;
    bool noise_at_eval_ = false;
    std::vector<Parameter> params_;
    std::vector<GroupLabel> groups_;
    std::vector<std::size_t> weight_ids_;
    std::vector<std::size_t> bias_ids_;
};

Model build_mlp(std::span<const std::size_t> widths, Activation activation = Activation::relu, std::uint64_t seed = 0);

struct ResidualSpec {
    std::size_t input_dim = 2;
    std::size_t width = 16;
    std::size_t blocks = 2;
    std::size_t classes = 2;
};

Model build_residual_ensemble(std::size_t members, const ResidualSpec& spec, double noise_sigma, std::uint64_t seed = 0);

struct ConvSpec {
    std::size_t channels = 1;
    std::size_t height = 8;
    std::size_t width = 8;
    std::vector<std::size_t> conv_channels{8, 8};
    std::size_t kernel = 3;
    std::size_t classes = 4;
};

Model build_conv_net(const ConvSpec& spec, std::uint64_t seed = 0);

// Residual blocks become x -> relu(W x + b) (+ noise); registry unchanged.
Model strip_skip_connections(const Model& model);

std::vector<Var> bind_parameters(const Model& model, Tape& tape, bool requires_grad = true);

// Recorded forward. `input` is [N x input_shape...]. Noise is drawn from `rng`
// in train mode (and in eval mode when noise_at_eval is set).
Var forward(const Model& model, Var input, std::span<const Var> params, Mode mode, Rng& rng);

// Tape-free forward.
Tensor predict(const Model& model, const Tensor& input, Mode mode, Rng& rng);
Tensor predict(const Model& model, const Tensor& input);

// Collects per-parameter gradients from a backward pass over bound parameters.
std::vector<Tensor> parameter_gradients(const Model& model, std::span<const Var> params, const Gradients& grads);

}  // namespace splitprune
