#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "splitprune/rng.hpp"
#include "splitprune/tensor.hpp"

namespace splitprune {

class Tape;

enum class OpKind {
    leaf,
    constant,
    matmul,
    transpose,
    linear,
    conv2d,
    add,
    sub,
    mul,
    scale,
    relu,
    reshape,
    sum,
    mean_over_batch,
    half_squared_norm,
    softmax_cross_entropy,
    mean_squared_error,
};

// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

// Adjoints of the requires-grad leaves, keyed by node id.
using Gradients = std::map<std::size_t, Tensor>;

// Single-threaded reverse-mode tape. Node ids increase in creation order, which
// is a topological order because every op only references existing nodes.
class Tape {
public:
    // Backward rule: given the adjoint of the output, add contributions into the
    // adjoints of the inputs. A null entry means that input needs no gradient.
    using BackwardFn = std::function<void(const Tensor& out_adjoint, std::span<const Tensor* const> inputs,
                                          std::span<Tensor* const> input_adjoints)>;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value);

    Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
    bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Propagates adjoints from a scalar loss and returns the gradients of all
    // requires-grad leaves. The tape is cleared afterwards.
    Gradients backward(Var loss);

    void clear() { nodes_.clear(); }

private:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Tensor value;
        BackwardFn backward;
        bool needs_grad = false;
        bool is_leaf = false;
    };
    std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
// x[B x in] * W^T + b, with W stored [out x in] and b [out].
Var linear(Var x, Var weight, Var bias);
// Valid, stride-1 cross-correlation. x is [c_in x h x w] or [N x c_in x h x w];
// kernels [c_out x c_in x kh x kw]; optional bias [c_out].
Var conv2d(Var x, Var kernels);
Var conv2d(Var x, Var kernels, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var relu(Var x);
Var reshape(Var x, Shape shape);
// [N x ...] -> [N x prod(...)]
Var flatten(Var x);
Var sum(Var x);
Var mean_over_batch(Var x);
// 0.5 * ||x||^2
Var half_squared_norm(Var x);
// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
// Mean of squared differences against a constant target.
Var mean_squared_error(Var prediction, const Tensor& target);

// Constant node holding N(0, sigma^2) samples; sigma == 0 gives exact zeros
// without consuming randomness.
Var gaussian_noise(Tape& tape, const Shape& shape, double sigma, Rng& rng);
Tensor gaussian_tensor(const Shape& shape, double sigma, Rng& rng);

// Tape-free kernels shared by the ops and by eval-mode forwards.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor conv2d_forward(const Tensor& x, const Tensor& kernels, const Tensor* bias);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor softmax_rows(const Tensor& logits);
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace splitprune
