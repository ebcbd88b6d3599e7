#include "splitprune/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "splitprune/errors.hpp"

namespace splitprune {

const Tensor& Var::value() const {
    if (!tape) throw ContractError("Var is not attached to a tape");
    return tape->value(id);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n{OpKind::leaf, {}, std::move(value), nullptr, requires_grad, true};
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    Node n{OpKind::constant, {}, std::move(value), nullptr, false, true};
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (auto id : inputs) {
        if (id >= nodes_.size()) throw ContractError("op input refers to a node not on this tape");
        needs = needs || nodes_[id].needs_grad;
    }
    Node n{kind, std::move(inputs), std::move(value), std::move(backward), needs, false};
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) {
    if (loss.tape != this) throw ContractError("loss belongs to a different tape");
    if (value(loss.id).size() != 1)
        throw ContractError("backward requires a scalar loss, got shape " + shape_string(value(loss.id).shape()));

    std::vector<Tensor> adjoints(nodes_.size());
    adjoints[loss.id] = Tensor(value(loss.id).shape(), 1.0);

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_adjoints;
    for (std::size_t k = loss.id + 1; k-- > 0;) {
        Node& node = nodes_[k];
        if (node.is_leaf || !node.needs_grad || adjoints[k].empty()) continue;
        in_values.clear();
        in_adjoints.clear();
        for (auto id : node.inputs) {
            in_values.push_back(&nodes_[id].value);
            if (nodes_[id].needs_grad) {
                if (adjoints[id].empty()) adjoints[id] = Tensor(nodes_[id].value.shape(), 0.0);
                in_adjoints.push_back(&adjoints[id]);
            } else {
                in_adjoints.push_back(nullptr);
            }
        }
        node.backward(adjoints[k], in_values, in_adjoints);
    }

    Gradients grads;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
        const Node& node = nodes_[k];
        if (node.is_leaf && node.needs_grad)
            grads.emplace(k, adjoints[k].empty() ? Tensor(node.value.shape(), 0.0) : std::move(adjoints[k]));
    }
    clear();
    return grads;
}

namespace {

void require_same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

void accumulate(Tensor* into, const Tensor& g) {
    if (!into) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*into)[i] += g[i];
}

}  // namespace

// ---- tape-free kernels ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n}, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
        }
    return out;
}

static void check_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                             shape_string(w.shape()));
    if (b.size() != w.dim(0))
        throw DimensionError("linear: bias " + shape_string(b.shape()) + " incompatible with weight " +
                             shape_string(w.shape()));
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_linear(x, w, b);
    const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
    Tensor y({batch, out}, 0.0);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * x[n * in + i];
            y[n * out + o] = s + b[o];
        }
    return y;
}

namespace {

struct ConvDims {
    std::size_t batch, c_in, h, w, c_out, kh, kw, oh, ow;
    bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k) {
    if (k.rank() != 4)
        throw DimensionError("conv2d: kernels must be [c_out x c_in x kh x kw], got " + shape_string(k.shape()));
    ConvDims d{};
    if (x.rank() == 3) {
        d.batched = false;
        d.batch = 1;
        d.c_in = x.dim(0), d.h = x.dim(1), d.w = x.dim(2);
    } else if (x.rank() == 4) {
        d.batched = true;
        d.batch = x.dim(0);
        d.c_in = x.dim(1), d.h = x.dim(2), d.w = x.dim(3);
    } else {
        throw DimensionError("conv2d: input must be [c x h x w] or [N x c x h x w], got " + shape_string(x.shape()));
    }
    d.c_out = k.dim(0), d.kh = k.dim(2), d.kw = k.dim(3);
    if (k.dim(1) != d.c_in)
        throw DimensionError("conv2d: input " + shape_string(x.shape()) + " has wrong channel count for kernels " +
                             shape_string(k.shape()));
    if (d.kh > d.h || d.kw > d.w)
        throw DimensionError("conv2d: kernel " + shape_string(k.shape()) + " larger than input " +
                             shape_string(x.shape()));
    d.oh = d.h - d.kh + 1;
    d.ow = d.w - d.kw + 1;
    return d;
}

Shape conv_out_shape(const ConvDims& d) {
    if (d.batched) return {d.batch, d.c_out, d.oh, d.ow};
    return {d.c_out, d.oh, d.ow};
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& k, const Tensor* bias) {
    const ConvDims d = conv_dims(x, k);
    if (bias && bias->size() != d.c_out)
        throw DimensionError("conv2d: bias " + shape_string(bias->shape()) + " does not match " +
                             std::to_string(d.c_out) + " output channels");
    Tensor y(conv_out_shape(d), 0.0);
    const std::size_t in_plane = d.h * d.w, out_plane = d.oh * d.ow, k_plane = d.kh * d.kw;
    for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t co = 0; co < d.c_out; ++co) {
            double* out = &y[(n * d.c_out + co) * out_plane];
            if (bias) std::fill(out, out + out_plane, (*bias)[co]);
            for (std::size_t ci = 0; ci < d.c_in; ++ci) {
                const double* in = &x[(n * d.c_in + ci) * in_plane];
                const double* ker = &k[(co * d.c_in + ci) * k_plane];
                for (std::size_t a = 0; a < d.kh; ++a)
                    for (std::size_t b = 0; b < d.kw; ++b) {
                        const double kv = ker[a * d.kw + b];
                        for (std::size_t i = 0; i < d.oh; ++i) {
                            const double* row = in + (i + a) * d.w + b;
                            double* orow = out + i * d.ow;
                            for (std::size_t j = 0; j < d.ow; ++j) orow[j] += kv * row[j];
                        }
                    }
            }
        }
    return y;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor y = a;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    return y;
}

Tensor scale(const Tensor& x, double s) {
    Tensor y = x;
    for (auto& v : y.data()) v *= s;
    return y;
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("softmax: logits must be [batch x classes], got " + shape_string(logits.shape()));
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    Tensor p = logits;
    for (std::size_t n = 0; n < batch; ++n) {
        double* row = &p[n * classes];
        const double mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += (row[c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < classes; ++c) row[c] /= z;
    }
    return p;
}

static void check_labels(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2)
        throw DimensionError("softmax_cross_entropy: logits must be [batch x classes], got " + shape_string(logits.shape()));
    if (labels.size() != logits.dim(0))
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             shape_string(logits.shape()));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1))
            throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(logits.dim(1)) + ")");
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        const double* row = &logits[n * classes];
        const double mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
        total += std::log(z) + mx - row[labels[n]];
    }
    return total / static_cast<double>(batch);
}

Tensor gaussian_tensor(const Shape& shape, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) throw ParameterError("gaussian_noise: sigma must be >= 0, got " + std::to_string(sigma));
    Tensor t(shape, 0.0);
    if (sigma == 0.0) return t;
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto& v : t.data()) v = normal(rng);
    return t;
}

// ---- recorded ops ----

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    Tensor out = matmul(a.value(), b.value());
    return a.tape->record(OpKind::matmul, std::move(out), {a.id, b.id},
                          [](const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> adj) {
                              const Tensor& A = *in[0];
                              const Tensor& B = *in[1];
                              const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
                              if (adj[0])
                                  for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t p = 0; p < k; ++p) {
                                          double s = 0.0;
                                          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                                          (*adj[0])[i * k + p] += s;
                                      }
                              if (adj[1])
                                  for (std::size_t p = 0; p < k; ++p)
                                      for (std::size_t j = 0; j < n; ++j) {
                                          double s = 0.0;
                                          for (std::size_t i = 0; i < m; ++i) s += A[i * k + p] * g[i * n + j];
                                          (*adj[1])[p * n + j] += s;
                                      }
                          });
}

Var transpose(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_string(x.shape()));
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor out({c, r}, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return a.tape->record(OpKind::transpose, std::move(out), {a.id},
                          [r, c](const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> adj) {
                              for (std::size_t i = 0; i < r; ++i)
                                  for (std::size_t j = 0; j < c; ++j) (*adj[0])[i * c + j] += g[j * r + i];
                          });
}

Var linear(Var x, Var weight, Var bias) {
    require_same_tape(x, weight);
    require_same_tape(x, bias);
    Tensor out = linear_forward(x.value(), weight.value(), bias.value());
    return x.tape->record(
        OpKind::linear, std::move(out), {x.id, weight.id, bias.id},
        [](const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> adj) {
            const Tensor& X = *in[0];
            const Tensor& W = *in[1];
            const std::size_t batch = X.dim(0), nin = X.dim(1), nout = W.dim(0);
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t o = 0; o < nout; ++o) {
                    const double go = g[n * nout + o];
                    if (go == 0.0) continue;
                    if (adj[0])
                        for (std::size_t i = 0; i < nin; ++i) (*adj[0])[n * nin + i] += go * W[o * nin + i];
                    if (adj[1])
                        for (std::size_t i = 0; i < nin; ++i) (*adj[1])[o * nin + i] += go * X[n * nin + i];
                    if (adj[2]) (*adj[2])[o] += go;
                }
        });
}

static Tape::BackwardFn conv_backward(ConvDims d, bool has_bias) {
    return [d, has_bias](const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> adj) {
        const Tensor& X = *in[0];
        const Tensor& K = *in[1];
        const std::size_t in_plane = d.h * d.w, out_plane = d.oh * d.ow, k_plane = d.kh * d.kw;
        for (std::size_t n = 0; n < d.batch; ++n)
            for (std::size_t co = 0; co < d.c_out; ++co) {
                const double* go = &g[(n * d.c_out + co) * out_plane];
                if (has_bias && adj[2]) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < out_plane; ++p) s += go[p];
                    (*adj[2])[co] += s;
                }
                for (std::size_t ci = 0; ci < d.c_in; ++ci) {
                    const std::size_t xoff = (n * d.c_in + ci) * in_plane;
                    const std::size_t koff = (co * d.c_in + ci) * k_plane;
                    for (std::size_t a = 0; a < d.kh; ++a)
                        for (std::size_t b = 0; b < d.kw; ++b) {
                            const double kv = K[koff + a * d.kw + b];
                            double ks = 0.0;
                            for (std::size_t i = 0; i < d.oh; ++i) {
                                const std::size_t xrow = xoff + (i + a) * d.w + b;
                                const double* grow = go + i * d.ow;
                                for (std::size_t j = 0; j < d.ow; ++j) {
                                    ks += grow[j] * X[xrow + j];
                                    if (adj[0]) (*adj[0])[xrow + j] += grow[j] * kv;
                                }
                            }
                            if (adj[1]) (*adj[1])[koff + a * d.kw + b] += ks;
                        }
                }
            }
    };
}

Var conv2d(Var x, Var kernels) {
    require_same_tape(x, kernels);
    const ConvDims d = conv_dims(x.value(), kernels.value());
    Tensor out = conv2d_forward(x.value(), kernels.value(), nullptr);
    return x.tape->record(OpKind::conv2d, std::move(out), {x.id, kernels.id}, conv_backward(d, false));
}

Var conv2d(Var x, Var kernels, Var bias) {
    require_same_tape(x, kernels);
    require_same_tape(x, bias);
    const ConvDims d = conv_dims(x.value(), kernels.value());
    Tensor out = conv2d_forward(x.value(), kernels.value(), &bias.value());
    return x.tape->record(OpKind::conv2d, std::move(out), {x.id, kernels.id, bias.id}, conv_backward(d, true));
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    Tensor out = add(a.value(), b.value());
    return a.tape->record(OpKind::add, std::move(out), {a.id, b.id},
                          [](const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> adj) {
                              accumulate(adj[0], g);
                              accumulate(adj[1], g);
                          });
}

Var sub(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape->record(OpKind::sub, std::move(out), {a.id, b.id},
                          [](const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> adj) {
                              accumulate(adj[0], g);
                              if (adj[1])
                                  for (std::size_t i = 0; i < g.size(); ++i) (*adj[1])[i] -= g[i];
                          });
}

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape->record(OpKind::mul, std::move(out), {a.id, b.id},
                          [](const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> adj) {
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  if (adj[0]) (*adj[0])[i] += g[i] * (*in[1])[i];
                                  if (adj[1]) (*adj[1])[i] += g[i] * (*in[0])[i];
                              }
                          });
}

Var scale(Var x, double s) {
    Tensor out = scale(x.value(), s);
    return x.tape->record(OpKind::scale, std::move(out), {x.id},
                          [s](const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> adj) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*adj[0])[i] += s * g[i];
                          });
}

Var relu(Var x) {
    Tensor out = relu(x.value());
    return x.tape->record(OpKind::relu, std::move(out), {x.id},
                          [](const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> adj) {
                              for (std::size_t i = 0; i < g.size(); ++i)
                                  if ((*in[0])[i] > 0.0) (*adj[0])[i] += g[i];
                          });
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape->record(OpKind::reshape, std::move(out), {x.id},
                          [](const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> adj) {
                              accumulate(adj[0], g);
                          });
}

Var flatten(Var x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw DimensionError("flatten: expected a batched tensor, got " + shape_string(s));
    return reshape(x, {s[0], shape_size(s) / s[0]});
}

Var sum(Var x) {
    Tensor out = Tensor::scalar(sum(x.value()));
    return x.tape->record(OpKind::sum, std::move(out), {x.id},
                          [](const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> adj) {
                              for (auto& v : adj[0]->data()) v += g[0];
                          });
}

Var mean_over_batch(Var x) {
    const Tensor& v = x.value();
    if (v.rank() < 2) throw DimensionError("mean_over_batch: expected [N x ...], got " + shape_string(v.shape()));
    const std::size_t batch = v.dim(0), inner = v.size() / batch;
    Shape rest(v.shape().begin() + 1, v.shape().end());
    Tensor out(rest, 0.0);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < inner; ++i) out[i] += v[n * inner + i];
    const double inv = 1.0 / static_cast<double>(batch);
    for (auto& e : out.data()) e *= inv;
    return x.tape->record(OpKind::mean_over_batch, std::move(out), {x.id},
                          [batch, inner, inv](const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> adj) {
                              for (std::size_t n = 0; n < batch; ++n)
                                  for (std::size_t i = 0; i < inner; ++i) (*adj[0])[n * inner + i] += inv * g[i];
                          });
}

Var half_squared_norm(Var x) {
    Tensor out = Tensor::scalar(0.5 * squared_norm(x.value()));
    return x.tape->record(OpKind::half_squared_norm, std::move(out), {x.id},
                          [](const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> adj) {
                              for (std::size_t i = 0; i < in[0]->size(); ++i) (*adj[0])[i] += g[0] * (*in[0])[i];
                          });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const double loss = softmax_cross_entropy(logits.value(), labels);
    std::vector<int> ys(labels.begin(), labels.end());
    return logits.tape->record(
        OpKind::softmax_cross_entropy, Tensor::scalar(loss), {logits.id},
        [ys = std::move(ys)](const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> adj) {
            Tensor p = softmax_rows(*in[0]);
            const std::size_t batch = p.dim(0), classes = p.dim(1);
            const double s = g[0] / static_cast<double>(batch);
            for (std::size_t n = 0; n < batch; ++n) {
                p[n * classes + ys[n]] -= 1.0;
                for (std::size_t c = 0; c < classes; ++c) (*adj[0])[n * classes + c] += s * p[n * classes + c];
            }
        });
}

Var mean_squared_error(Var prediction, const Tensor& target) {
    require_same_shape(prediction.value(), target, "mean_squared_error");
    const Tensor& p = prediction.value();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - target[i]) * (p[i] - target[i]);
    const double inv = 1.0 / static_cast<double>(p.size());
    return prediction.tape->record(
        OpKind::mean_squared_error, Tensor::scalar(s * inv), {prediction.id},
        [target, inv](const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> adj) {
            for (std::size_t i = 0; i < target.size(); ++i)
                (*adj[0])[i] += g[0] * 2.0 * inv * ((*in[0])[i] - target[i]);
        });
}

Var gaussian_noise(Tape& tape, const Shape& shape, double sigma, Rng& rng) {
    return tape.constant(gaussian_tensor(shape, sigma, rng));
}

}  // namespace splitprune
