#include <doctest.h>

#include <cmath>
#include <numeric>

#include "splitprune/autodiff.hpp"
#include "splitprune/errors.hpp"
#include "splitprune/model.hpp"
#include "test_support.hpp"

using namespace splitprune;
using testing::fd_relative_error;
using testing::random_tensor;

namespace {

// Gradient of sum(op(leaf)) with respect to the leaf, via the tape.
Tensor grad_of(const std::function<Var(Var)>& op, const Tensor& at) {
    Tape tape;
    Var x = tape.leaf(at, true);
    return tape.backward(sum(op(x))).at(x.id);
}

double value_of(const std::function<Var(Var)>& op, const Tensor& at) {
    Tape tape;
    return sum(op(tape.leaf(at, false))).value().item();
}

// Quadruple-loop valid cross-correlation, written independently of the kernel.
Tensor naive_conv(const Tensor& x, const Tensor& k) {
    const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor y({co, oh, ow});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t a = 0; a < kh; ++a)
                        for (std::size_t b = 0; b < kw; ++b)
                            s += x[(c * h + i + a) * w + j + b] * k[((o * ci + c) * kh + a) * kw + b];
                y[(o * oh + i) * ow + j] = s;
            }
    return y;
}

}  // namespace

TEST_SUITE("tensor") {
    TEST_CASE("shape invariants") {
        Tensor t({2, 3}, 1.5);
        CHECK(t.size() == 6);
        CHECK(shape_string(t.shape()) == "[2x3]");
        CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
        CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
        CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
        CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
    }

    TEST_CASE("reductions") {
        const Tensor a = Tensor::vector({3, -4});
        CHECK(sum(a) == -1.0);
        CHECK(squared_norm(a) == 25.0);
        CHECK(max_abs(a) == 4.0);
        CHECK(dot(a, a) == 25.0);
    }
}

TEST_SUITE("autodiff") {
    TEST_CASE("matmul examples") {
        const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
        const Tensor col = Tensor::matrix({{3}, {4}});
        CHECK(matmul(id, col) == col);
        CHECK(matmul(Tensor::matrix({{1, 2}}), col).item() == 11.0);
        CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
        try {
            matmul(Tensor({2, 3}), Tensor({2, 3}));
        } catch (const DimensionError& e) {
            CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
        }
    }

    TEST_CASE("matmul gradient equals ones times b transpose") {
        Rng rng(11);
        const Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
        Tape tape;
        Var va = tape.leaf(a), vb = tape.leaf(b);
        const auto g = tape.backward(sum(matmul(va, vb)));
        // ones(4x3) * b^T
        Tensor bt({3, 5});
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 3; ++j) bt[j * 5 + i] = b[i * 3 + j];
        CHECK(max_abs_diff(g.at(va.id), matmul(Tensor({4, 3}, 1.0), bt)) < 1e-14);
        auto f = [&](const Tensor& t) { return sum(matmul(t, b)); };
        CHECK(fd_relative_error(f, a, g.at(va.id)) < 1e-6);
    }

    TEST_CASE("conv2d examples") {
        CHECK(conv2d_forward(Tensor({1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0), nullptr).item() == 9.0);

        Rng rng(3);
        const Tensor x = random_tensor({1, 5, 5}, rng);
        Tensor delta({1, 1, 3, 3}, 0.0);
        delta[4] = 1.0;
        const Tensor y = conv2d_forward(x, delta, nullptr);
        REQUIRE(y.shape() == Shape{1, 3, 3});
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(y[i * 3 + j] == x[(i + 1) * 5 + j + 1]);

        CHECK_THROWS_AS(conv2d_forward(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3}), nullptr), DimensionError);
        CHECK_THROWS_AS(conv2d_forward(Tensor({2, 4, 4}), Tensor({1, 1, 3, 3}), nullptr), DimensionError);
    }

    TEST_CASE("conv2d matches the naive loop") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor x = random_tensor({2, 6, 6}, rng), k = random_tensor({3, 2, 3, 3}, rng);
            CHECK(max_abs_diff(conv2d_forward(x, k, nullptr), naive_conv(x, k)) < 1e-12);
        }
    }

    TEST_CASE("conv2d gradients") {
        Rng rng(6);
        const Tensor x = random_tensor({2, 2, 5, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
        const Tensor w = random_tensor({2, 3, 3, 3}, rng);  // weights the output so the check is not just a sum
        auto loss = [&](Var vx, Var vk, Var vb) { return sum(mul(conv2d(vx, vk, vb), vx.tape->constant(w))); };
        Tape tape;
        Var vx = tape.leaf(x), vk = tape.leaf(k), vb = tape.leaf(b);
        const auto g = tape.backward(loss(vx, vk, vb));
        auto fx = [&](const Tensor& t) { Tape tp; return loss(tp.leaf(t), tp.leaf(k), tp.leaf(b)).value().item(); };
        auto fk = [&](const Tensor& t) { Tape tp; return loss(tp.leaf(x), tp.leaf(t), tp.leaf(b)).value().item(); };
        auto fb = [&](const Tensor& t) { Tape tp; return loss(tp.leaf(x), tp.leaf(k), tp.leaf(t)).value().item(); };
        CHECK(fd_relative_error(fx, x, g.at(vx.id)) < 1e-6);
        CHECK(fd_relative_error(fk, k, g.at(vk.id)) < 1e-6);
        CHECK(fd_relative_error(fb, b, g.at(vb.id)) < 1e-6);
    }

    TEST_CASE("elementwise ops") {
        CHECK(relu(Tensor::vector({-1, 0, 2})) == Tensor::vector({0, 0, 2}));
        CHECK(scale(Tensor::vector({1, -2}), 3.0) == Tensor::vector({3, -6}));
        CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), DimensionError);

        Rng rng(8);
        const Tensor a = random_tensor({3, 4}, rng), c = random_tensor({3, 4}, rng);
        auto check_op = [&](const std::function<Var(Var)>& op, double tol) {
            auto f = [&](const Tensor& t) { return value_of(op, t); };
            CHECK(fd_relative_error(f, a, grad_of(op, a)) < tol);
        };
        check_op([&](Var x) { return add(x, x.tape->constant(c)); }, 1e-6);
        check_op([&](Var x) { return sub(x.tape->constant(c), x); }, 1e-6);
        check_op([&](Var x) { return mul(x, x.tape->constant(c)); }, 1e-6);
        check_op([&](Var x) { return mul(x, x); }, 1e-5);
        check_op([&](Var x) { return scale(x, -2.5); }, 1e-6);
        check_op([&](Var x) { return mul(relu(x), x.tape->constant(c)); }, 1e-5);
        check_op([&](Var x) { return mean_over_batch(mul(x, x.tape->constant(c))); }, 1e-6);
        check_op([&](Var x) { return transpose(mul(x, x.tape->constant(c))); }, 1e-6);
        check_op([&](Var x) { return reshape(mul(x, x.tape->constant(c)), {12}); }, 1e-6);
        check_op([&](Var x) { return half_squared_norm(x); }, 1e-5);
        check_op([&](Var x) { return mean_squared_error(x, c); }, 1e-5);
    }

    TEST_CASE("linear op") {
        Rng rng(9);
        const Tensor x = random_tensor({4, 3}, rng), w = random_tensor({2, 3}, rng), b = random_tensor({2}, rng);
        const Tensor y = linear_forward(x, w, b);
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t o = 0; o < 2; ++o) {
                double s = b[o];
                for (std::size_t i = 0; i < 3; ++i) s += w[o * 3 + i] * x[n * 3 + i];
                CHECK(y[n * 2 + o] == doctest::Approx(s).epsilon(1e-15));
            }
        const Tensor m = random_tensor({4, 2}, rng);
        auto loss = [&](Var vx, Var vw, Var vb) { return sum(mul(linear(vx, vw, vb), vx.tape->constant(m))); };
        Tape tape;
        Var vx = tape.leaf(x), vw = tape.leaf(w), vb = tape.leaf(b);
        const auto g = tape.backward(loss(vx, vw, vb));
        auto fw = [&](const Tensor& t) { Tape tp; return loss(tp.leaf(x), tp.leaf(t), tp.leaf(b)).value().item(); };
        auto fx = [&](const Tensor& t) { Tape tp; return loss(tp.leaf(t), tp.leaf(w), tp.leaf(b)).value().item(); };
        CHECK(fd_relative_error(fw, w, g.at(vw.id)) < 1e-6);
        CHECK(fd_relative_error(fx, x, g.at(vx.id)) < 1e-6);
    }

    TEST_CASE("gaussian noise") {
        Rng rng(1);
        Tape tape;
        CHECK(max_abs(gaussian_noise(tape, {4, 4}, 0.0, rng).value()) == 0.0);
        CHECK_THROWS_AS(gaussian_noise(tape, {4}, -0.1, rng), ParameterError);

        const Tensor z = gaussian_tensor({10000}, 1.0, rng);
        const double mean = sum(z) / 10000.0;
        const double var = squared_norm(z) / 10000.0 - mean * mean;
        CHECK(std::fabs(mean) < 0.05);
        CHECK(std::fabs(std::sqrt(var) - 1.0) < 0.05);

        // Constant on the tape: no gradient flows into it.
        Var leaf = tape.leaf(Tensor({4}, 1.0));
        Var noise = gaussian_noise(tape, {4}, 0.5, rng);
        CHECK_FALSE(tape.needs_grad(noise.id));
        const auto g = tape.backward(sum(mul(leaf, noise)));
        CHECK(g.size() == 1);
    }

    TEST_CASE("softmax cross-entropy") {
        const std::vector<int> zero{0};
        CHECK(softmax_cross_entropy(Tensor::matrix({{10, -10}}), zero) < 1e-4);
        CHECK(softmax_cross_entropy(Tensor::matrix({{0, 0}}), zero) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
        CHECK(softmax_cross_entropy(Tensor::matrix({{1000, 0}}), std::vector<int>{1}) == doctest::Approx(1000.0));
        CHECK_THROWS_AS(softmax_cross_entropy(Tensor::matrix({{0, 0}}), std::vector<int>{2}), IndexError);
        CHECK_THROWS_AS(softmax_cross_entropy(Tensor::matrix({{0, 0}}), std::vector<int>{-1}), IndexError);

        Rng rng(12);
        const std::vector<int> labels{0, 3, 1};
        for (int trial = 0; trial < 10; ++trial) {
            const Tensor logits = random_tensor({3, 4}, rng, -3, 3);
            Tape tape;
            Var v = tape.leaf(logits);
            const auto g = tape.backward(softmax_cross_entropy(v, labels));
            auto f = [&](const Tensor& t) { return softmax_cross_entropy(t, labels); };
            CHECK(fd_relative_error(f, logits, g.at(v.id)) < 1e-5);
        }
    }

    TEST_CASE("backward contracts") {
        Tape tape;
        Var w = tape.leaf(Tensor({2, 3}, 0.7));
        CHECK_THROWS_AS(tape.backward(w), ContractError);

        Tape t2;
        Var a = t2.leaf(Tensor({2, 3}, 0.7));
        CHECK(t2.backward(sum(a)).at(a.id) == Tensor({2, 3}, 1.0));

        Rng rng(2);
        const Tensor v = random_tensor({5}, rng);
        Tape t3;
        Var b = t3.leaf(v);
        CHECK(t3.backward(half_squared_norm(b)).at(b.id) == v);
        CHECK(t3.size() == 0);  // freed after backward

        // Only requires-grad leaves are reported; unreached ones get zeros.
        Tape t4;
        Var used = t4.leaf(Tensor({2}, 1.0));
        Var unused = t4.leaf(Tensor({2}, 1.0));
        Var frozen = t4.leaf(Tensor({2}, 1.0), false);
        const auto g = t4.backward(sum(mul(used, frozen)));
        CHECK(g.count(frozen.id) == 0);
        CHECK(g.at(unused.id) == Tensor({2}, 0.0));
    }

    TEST_CASE("backward is linear") {
        Rng rng(4);
        const Tensor x = random_tensor({6}, rng), c = random_tensor({6}, rng);
        auto f = [&](Var v) { return half_squared_norm(mul(v, v.tape->constant(c))); };
        auto g = [&](Var v) { return sum(relu(v)); };
        const double a = 1.7, b = -0.4;
        Tape t1;
        Var v1 = t1.leaf(x);
        const Tensor combined = t1.backward(add(scale(f(v1), a), scale(g(v1), b))).at(v1.id);
        Tape t2;
        Var v2 = t2.leaf(x);
        const Tensor gf = t2.backward(f(v2)).at(v2.id);
        Tape t3;
        Var v3 = t3.leaf(x);
        const Tensor gg = t3.backward(g(v3)).at(v3.id);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::fabs(combined[i] - (a * gf[i] + b * gg[i])) < 1e-12);
    }

    TEST_CASE("two-layer MLP gradients and determinism") {
        const std::vector<std::size_t> widths{5, 7, 3};
        Model m = build_mlp(widths, Activation::relu, 21);
        Rng rng(22);
        const Tensor x = random_tensor({6, 5}, rng, 0, 1);
        const std::vector<int> y{0, 1, 2, 0, 1, 2};
        auto loss_at = [&](const std::vector<Tensor>& values) {
            Model copy = m;
            copy.set_parameter_values(values);
            return softmax_cross_entropy(predict(copy, x), y);
        };
        Tape tape;
        auto params = bind_parameters(m, tape);
        Rng noise(0);
        const auto grads = tape.backward(softmax_cross_entropy(forward(m, tape.constant(x), params, Mode::train, noise), y));
        const auto g = parameter_gradients(m, params, grads);
        const auto base = m.parameter_values();
        for (std::size_t p = 0; p < base.size(); ++p) {
            auto f = [&](const Tensor& t) {
                auto values = base;
                values[p] = t;
                return loss_at(values);
            };
            CHECK(fd_relative_error(f, base[p], g[p]) < 1e-5);
        }

        Tape again;
        auto params2 = bind_parameters(m, again);
        Rng noise2(0);
        const auto grads2 = again.backward(softmax_cross_entropy(forward(m, again.constant(x), params2, Mode::train, noise2), y));
        const auto g2 = parameter_gradients(m, params2, grads2);
        CHECK(g == g2);
    }
}
