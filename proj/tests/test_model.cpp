#include <doctest.h>

#include <algorithm>
#include <set>

#include "splitprune/errors.hpp"
#include "splitprune/model.hpp"
#include "test_support.hpp"

using namespace splitprune;
using testing::fd_relative_error;
using testing::random_tensor;

namespace {

Tensor eval_logits(const Model& m, const Tensor& x) { return predict(m, x); }

Tensor train_logits(const Model& m, const Tensor& x, std::uint64_t seed) {
    Rng rng(seed);
    return predict(m, x, Mode::train, rng);
}

}  // namespace

TEST_SUITE("model_zoo") {
    TEST_CASE("mlp registry") {
        const std::vector<std::size_t> w1{4, 1};
        const Model a = build_mlp(w1);
        CHECK(a.parameters().size() == 2);
        CHECK(a.groups().size() == 1);
        CHECK(a.parameter_count() == 5);

        const std::vector<std::size_t> w2{8, 16, 3};
        const Model b = build_mlp(w2);
        CHECK(b.parameter_count() == 8 * 16 + 16 + 16 * 3 + 3);
        CHECK(b.groups().size() == 19);

        const std::vector<std::size_t> bad{4, 0, 2};
        CHECK_THROWS_AS(build_mlp(bad), ParameterError);
        const std::vector<std::size_t> single{4};
        CHECK_THROWS_AS(build_mlp(single), ParameterError);
    }

    TEST_CASE("single linear layer computes Wx + b") {
        const std::vector<std::size_t> widths{3, 2};
        Model m = build_mlp(widths, Activation::relu, 4);
        const Tensor w = Tensor::matrix({{1, 2, 3}, {-1, 0.5, 0}});
        const Tensor b = Tensor::vector({0.25, -1});
        const std::vector<Tensor> values{w, b};
        m.set_parameter_values(values);
        const Tensor x = Tensor::matrix({{1, 1, 1}, {0, 2, -1}});
        CHECK(eval_logits(m, x) == Tensor::matrix({{6.25, -1.5}, {1.25, 0}}));
    }

    TEST_CASE("groups partition every weight tensor") {
        const std::vector<Model> models{build_mlp(std::vector<std::size_t>{5, 7, 3}),
                                        build_residual_ensemble(3, {4, 6, 2, 3}, 0.1, 1),
                                        build_conv_net({2, 7, 7, {4, 5}, 3, 3}, 2)};
        for (const auto& m : models) {
            std::set<std::pair<std::size_t, std::size_t>> seen;
            for (const auto& g : m.groups()) {
                CHECK(m.parameters()[g.param].is_weight);
                for (std::size_t i = 0; i < g.length; ++i) CHECK(seen.insert({g.param, g.offset + i}).second);
            }
            std::size_t weights = 0;
            for (const auto& p : m.parameters())
                if (p.is_weight) weights += p.value.size();
            CHECK(seen.size() == weights);
        }
        const Model conv = build_conv_net({1, 6, 6, {3}, 3, 2}, 0);
        // one group per conv filter plus one per classifier row
        CHECK(conv.groups().size() == 3 + 2);
        CHECK(conv.groups()[0].length == 1 * 3 * 3);
    }

    TEST_CASE("ensemble members are independently parameterized") {
        const Model m = build_residual_ensemble(2, {3, 4, 1, 2}, 0.0, 9);
        const std::size_t per_member = m.parameters().size() / 2;
        for (std::size_t p = 0; p < per_member; ++p) {
            CHECK(m.parameters()[p].name != m.parameters()[p + per_member].name);
            CHECK(m.parameters()[p].value != m.parameters()[p + per_member].value);
        }
        CHECK_THROWS_AS(build_residual_ensemble(0, {}, 0.0), ParameterError);
        CHECK_THROWS_AS(build_residual_ensemble(1, {}, -1.0), ParameterError);
    }

    TEST_CASE("n=1, sigma=0 collapses to the base net") {
        const Model m = build_residual_ensemble(1, {3, 5, 2, 2}, 0.0, 3);
        Rng rng(1);
        const Tensor x = random_tensor({4, 3}, rng, 0, 1);
        CHECK(train_logits(m, x, 1) == eval_logits(m, x));
        CHECK(train_logits(m, x, 1) == train_logits(m, x, 2));
    }

    TEST_CASE("ensemble output is the member average") {
        const ResidualSpec spec{3, 4, 1, 2};
        const Model pair = build_residual_ensemble(2, spec, 0.0, 5);
        const std::size_t per = pair.parameters().size() / 2;
        const auto values = pair.parameter_values();
        Model one = build_residual_ensemble(1, spec, 0.0, 0);
        Rng rng(2);
        const Tensor x = random_tensor({3, 3}, rng, 0, 1);
        one.set_parameter_values(std::span(values).subspan(0, per));
        const Tensor a = eval_logits(one, x);
        one.set_parameter_values(std::span(values).subspan(per, per));
        const Tensor b = eval_logits(one, x);
        const Tensor avg = eval_logits(pair, x);
        for (std::size_t i = 0; i < avg.size(); ++i) CHECK(avg[i] == doctest::Approx((a[i] + b[i]) / 2).epsilon(1e-15));

        // Swapping members leaves the output unchanged.
        std::vector<Tensor> swapped(values.begin() + static_cast<long>(per), values.end());
        swapped.insert(swapped.end(), values.begin(), values.begin() + static_cast<long>(per));
        Model perm = pair;
        perm.set_parameter_values(swapped);
        CHECK(max_abs_diff(eval_logits(perm, x), avg) < 1e-12);
    }

    TEST_CASE("noise is seeded and train-only") {
        const Model m = build_residual_ensemble(2, {3, 4, 2, 2}, 0.1, 7);
        Rng rng(3);
        const Tensor x = random_tensor({5, 3}, rng, 0, 1);
        CHECK(train_logits(m, x, 11) == train_logits(m, x, 11));
        CHECK(train_logits(m, x, 11) != train_logits(m, x, 12));
        CHECK(eval_logits(m, x) == eval_logits(m, x));
        CHECK(train_logits(m, x, 11) != eval_logits(m, x));

        Model noisy_eval = m;
        noisy_eval.set_noise_at_eval(true);
        Rng r1(4), r2(5);
        CHECK(predict(noisy_eval, x, Mode::eval, r1) != predict(noisy_eval, x, Mode::eval, r2));
    }

    TEST_CASE("stripping skip connections") {
        // Zero block weights: the original passes x through, the stripped one does not.
        Model m = build_residual_ensemble(1, {2, 2, 1, 2}, 0.0, 1);
        auto values = m.parameter_values();
        std::vector<Tensor> v = values;
        v[0] = Tensor::matrix({{1, 0}, {0, 1}});  // input layer: identity
        v[1] = Tensor({2}, 0.0);
        v[2] = Tensor({2, 2}, 0.0);  // block
        v[3] = Tensor({2}, 0.0);
        v[4] = Tensor::matrix({{1, 0}, {0, 1}});  // classifier
        v[5] = Tensor({2}, 0.0);
        m.set_parameter_values(v);
        const Tensor x = Tensor::matrix({{0.3, 0.7}});
        CHECK(eval_logits(m, x) == x);
        const Model stripped = strip_skip_connections(m);
        CHECK(eval_logits(stripped, x) == Tensor({1, 2}, 0.0));
        CHECK(stripped.parameter_values() == m.parameter_values());
        CHECK_FALSE(stripped.skip_connections());

        // Stripped (n=1, sigma=0) is an MLP with the same weights.
        const Model res = build_residual_ensemble(1, {3, 4, 2, 2}, 0.0, 8);
        const Model plain = strip_skip_connections(res);
        const std::vector<std::size_t> widths{3, 4, 4, 4, 2};
        Model mlp = build_mlp(widths);
        mlp.set_parameter_values(res.parameter_values());
        Rng rng(9);
        const Tensor xs = random_tensor({6, 3}, rng, 0, 1);
        CHECK(eval_logits(plain, xs) == eval_logits(mlp, xs));

        CHECK_THROWS_AS(strip_skip_connections(mlp), ContractError);
    }

    TEST_CASE("input shape is checked") {
        const Model m = build_mlp(std::vector<std::size_t>{3, 2});
        CHECK_THROWS_AS(eval_logits(m, Tensor({2, 4})), DimensionError);
        const Model c = build_conv_net({1, 6, 6, {2}, 3, 2});
        CHECK_THROWS_AS(eval_logits(c, Tensor({2, 1, 5, 6})), DimensionError);
    }

    TEST_CASE("input gradient in train mode matches finite differences") {
        const Model m = build_residual_ensemble(2, {3, 5, 2, 3}, 0.0, 10);
        const Model c = build_conv_net({1, 6, 6, {3, 2}, 3, 3}, 11);
        Rng rng(12);
        const std::vector<int> y{0, 2};
        for (const Model* model : {&m, &c}) {
            Shape shape{2};
            shape.insert(shape.end(), model->input_shape().begin(), model->input_shape().end());
            const Tensor x = random_tensor(shape, rng, 0, 1);
            Tape tape;
            auto params = bind_parameters(*model, tape, false);
            Var in = tape.leaf(x);
            Rng noise(0);
            const auto g = tape.backward(softmax_cross_entropy(forward(*model, in, params, Mode::train, noise), y));
            auto f = [&](const Tensor& t) { return softmax_cross_entropy(predict(*model, t), y); };
            CHECK(fd_relative_error(f, x, g.at(in.id)) < 1e-5);
        }
    }

    TEST_CASE("initialization scale") {
        const std::vector<std::size_t> widths{16, 8};
        const Model m = build_mlp(widths, Activation::relu, 3);
        CHECK(max_abs(m.parameters()[0].value) <= 0.25);
        CHECK(build_mlp(widths, Activation::relu, 3).parameter_values() == m.parameter_values());
        CHECK(build_mlp(widths, Activation::relu, 4).parameter_values() != m.parameter_values());
    }
}
