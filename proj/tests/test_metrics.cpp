#include <doctest.h>

#include "splitprune/errors.hpp"
#include "splitprune/metrics.hpp"
#include "test_support.hpp"

using namespace splitprune;
using testing::random_tensor;

namespace {

Model with_values(std::vector<std::size_t> widths, std::vector<Tensor> values) {
    Model m = build_mlp(widths);
    m.set_parameter_values(values);
    return m;
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("sparsity counts every coordinate, biases included") {
        const Model m = with_values({3, 1}, {Tensor::matrix({{0, 1, 2}}), Tensor::vector({3})});
        CHECK(sparsity(m) == 25.0);
        const Model tiny = with_values({3, 1}, {Tensor::matrix({{1e-16, -1e-15, 1e-14}}), Tensor::vector({0})});
        CHECK(sparsity(tiny) == 75.0);
        const std::vector<Tensor> none{Tensor::vector({1, 2})};
        CHECK(sparsity(none) == 0.0);
    }

    TEST_CASE("channel sparsity") {
        // Two hidden rows and one classifier row: three groups.
        const Model m = with_values({2, 2, 1}, {Tensor::matrix({{0, 0}, {1, 1}}), Tensor::vector({5, 5}),
                                                Tensor::matrix({{1, 1}}), Tensor::vector({0})});
        CHECK(channel_sparsity(m) == doctest::Approx(100.0 / 3).epsilon(1e-15));
        const Model dead = with_values({2, 1}, {Tensor::matrix({{0, 1e-17}}), Tensor::vector({1})});
        CHECK(channel_sparsity(dead) == 100.0);
    }

    TEST_CASE("histogram bins") {
        const Model m = with_values({4, 1}, {Tensor::matrix({{-2, -0.5, 0, 0.5}}), Tensor::vector({1})});
        const std::vector<double> edges = uniform_edges(-1, 1, 4);
        CHECK(edges == std::vector<double>{-1, -0.5, 0, 0.5, 1});
        const Histogram h = weight_histogram(m, edges);
        CHECK(h.below == 1);
        CHECK(h.above == 0);
        CHECK(h.counts == std::vector<std::size_t>{0, 1, 1, 2});  // 1 lands in the closed last bin
        CHECK(h.total() == 5);
        CHECK_THROWS_AS(uniform_edges(1, 1, 3), ParameterError);
        const std::vector<double> bad{0, 0};
        CHECK_THROWS_AS(weight_histogram(m, bad), ParameterError);
    }

    TEST_CASE("small weight fraction") {
        const Model m = with_values({4, 1}, {Tensor::matrix({{1e-4, -5e-4, 1e-3, 0.2}}), Tensor::vector({0})});
        CHECK(small_weight_fraction(m, 1e-3) == 60.0);
        CHECK(small_weight_fraction(m, 1.0) == 100.0);
    }

    TEST_CASE("accuracy") {
        // Logits [x0, x1]: the larger coordinate wins.
        const Model m = with_values({2, 2}, {Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0})});
        Dataset d;
        d.inputs = Tensor::matrix({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}});
        d.labels = {0, 1, 1, 1};
        d.classes = 2;
        CHECK(accuracy(m, d, AttackSpec{}) == 75.0);
        CHECK(accuracy(m, d, AttackSpec{}, 0, 1) == 75.0);
        const AttackSpec zero{AttackFamily::fgsm, 0.0, 0.0, 1, false, 0.0, 1.0};
        CHECK(accuracy(m, d, zero) == 75.0);
        // A radius of 0.25 flips every example within 0.5 of the boundary.
        const AttackSpec big{AttackFamily::fgsm, 0.25, 0.0, 1, false, 0.0, 1.0};
        CHECK(accuracy(m, d, big) == 50.0);
        CHECK_THROWS_AS(accuracy(m, Dataset{}, AttackSpec{}), ParameterError);
    }

    TEST_CASE("zero radius gives clean accuracy on random models") {
        Rng rng(3);
        const Model m = build_mlp(std::vector<std::size_t>{5, 8, 3}, Activation::relu, 2);
        Dataset d;
        d.inputs = random_tensor({100, 5}, rng, 0, 1);
        for (int i = 0; i < 100; ++i) d.labels.push_back(i % 3);
        d.classes = 3;
        const double clean = accuracy(m, d, AttackSpec{});
        CHECK(accuracy(m, d, {AttackFamily::fgsm, 0.0, 0.0, 1, false, 0, 1}) == clean);
        CHECK(accuracy(m, d, {AttackFamily::ifgsm, 0.0, 0.01, 5, true, 0, 1}, 4) == clean);
        const double a2 = accuracy(m, d, {AttackFamily::fgsm, 0.1, 0.0, 1, false, 0, 1});
        CHECK(a2 <= clean);
    }
}
