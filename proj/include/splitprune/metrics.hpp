#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "splitprune/attacks.hpp"
#include "splitprune/data.hpp"
#include "splitprune/model.hpp"

namespace splitprune {

inline constexpr double kZeroTolerance = 1e-15;

struct MetricsRecord {
    int epoch = 0;
    double clean_accuracy = 0.0;   // A1
    double fgsm_accuracy = 0.0;    // A2
    double ifgsm_accuracy = 0.0;   // A3
    double sparsity = 0.0;
    double channel_sparsity = 0.0;
    double lagrangian = 0.0;
    double seconds = 0.0;
};

// Percentage of parameter coordinates with |w| <= 1e-15.
double sparsity(const Model& model);
double sparsity(std::span<const Tensor> params);

// Percentage of groups whose l2 norm is below 1e-15.
double channel_sparsity(const Model& model);

// Attack applied per batch shard with the ground-truth labels, then argmax
// agreement. Attack randomness is seeded from (seed, example index).
double accuracy(const Model& model, const Dataset& data, const AttackSpec& spec, std::uint64_t seed = 0,
                std::size_t batch_size = 64);

struct Histogram {
    std::vector<double> edges;
    std::vector<std::size_t> counts;
    std::size_t below = 0;  // values left of the first edge
    std::size_t above = 0;  // values right of the last edge

    std::size_t total() const;
};

// Bins [e_i, e_{i+1}), the last bin closed on the right.
Histogram weight_histogram(const Model& model, std::span<const double> edges);
std::vector<double> uniform_edges(double lo, double hi, std::size_t bins);

// Percentage of parameter coordinates with |w| < cutoff.
double small_weight_fraction(const Model& model, double cutoff);

}  // namespace splitprune
