#include "splitprune/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "splitprune/errors.hpp"
#include "splitprune/prox.hpp"

namespace splitprune {

double sparsity(std::span<const Tensor> params) {
    std::size_t zeros = 0, total = 0;
    for (const auto& p : params)
        for (double v : p.values()) {
            zeros += std::abs(v) <= kZeroTolerance;
            ++total;
        }
    return total ? 100.0 * static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

double sparsity(const Model& model) {
    const auto values = model.parameter_values();
    return sparsity(values);
}

double channel_sparsity(const Model& model) {
    if (model.groups().empty()) throw ContractError("channel_sparsity: model has no group labels");
    const auto values = model.parameter_values();
    std::size_t dead = 0;
    for (const auto& g : model.groups()) dead += l2_norm(group_view(std::span<const Tensor>(values), g)) < kZeroTolerance;
    return 100.0 * static_cast<double>(dead) / static_cast<double>(model.groups().size());
}

double accuracy(const Model& model, const Dataset& data, const AttackSpec& spec, std::uint64_t seed,
                std::size_t batch_size) {
    if (data.size() == 0) throw ParameterError("accuracy: empty dataset");
    validate(spec);
    batch_size = std::max<std::size_t>(batch_size, 1);
    // Each shard draws from its own seeded streams, so the split across
    // workers does not change the result.
    auto shard_correct = [&](std::size_t start) {
        const std::size_t end = std::min(data.size(), start + batch_size);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        auto [x, y] = batch(data, idx);
        Rng rng = make_rng(seed, StreamPurpose::eval_attack, start);
        Tensor adv = attack(model, x, y, spec, Mode::eval, rng);
        Rng noise = make_rng(seed, StreamPurpose::train_noise, start);
        Tensor logits = predict(model, adv, Mode::eval, noise);
        const std::size_t classes = logits.dim(1);
        std::size_t correct = 0;
        for (std::size_t n = 0; n < y.size(); ++n) {
            const double* row = &logits[n * classes];
            const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
            correct += best == y[n];
        }
        return correct;
    };
    const std::size_t shards = (data.size() + batch_size - 1) / batch_size;
    const std::size_t workers = std::min<std::size_t>(shards, std::max(1u, std::thread::hardware_concurrency()));
    std::vector<std::size_t> counts(shards, 0);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (std::size_t s = next++; s < shards; s = next++) {
            try {
                counts[s] = shard_correct(s * batch_size);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    std::size_t correct = 0;
    for (std::size_t c : counts) correct += c;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

std::size_t Histogram::total() const {
    return std::accumulate(counts.begin(), counts.end(), below + above);
}

std::vector<double> uniform_edges(double lo, double hi, std::size_t bins) {
    if (bins == 0 || !(lo < hi)) throw ParameterError("uniform_edges: need bins > 0 and lo < hi");
    std::vector<double> e(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    return e;
}

Histogram weight_histogram(const Model& model, std::span<const double> edges) {
    if (edges.size() < 2) throw ParameterError("weight_histogram: need at least two bin edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw ParameterError("weight_histogram: bin edges must be strictly increasing");
    Histogram h;
    h.edges.assign(edges.begin(), edges.end());
    h.counts.assign(edges.size() - 1, 0);
    for (const auto& p : model.parameters())
        for (double v : p.value.values()) {
            if (v < edges.front()) {
                ++h.below;
            } else if (v > edges.back()) {
                ++h.above;
            } else {
                auto it = std::upper_bound(edges.begin(), edges.end(), v);
                std::size_t bin = static_cast<std::size_t>(it - edges.begin());
                bin = bin == 0 ? 0 : bin - 1;
                if (bin >= h.counts.size()) bin = h.counts.size() - 1;
                ++h.counts[bin];
            }
        }
    return h;
}

double small_weight_fraction(const Model& model, double cutoff) {
    std::size_t small = 0, total = 0;
    for (const auto& p : model.parameters())
        for (double v : p.value.values()) {
            small += std::abs(v) < cutoff;
            ++total;
        }
    return total ? 100.0 * static_cast<double>(small) / static_cast<double>(total) : 0.0;
}

}  // namespace splitprune
