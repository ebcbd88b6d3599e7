#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splitprune/tensor.hpp"

namespace splitprune {

struct Dataset {
    Tensor inputs;  // [N x features...]
    std::vector<int> labels;
    std::size_t classes = 0;
    std::string provenance;

    std::size_t size() const noexcept { return labels.size(); }
    Shape example_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

    bool operator==(const Dataset&) const = default;
};

// Checks N >= 1, labels in [0, classes), finite inputs within [lo, hi].
void validate(const Dataset& d, double lo = 0.0, double hi = 1.0);

// Rows of `indices`, in that order.
Dataset subset(const Dataset& d, std::span<const std::size_t> indices);
// Inputs of rows [begin, end) and their labels.
std::pair<Tensor, std::vector<int>> batch(const Dataset& d, std::span<const std::size_t> indices);

// One example per line: features..., label. Class count is max label + 1
// unless given. `header` skips / writes a first line of column names.
Dataset load_csv(const std::string& path, bool header = false, std::size_t classes = 0);
Dataset parse_csv(const std::string& text, bool header = false, std::size_t classes = 0, const std::string& provenance = "csv");
void write_csv(const Dataset& d, const std::string& path, bool header = false);
std::string format_csv(const Dataset& d, bool header = false);

// Big-endian IDX files: images 0x00000803 (N x rows x cols, uint8 scaled by
// 1/255 into [N x 1 x rows x cols]) and labels 0x00000801.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes = 0);
void write_idx(const std::string& images_path, const std::string& labels_path, std::span<const std::uint8_t> pixels,
               std::size_t n, std::size_t rows, std::size_t cols, std::span<const std::uint8_t> labels);

// Gaussian clusters around random centers, rescaled into [0,1].
Dataset make_blobs(std::size_t n_per_class, std::size_t classes, std::size_t dim, double spread, std::uint64_t seed);
// Two interleaved spirals in [0,1]^2 (n per arm).
Dataset make_spirals(std::size_t n_per_class, double turns, double noise, std::uint64_t seed);
// Per-class stroke templates plus pixel noise, [N x channels x h x w] in [0,1].
Dataset make_tiny_images(std::size_t n_per_class, std::size_t classes, std::size_t h, std::size_t w, std::uint64_t seed,
                         std::size_t channels = 1, double noise = 0.1);

struct Split {
    Dataset train;
    Dataset val;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

// Seeded shuffle, then the first round(N * fraction) rows go to validation.
Split split_train_val(const Dataset& d, double val_fraction, std::uint64_t seed);

}  // namespace splitprune
