#include "splitprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "splitprune/errors.hpp"
#include "splitprune/rng.hpp"

namespace splitprune {

void validate(const Dataset& d, double lo, double hi) {
    if (d.labels.empty()) throw ValidationError("dataset is empty");
    if (d.inputs.empty() || d.inputs.dim(0) != d.labels.size())
        throw ValidationError("dataset has " + std::to_string(d.labels.size()) + " labels for inputs " +
                              shape_string(d.inputs.shape()));
    for (std::size_t i = 0; i < d.labels.size(); ++i)
        if (d.labels[i] < 0 || static_cast<std::size_t>(d.labels[i]) >= d.classes)
            throw ValidationError("label " + std::to_string(d.labels[i]) + " of example " + std::to_string(i) +
                                  " outside [0, " + std::to_string(d.classes) + ")");
    for (std::size_t i = 0; i < d.inputs.size(); ++i) {
        const double v = d.inputs[i];
        if (!std::isfinite(v)) throw ValidationError("non-finite input value at flat index " + std::to_string(i));
        if (v < lo || v > hi)
            throw ValidationError("input value " + std::to_string(v) + " at flat index " + std::to_string(i) +
                                  " outside the clamp range");
    }
}

std::pair<Tensor, std::vector<int>> batch(const Dataset& d, std::span<const std::size_t> indices) {
    const std::size_t row = d.inputs.size() / d.inputs.dim(0);
    Shape shape = d.inputs.shape();
    shape[0] = indices.size();
    std::vector<double> data;
    data.reserve(indices.size() * row);
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (auto i : indices) {
        if (i >= d.size()) throw IndexError("example index " + std::to_string(i) + " out of range");
        auto src = d.inputs.data().subspan(i * row, row);
        data.insert(data.end(), src.begin(), src.end());
        labels.push_back(d.labels[i]);
    }
    return {Tensor(std::move(shape), std::move(data)), std::move(labels)};
}

Dataset subset(const Dataset& d, std::span<const std::size_t> indices) {
    auto [x, y] = batch(d, indices);
    return Dataset{std::move(x), std::move(y), d.classes, d.provenance};
}

// ---- CSV ----

Dataset parse_csv(const std::string& text, bool header, std::size_t classes, const std::string& provenance) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0, width = 0;
    std::vector<double> values;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (header && line_no == 1) continue;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() < 2) throw ParseError(provenance + ": line " + std::to_string(line_no) + ": need at least one feature and a label");
        if (width == 0) width = fields.size() - 1;
        if (fields.size() - 1 != width)
            throw ParseError(provenance + ": line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                             " features, got " + std::to_string(fields.size() - 1));
        for (std::size_t i = 0; i < width; ++i) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(fields[i], &used);
            } catch (const std::logic_error&) {
                used = 0;
            }
            if (used == 0 || used != fields[i].size())
                throw ParseError(provenance + ": line " + std::to_string(line_no) + ": bad number '" + fields[i] + "'");
            values.push_back(v);
        }
        std::size_t used = 0;
        int label = -1;
        try {
            label = std::stoi(fields.back(), &used);
        } catch (const std::logic_error&) {
            used = 0;
        }
        if (used == 0 || used != fields.back().size())
            throw ParseError(provenance + ": line " + std::to_string(line_no) + ": bad label '" + fields.back() + "'");
        if (label < 0) throw ValidationError(provenance + ": line " + std::to_string(line_no) + ": negative label");
        labels.push_back(label);
    }
    if (labels.empty()) throw ParseError(provenance + ": no data rows");
    const std::size_t max_label = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()));
    Dataset d{Tensor({labels.size(), width}, std::move(values)), std::move(labels),
              classes ? classes : max_label + 1, provenance};
    validate(d, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
    return d;
}

Dataset load_csv(const std::string& path, bool header, std::size_t classes) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_csv(ss.str(), header, classes, path);
}

std::string format_csv(const Dataset& d, bool header) {
    const std::size_t n = d.size(), row = d.inputs.size() / std::max<std::size_t>(n, 1);
    std::string out;
    if (header) {
        for (std::size_t j = 0; j < row; ++j) out += "x" + std::to_string(j) + ",";
        out += "label\n";
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < row; ++j) {
            out += format_double(d.inputs[i * row + j]);
            out += ',';
        }
        out += std::to_string(d.labels[i]) + "\n";
    }
    return out;
}

void write_csv(const Dataset& d, const std::string& path, bool header) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << format_csv(d, header);
    if (!f) throw IoError("failed writing " + path);
}

// ---- IDX ----

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
    if (off + 4 > b.size()) throw ParseError(path + ": truncated header at byte " + std::to_string(off));
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}

void put_be32(std::ofstream& f, std::uint32_t v) {
    const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    f.write(bytes, 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);
    const auto img_magic = be32(img, 0, images_path);
    if (img_magic != 0x00000803)
        throw ParseError(images_path + ": bad magic at byte 0 (expected 0x00000803)");
    const auto lab_magic = be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801)
        throw ParseError(labels_path + ": bad magic at byte 0 (expected 0x00000801)");
    const std::size_t n = be32(img, 4, images_path), rows = be32(img, 8, images_path), cols = be32(img, 12, images_path);
    const std::size_t nl = be32(lab, 4, labels_path);
    if (n == 0 || rows == 0 || cols == 0) throw ParseError(images_path + ": zero dimension in header at byte 4");
    if (nl != n) throw ParseError(labels_path + ": label count " + std::to_string(nl) + " at byte 4 does not match " + std::to_string(n) + " images");
    if (img.size() != 16 + n * rows * cols)
        throw ParseError(images_path + ": expected " + std::to_string(16 + n * rows * cols) + " bytes, found " + std::to_string(img.size()));
    if (lab.size() != 8 + n)
        throw ParseError(labels_path + ": expected " + std::to_string(8 + n) + " bytes, found " + std::to_string(lab.size()));
    std::vector<double> px(n * rows * cols);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(img[16 + i]) / 255.0;
    std::vector<int> labels(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) max_label = std::max(max_label, labels[i] = lab[8 + i]);
    Dataset d{Tensor({n, 1, rows, cols}, std::move(px)), std::move(labels),
              classes ? classes : static_cast<std::size_t>(max_label) + 1, images_path};
    validate(d);
    return d;
}

void write_idx(const std::string& images_path, const std::string& labels_path, std::span<const std::uint8_t> pixels,
               std::size_t n, std::size_t rows, std::size_t cols, std::span<const std::uint8_t> labels) {
    if (pixels.size() != n * rows * cols || labels.size() != n) throw DimensionError("write_idx: sizes do not match header");
    std::ofstream fi(images_path, std::ios::binary), fl(labels_path, std::ios::binary);
    if (!fi) throw IoError("cannot write " + images_path);
    if (!fl) throw IoError("cannot write " + labels_path);
    put_be32(fi, 0x00000803);
    put_be32(fi, std::uint32_t(n));
    put_be32(fi, std::uint32_t(rows));
    put_be32(fi, std::uint32_t(cols));
    fi.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
    put_be32(fl, 0x00000801);
    put_be32(fl, std::uint32_t(n));
    fl.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size()));
}

// ---- generators ----

Dataset make_blobs(std::size_t n_per_class, std::size_t classes, std::size_t dim, double spread, std::uint64_t seed) {
    if (n_per_class == 0 || classes == 0 || dim == 0) throw ParameterError("make_blobs: counts and dim must be positive");
    if (!(spread >= 0.0)) throw ParameterError("make_blobs: spread must be >= 0");
    Rng rng(seed);
    std::uniform_real_distribution<double> center_dist(0.2, 0.8);
    std::vector<double> centers(classes * dim);
    for (auto& c : centers) c = center_dist(rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x;
    std::vector<int> y;
    x.reserve(n_per_class * classes * dim);
    for (std::size_t k = 0; k < classes; ++k)
        for (std::size_t i = 0; i < n_per_class; ++i) {
            for (std::size_t j = 0; j < dim; ++j) x.push_back(std::clamp(centers[k * dim + j] + spread * normal(rng), 0.0, 1.0));
            y.push_back(static_cast<int>(k));
        }
    return Dataset{Tensor({classes * n_per_class, dim}, std::move(x)), std::move(y), classes,
                   "blobs(seed=" + std::to_string(seed) + ")"};
}

Dataset make_spirals(std::size_t n_per_class, double turns, double noise, std::uint64_t seed) {
    if (n_per_class == 0) throw ParameterError("make_spirals: n must be positive");
    if (!(turns > 0.0) || !(noise >= 0.0)) throw ParameterError("make_spirals: turns must be > 0 and noise >= 0");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x;
    std::vector<int> y;
    for (int k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const double t = (static_cast<double>(i) + 1.0) / static_cast<double>(n_per_class);
            const double angle = 2.0 * std::numbers::pi * turns * t + k * std::numbers::pi;
            x.push_back(std::clamp(0.5 + 0.45 * t * std::cos(angle) + noise * normal(rng), 0.0, 1.0));
            x.push_back(std::clamp(0.5 + 0.45 * t * std::sin(angle) + noise * normal(rng), 0.0, 1.0));
            y.push_back(k);
        }
    return Dataset{Tensor({2 * n_per_class, 2}, std::move(x)), std::move(y), 2, "spirals(seed=" + std::to_string(seed) + ")"};
}

Dataset make_tiny_images(std::size_t n_per_class, std::size_t classes, std::size_t h, std::size_t w, std::uint64_t seed,
                         std::size_t channels, double noise) {
    if (n_per_class == 0 || classes == 0 || h == 0 || w == 0 || channels == 0)
        throw ParameterError("make_tiny_images: counts and dims must be positive");
    if (!(noise >= 0.0)) throw ParameterError("make_tiny_images: noise must be >= 0");
    Rng rng(seed);
    const std::size_t plane = h * w, img = channels * plane;
    // Each class template is two strokes (full rows or columns) per channel.
    std::vector<double> templates(classes * img, 0.1);
    std::uniform_int_distribution<std::size_t> row_dist(0, h - 1), col_dist(0, w - 1);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t k = 0; k < classes; ++k)
        for (std::size_t c = 0; c < channels; ++c)
            for (int s = 0; s < 2; ++s) {
                double* t = &templates[k * img + c * plane];
                if ((k + s) % 2 == 0) {
                    const std::size_t r = row_dist(rng);
                    for (std::size_t j = 0; j < w; ++j) t[r * w + j] = 0.9;
                } else {
                    const std::size_t col = col_dist(rng);
                    for (std::size_t i = 0; i < h; ++i) t[i * w + col] = 0.9;
                }
                if (coin(rng)) {
                    const std::size_t r = row_dist(rng), col = col_dist(rng);
                    t[r * w + col] = 0.9;
                }
            }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> shift(-1, 1);
    std::vector<double> x;
    std::vector<int> y;
    x.reserve(classes * n_per_class * img);
    for (std::size_t k = 0; k < classes; ++k)
        for (std::size_t n = 0; n < n_per_class; ++n) {
            const int dy = shift(rng), dx = shift(rng);
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) {
                        const std::size_t si = (i + h + static_cast<std::size_t>(dy + 1) - 1) % h;
                        const std::size_t sj = (j + w + static_cast<std::size_t>(dx + 1) - 1) % w;
                        const double v = templates[k * img + c * plane + si * w + sj] + noise * normal(rng);
                        x.push_back(std::clamp(v, 0.0, 1.0));
                    }
            y.push_back(static_cast<int>(k));
        }
    return Dataset{Tensor({classes * n_per_class, channels, h, w}, std::move(x)), std::move(y), classes,
                   "tiny_images(seed=" + std::to_string(seed) + ")"};
}

Split split_train_val(const Dataset& d, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ParameterError("split_train_val: fraction must be in (0, 1)");
    const std::size_t n = d.size();
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
    if (n_val == 0 || n_val >= n) throw ParameterError("split_train_val: split leaves an empty side");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    Split s;
    s.val_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train_indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    s.train = subset(d, s.train_indices);
    s.val = subset(d, s.val_indices);
    return s;
}

}  // namespace splitprune
