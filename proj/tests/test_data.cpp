#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "splitprune/data.hpp"
#include "splitprune/errors.hpp"

using namespace splitprune;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("splitprune_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE("data_io") {
    TEST_CASE("csv parse and round trip") {
        const Dataset d = parse_csv("a,b,label\n0.1,0.2,1\n0.5,1,0\n", true);
        CHECK(d.size() == 2);
        CHECK(d.classes == 2);
        CHECK(d.inputs == Tensor::matrix({{0.1, 0.2}, {0.5, 1}}));
        CHECK(d.labels == std::vector<int>{1, 0});
        CHECK(parse_csv(format_csv(d)).inputs == d.inputs);
        CHECK(parse_csv("0.1,0\n", false, 5).classes == 5);

        const fs::path dir = scratch_dir("csv");
        write_csv(d, (dir / "d.csv").string(), true);
        const Dataset back = load_csv((dir / "d.csv").string(), true);
        CHECK(back.inputs == d.inputs);
        CHECK(back.labels == d.labels);
        fs::remove_all(dir);
    }

    TEST_CASE("csv errors") {
        CHECK_THROWS_AS(parse_csv("0.1,0.2,1\n0.3,0\n"), ParseError);
        CHECK_THROWS_AS(parse_csv("0.1,x,1\n"), ParseError);
        CHECK_THROWS_AS(parse_csv("0.1,0.2,one\n"), ParseError);
        CHECK_THROWS_AS(parse_csv("5\n"), ParseError);
        CHECK_THROWS_AS(parse_csv(""), ParseError);
        CHECK_THROWS_AS(parse_csv("0.1,-1\n"), ValidationError);
        CHECK_THROWS_AS(load_csv("/nonexistent/splitprune.csv"), IoError);
    }

    TEST_CASE("idx round trip and errors") {
        const fs::path dir = scratch_dir("idx");
        const std::vector<std::uint8_t> pixels{0, 255, 51, 102, 10, 20, 30, 40};
        const std::vector<std::uint8_t> labels{3, 1};
        const auto img = (dir / "img").string(), lab = (dir / "lab").string();
        write_idx(img, lab, pixels, 2, 2, 2, labels);
        const Dataset d = load_idx(img, lab);
        CHECK(d.inputs.shape() == Shape{2, 1, 2, 2});
        CHECK(d.inputs[1] == 1.0);
        CHECK(d.inputs[2] == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(d.labels == std::vector<int>{3, 1});
        CHECK(d.classes == 4);

        // Corrupt the image magic.
        {
            std::fstream f(img, std::ios::in | std::ios::out | std::ios::binary);
            f.seekp(3);
            f.put(0x01);
        }
        CHECK_THROWS_AS(load_idx(img, lab), ParseError);
        write_idx(img, lab, pixels, 2, 2, 2, labels);
        fs::resize_file(img, 18);
        CHECK_THROWS_AS(load_idx(img, lab), ParseError);
        CHECK_THROWS_AS(load_idx((dir / "missing").string(), lab), IoError);
        CHECK_THROWS_AS(write_idx(img, lab, pixels, 3, 2, 2, labels), DimensionError);
        fs::remove_all(dir);
    }

    TEST_CASE("validation") {
        Dataset d;
        d.inputs = Tensor::matrix({{0.5, 0.5}});
        d.labels = {0};
        d.classes = 2;
        CHECK_NOTHROW(validate(d));
        d.inputs[0] = 1.5;
        CHECK_THROWS_AS(validate(d), ValidationError);
        CHECK_NOTHROW(validate(d, 0.0, 2.0));
        d.inputs[0] = std::nan("");
        CHECK_THROWS_AS(validate(d, 0.0, 2.0), ValidationError);
        d.inputs[0] = 0.5;
        d.labels = {2};
        CHECK_THROWS_AS(validate(d), ValidationError);
        CHECK_THROWS_AS(validate(Dataset{}), ValidationError);
    }

    TEST_CASE("generators are seeded and well formed") {
        const Dataset b = make_blobs(50, 3, 4, 0.3, 1);
        CHECK(b.inputs.shape() == Shape{150, 4});
        CHECK(b == make_blobs(50, 3, 4, 0.3, 1));
        CHECK(b.inputs != make_blobs(50, 3, 4, 0.3, 2).inputs);
        CHECK_NOTHROW(validate(b));

        const Dataset s = make_spirals(40, 1.5, 0.02, 3);
        CHECK(s.inputs.shape() == Shape{80, 2});
        CHECK(s.classes == 2);
        CHECK_NOTHROW(validate(s));

        const Dataset t = make_tiny_images(10, 4, 8, 8, 5, 2);
        CHECK(t.inputs.shape() == Shape{40, 2, 8, 8});
        CHECK_NOTHROW(validate(t));
        for (std::size_t c = 0; c < 4; ++c) CHECK(std::count(t.labels.begin(), t.labels.end(), static_cast<int>(c)) == 10);

        CHECK_THROWS_AS(make_blobs(0, 2, 2, 0.1, 0), ParameterError);
        CHECK_THROWS_AS(make_blobs(5, 2, 2, -0.1, 0), ParameterError);
        CHECK_THROWS_AS(make_spirals(5, 0.0, 0.1, 0), ParameterError);
        CHECK_THROWS_AS(make_tiny_images(5, 2, 0, 4, 0), ParameterError);
    }

    TEST_CASE("train/validation split") {
        const Dataset d = make_blobs(50, 2, 3, 0.2, 7);
        const Split s = split_train_val(d, 0.2, 11);
        CHECK(s.train.size() == 80);
        CHECK(s.val.size() == 20);
        std::set<std::size_t> all(s.train_indices.begin(), s.train_indices.end());
        all.insert(s.val_indices.begin(), s.val_indices.end());
        CHECK(all.size() == 100);
        CHECK(s.val == subset(d, s.val_indices));
        CHECK(split_train_val(d, 0.2, 11).val_indices == s.val_indices);
        CHECK(split_train_val(d, 0.2, 12).val_indices != s.val_indices);
        CHECK_THROWS_AS(split_train_val(d, 0.0, 1), ParameterError);
        CHECK_THROWS_AS(split_train_val(d, 1.0, 1), ParameterError);

        const std::vector<std::size_t> idx{3, 1};
        const auto [x, y] = batch(d, idx);
        CHECK(x.dim(0) == 2);
        CHECK(y == std::vector<int>{d.labels[3], d.labels[1]});
        const std::vector<std::size_t> bad{100};
        CHECK_THROWS_AS(batch(d, bad), IndexError);
    }
}
