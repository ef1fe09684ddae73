#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "capsbench/dataset.hpp"
#include "capsbench/image.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace capsbench;

namespace {
std::vector<unsigned char> bytes_of(const std::string& s) {
    return std::vector<unsigned char>(s.begin(), s.end());
}
}  // namespace

TEST_CASE("PGM P5 parsing, values scaled by maxval") {
    std::vector<unsigned char> file = bytes_of("P5\n2 2\n255\n");
    for (unsigned char b : {0, 255, 128, 64}) file.push_back(b);
    const Tensor img = parse_pgm(file);
    REQUIRE(img.shape == std::vector<int>{2, 2, 1});
    CHECK(img[0] == 0);
    CHECK(img[1] == 1);
    CHECK(img[2] == doctest::Approx(128.0 / 255).epsilon(1e-12));
    CHECK(img[3] == doctest::Approx(64.0 / 255).epsilon(1e-12));
}

TEST_CASE("PGM P2 and P5 encodings of one image load identically") {
    Tensor img({3, 2, 1});
    Rng rng(1);
    fill_uniform(img, rng, 0, 1);
    // snap to the 255-level grid so both encodings are lossless
    for (auto& v : img.data) v = std::round(v * 255) * (real(1) / 255);
    const Tensor a = parse_pgm(encode_pgm(img, 255, /*binary=*/true));
    const Tensor b = parse_pgm(encode_pgm(img, 255, /*binary=*/false));
    REQUIRE(a.shape == b.shape);
    for (long i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
        CHECK(a[i] == img[i]);
    }
}

TEST_CASE("PGM error cases are distinct failures") {
    CHECK_THROWS_AS(parse_pgm(bytes_of("P6\n1 1\n255\nx")), DataError);   // bad magic
    CHECK_THROWS_AS(parse_pgm(bytes_of("P5\n2 2\n255\nab")), DataError);  // truncated payload
    CHECK_THROWS_AS(parse_pgm(bytes_of("P5\n1 1\n0\nx")), DataError);     // maxval 0
}

TEST_CASE("PGM supports comments and 16-bit maxval") {
    // width 2, height 1 (PGM headers are width-first)
    std::vector<unsigned char> file = bytes_of("P5\n# a comment\n2 1\n65535\n");
    // big-endian 16-bit samples: 0 and 65535
    file.push_back(0);
    file.push_back(0);
    file.push_back(0xFF);
    file.push_back(0xFF);
    const Tensor img = parse_pgm(file);
    REQUIRE(img.shape == std::vector<int>{1, 2, 1});
    CHECK(img[0] == 0);
    CHECK(img[1] == 1);
}

TEST_CASE("PGM save/load round-trip through a file") {
    namespace fs = std::filesystem;
    Tensor img({4, 5, 1});
    Rng rng(2);
    fill_uniform(img, rng, 0, 1);
    for (auto& v : img.data) v = std::round(v * 255) * (real(1) / 255);
    const std::string path = (fs::temp_directory_path() / "capsbench_pgm_test.pgm").string();
    save_pgm(path, img);
    const Tensor back = load_pgm(path);
    REQUIRE(back.shape == img.shape);
    for (long i = 0; i < img.size(); ++i) CHECK(back[i] == img[i]);
    fs::remove(path);
}

TEST_CASE("CIFAR-100 records: hand-built file loads and round-trips byte-identically") {
    std::vector<unsigned char> file;
    for (int r = 0; r < 3; ++r) {
        file.push_back(static_cast<unsigned char>(r + 1));       // coarse
        file.push_back(static_cast<unsigned char>(10 * r + 7));  // fine
        for (int i = 0; i < 3072; ++i) file.push_back(static_cast<unsigned char>((i + r) % 256));
    }
    const auto records = parse_cifar100(file);
    REQUIRE(records.size() == 3);
    for (size_t r = 0; r < 3; ++r) {
        CHECK(records[r].coarse == static_cast<int>(r) + 1);
        CHECK(records[r].fine == 10 * static_cast<int>(r) + 7);
        CHECK(records[r].fine >= 0);
        CHECK(records[r].fine < 100);
        REQUIRE(records[r].rgb.shape == std::vector<int>{32, 32, 3});
    }
    // plane layout: first payload byte is pixel (0,0) of the red plane
    CHECK(records[0].rgb.at(0, 0, 0) == 0);
    CHECK(records[0].rgb.at(0, 1, 0) == doctest::Approx(1.0 / 255).epsilon(1e-12));
    CHECK(records[0].rgb.at(0, 0, 1) == doctest::Approx((1024 % 256) / 255.0).epsilon(1e-12));
    CHECK(encode_cifar100(records) == file);
}

TEST_CASE("CIFAR-100 length validation") {
    std::vector<unsigned char> file(3074 * 2 + 1, 0);
    CHECK_THROWS_AS(parse_cifar100(file), DataError);
    // 10 zero records -> 10 samples
    CHECK(parse_cifar100(std::vector<unsigned char>(3074 * 10, 0)).size() == 10);
}

TEST_CASE("grayscale conversion uses BT.601 luma") {
    Tensor rgb({1, 3, 3});
    // white, red, gray 0.4
    rgb.at(0, 0, 0) = rgb.at(0, 0, 1) = rgb.at(0, 0, 2) = 1;
    rgb.at(0, 1, 0) = 1;
    rgb.at(0, 2, 0) = rgb.at(0, 2, 1) = rgb.at(0, 2, 2) = 0.4;
    const Tensor y = to_grayscale(rgb);
    REQUIRE(y.shape == std::vector<int>{1, 3, 1});
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.299).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("min-max normalization") {
    Tensor img({3, 1, 1}, std::vector<real>{50, 100, 150});
    const Tensor out = min_max_normalize(img);
    CHECK(out[0] == 0);
    CHECK(out[1] == 0.5);
    CHECK(out[2] == 1);
    Tensor already({2, 1, 1}, std::vector<real>{0, 1});
    const Tensor same = min_max_normalize(already);
    CHECK(same[0] == 0);
    CHECK(same[1] == 1);
    const Tensor zeros = min_max_normalize(Tensor({4, 1, 1}, 0.77));
    for (real v : zeros.data) CHECK(v == 0);
}

TEST_CASE("histogram equalization: two-valued image maps to the CDF extremes") {
    Tensor img({2, 2, 1}, std::vector<real>{0.3, 0.31, 0.3, 0.31});
    const Tensor out = histogram_equalize(img);
    CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("histogram equalization: near-identity on an already-uniform image") {
    Tensor img({16, 16, 1});
    for (int k = 0; k < 256; ++k) img[k] = (k + real(0.5)) / 256;
    const Tensor out = histogram_equalize(img);
    for (int k = 0; k < 256; ++k) CHECK(std::fabs(out[k] - img[k]) <= 1.0 / 256 + 1e-12);
}

TEST_CASE("histogram equalization output stays in [0,1] on random input") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor img({8, 8, 1});
        fill_uniform(img, rng, 0, 1);
        for (real v : histogram_equalize(img).data) {
            CHECK(v >= 0);
            CHECK(v <= 1);
        }
    }
}

TEST_CASE("bilinear resize") {
    {
        Tensor img({4, 4, 1});
        Rng rng(4);
        fill_uniform(img, rng, 0, 1);
        const Tensor same = resize_bilinear(img, 4, 4);
        for (long i = 0; i < img.size(); ++i) CHECK(same[i] == doctest::Approx(img[i]).epsilon(1e-12));
    }
    {
        const Tensor a = resize_bilinear(Tensor({192, 168, 1}, 0.25), 96, 84);
        CHECK(a.shape == std::vector<int>{96, 84, 1});
        for (real v : a.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(resize_bilinear(Tensor({200, 200, 1}, 0.5), 72, 55).shape ==
              std::vector<int>{72, 55, 1});
    }
    CHECK_THROWS_AS(resize_bilinear(Tensor({4, 4, 1}), 0, 4), DataError);
}

namespace {
std::vector<Sample> tagged_samples(int n, int classes) {
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) {
        Sample s;
        s.image = Tensor({1, 1, 1}, real(i) / std::max(1, n));
        s.label = i % classes;
        s.source_id = "s" + std::to_string(i);
        out.push_back(std::move(s));
    }
    return out;
}

std::multiset<std::string> ids(const std::vector<Sample>& v) {
    std::multiset<std::string> out;
    for (const Sample& s : v) out.insert(s.source_id);
    return out;
}
}  // namespace

TEST_CASE("split: 100 samples give 70/15/15, deterministic by seed") {
    const auto samples = tagged_samples(100, 4);
    const DatasetSplit a = split_dataset(samples, 9, /*stratified=*/false);
    CHECK(a.train.size() == 70);
    CHECK(a.validation.size() == 15);
    CHECK(a.test.size() == 15);
    // stratified applies the ratios per class: 4 classes of 25 -> 17/3/5 each
    const DatasetSplit strat = split_dataset(samples, 9);
    CHECK(strat.train.size() == 68);
    CHECK(strat.validation.size() == 12);
    CHECK(strat.test.size() == 20);
    const DatasetSplit b = split_dataset(samples, 9, /*stratified=*/false);
    CHECK(ids(a.train) == ids(b.train));
    CHECK(ids(a.test) == ids(b.test));
    const DatasetSplit c = split_dataset(samples, 10, /*stratified=*/false);
    CHECK(ids(a.train) != ids(c.train));
}

TEST_CASE("split partitions are disjoint and exhaustive for all sizes 3..1000") {
    for (int n = 3; n <= 1000; ++n) {
        const auto samples = tagged_samples(n, 3);
        const DatasetSplit sp = split_dataset(samples, static_cast<uint64_t>(n));
        REQUIRE(sp.train.size() + sp.validation.size() + sp.test.size() == samples.size());
        std::multiset<std::string> all = ids(sp.train);
        for (const Sample& s : sp.validation) all.insert(s.source_id);
        for (const Sample& s : sp.test) all.insert(s.source_id);
        REQUIRE(all == ids(samples));  // multiset equality => disjoint + exhaustive
    }
}

TEST_CASE("stratified split keeps every class in all three splits (38 classes, 7+ each)") {
    const auto samples = tagged_samples(38 * 7, 38);
    const DatasetSplit sp = split_dataset(samples, 21);
    for (const auto* part : {&sp.train, &sp.validation, &sp.test}) {
        std::set<int> seen;
        for (const Sample& s : *part) seen.insert(s.label);
        CHECK(seen.size() == 38);
    }
}

TEST_CASE("k-fold: disjoint validation folds covering the set; repeats multiply") {
    const auto samples = tagged_samples(100, 5);
    const auto folds = kfold_split(samples, 5, 1, 3);
    REQUIRE(folds.size() == 5);
    std::multiset<std::string> all;
    for (const auto& [train, val] : folds) {
        CHECK(val.size() == 20);
        CHECK(train.size() == 80);
        for (const Sample& s : val) all.insert(s.source_id);
    }
    CHECK(all == ids(samples));
    CHECK(kfold_split(samples, 5, 20, 3).size() == 100);
}

TEST_CASE("synthetic shapes: seed-deterministic, identical within class at jitter 0") {
    const std::vector<ShapeKind> classes = {ShapeKind::Rectangle, ShapeKind::Ellipse,
                                            ShapeKind::Triangle, ShapeKind::Cross};
    const auto a = synth_shapes(3, classes, 24, 5, 0.1);
    const auto b = synth_shapes(3, classes, 24, 5, 0.1);
    REQUIRE(a.size() == 12);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label == b[i].label);
        CHECK(a[i].image.data == b[i].image.data);
    }
    const auto fixed = synth_shapes(3, classes, 24, 5, 0.0);
    std::map<int, const Tensor*> first;
    for (const Sample& s : fixed) {
        auto [it, inserted] = first.emplace(s.label, &s.image);
        if (!inserted) CHECK(s.image.data == it->second->data);
    }
    for (const Sample& s : a) {
        CHECK(*std::min_element(s.image.data.begin(), s.image.data.end()) >= 0);
        CHECK(*std::max_element(s.image.data.begin(), s.image.data.end()) <= 1);
    }
}

TEST_CASE("synth spec parsing") {
    CHECK(is_synth_spec("synth:n=5"));
    CHECK_FALSE(is_synth_spec("/data/yale"));
    const SynthSpec spec =
        parse_synth_spec("synth:classes=rectangle,cross;n=7;size=20;seed=9;jitter=0.25");
    CHECK(spec.classes == std::vector<ShapeKind>{ShapeKind::Rectangle, ShapeKind::Cross});
    CHECK(spec.n_per_class == 7);
    CHECK(spec.size == 20);
    CHECK(spec.seed == 9);
    CHECK(spec.jitter == doctest::Approx(0.25));
    CHECK(generate_synth(spec).size() == 14);
    CHECK_THROWS_AS(parse_synth_spec("synth:bogus=1"), ConfigError);
}

TEST_CASE("preprocessing chains match the per-dataset recipe") {
    CHECK(chain_for_dataset("yale").step_names() ==
          std::vector<std::string>{"min_max_normalize", "histogram_equalize_conditional", "resize_96x84"});
    CHECK(chain_for_dataset("mit").step_names() ==
          std::vector<std::string>{"min_max_normalize", "histogram_equalize_conditional", "resize_72x55"});
    CHECK(chain_for_dataset("belgiumts").step_names() ==
          std::vector<std::string>{"to_grayscale", "min_max_normalize", "resize_90x90"});
    CHECK(chain_for_dataset("cifar100").step_names() ==
          std::vector<std::string>{"to_grayscale", "min_max_normalize"});
    CHECK_THROWS_AS(chain_for_dataset("imagenet"), ConfigError);
}

TEST_CASE("chain outputs stay in [0,1] and hit the target geometry") {
    Rng rng(6);
    Tensor big({192, 168, 1});
    fill_uniform(big, rng, 0.2, 0.9);
    const Tensor yale = chain_for_dataset("yale").apply(big);
    CHECK(yale.shape == std::vector<int>{96, 84, 1});
    for (real v : yale.data) {
        CHECK(v >= 0);
        CHECK(v <= 1);
    }
    Tensor rgb({32, 32, 3});
    fill_uniform(rgb, rng, 0, 1);
    const Tensor gray = chain_for_dataset("cifar100").apply(rgb);
    CHECK(gray.shape == std::vector<int>{32, 32, 1});  // passthrough size
}

TEST_CASE("dataset directory save/load round trip") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "capsbench_ds_test").string();
    fs::remove_all(dir);
    auto samples = synth_shapes(2, {ShapeKind::Rectangle, ShapeKind::Ellipse}, 12, 7, 0.1);
    // snap to the PGM 255-level grid so the round trip is exact
    for (Sample& s : samples)
        for (auto& v : s.image.data) v = std::round(v * 255) * (real(1) / 255);
    save_dataset_dir(dir, samples);
    const auto back = load_dataset_dir(dir);
    REQUIRE(back.size() == samples.size());
    std::multiset<std::vector<real>> want, got;
    for (const Sample& s : samples) want.insert(s.image.data);
    for (const Sample& s : back) got.insert(s.image.data);
    CHECK(want == got);
    CHECK(load_dataset(dir).size() == samples.size());
    fs::remove_all(dir);
    CHECK_THROWS_AS(load_dataset_dir(dir), DataError);
}
