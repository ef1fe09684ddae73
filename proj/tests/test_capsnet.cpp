#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <tuple>

#include "capsbench/capsnet.hpp"
#include "capsbench/checkpoint.hpp"
#include "capsbench/image.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace capsbench;
using testutil::make_param;

namespace {
real norm_of(const Tensor& v) {
    real n2 = 0;
    for (real x : v.data) n2 += x * x;
    return std::sqrt(n2);
}

Tensor scaled_unit(int dim, real norm, Rng& rng) {
    Tensor s({dim});
    fill_normal(s, rng, 0, 1);
    const real n = norm_of(s);
    for (auto& x : s.data) x *= norm / n;
    return s;
}
}  // namespace

TEST_CASE("squash: zero in, zero out, exactly") {
    Tensor v = squash(Tensor({5}, 0.0));
    for (real x : v.data) CHECK(x == 0);
}

TEST_CASE("squash norm law at the reference points") {
    Rng rng(1);
    Tensor s1 = scaled_unit(4, 1.0, rng);
    CHECK(norm_of(squash(s1)) == doctest::Approx(0.5).epsilon(1e-13));
    Tensor s3 = scaled_unit(7, 3.0, rng);
    CHECK(norm_of(squash(s3)) == doctest::Approx(0.9).epsilon(1e-13));
}

TEST_CASE("squash properties: norm < 1, increasing in ||s||, direction preserved") {
    Rng rng(2);
    real prev = -1;
    for (real n : {0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 1000.0}) {
        Tensor s = scaled_unit(8, static_cast<real>(n), rng);
        Tensor v = squash(s);
        const real vn = norm_of(v);
        CHECK(vn < 1);
        CHECK(vn > prev);
        prev = vn;
        // cosine between s and v
        real dot = 0;
        for (int i = 0; i < 8; ++i) dot += s[i] * v[i];
        CHECK(dot / (norm_of(s) * vn) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("margin loss reference values") {
    const real mp = 0.9, mm = 0.1, lam = 0.5;
    Rng rng(3);
    auto loss_for = [&](const std::vector<real>& norms, int target) {
        Graph g;
        Tensor v({static_cast<int>(norms.size()), 3});
        Rng dir(4);
        for (size_t k = 0; k < norms.size(); ++k) {
            if (norms[k] == 0) continue;
            Tensor row = scaled_unit(3, norms[k], dir);
            for (int d = 0; d < 3; ++d) v.at(static_cast<int>(k), d) = row[d];
        }
        std::vector<real> T(norms.size(), 0);
        T[static_cast<size_t>(target)] = 1;
        return g.value(margin_loss(g, g.input(v), T, mp, mm, lam)).scalar_value();
    };
    // target length 0.95, others zero: both hinges inactive
    CHECK(loss_for({0.95, 0, 0}, 0) == doctest::Approx(0.0).epsilon(1e-12));
    // target length 0: (0.9)^2
    CHECK(loss_for({0, 0, 0}, 0) == doctest::Approx(0.81).epsilon(1e-12));
    // a non-target class at 0.5 contributes 0.5*(0.5-0.1)^2 = 0.08 on top of the 0.81
    CHECK(loss_for({0, 0.5}, 0) == doctest::Approx(0.81 + 0.08).epsilon(1e-12));
    // non-negative on random inputs
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<real> norms(4);
        for (auto& n : norms) n = rng.uniform(0, 2);
        CHECK(loss_for(norms, rng.index(4)) >= 0);
    }
}

TEST_CASE("routing: uniform first-iteration couplings and row normalization") {
    Rng rng(5);
    const int N = 6, C = 3, D2 = 4;
    Tensor uh({N, C, D2});
    fill_uniform(uh, rng, -1, 1);
    Graph g;
    RoutingResult r = routing_forward(g, g.input(uh), 3);
    REQUIRE(r.c_per_iter.size() == 3);
    const Tensor& c0 = g.value(r.c_per_iter[0]);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < C; ++j)
            CHECK(c0.at(i, j) == doctest::Approx(1.0 / C).epsilon(1e-13));
    for (NodeId cn : r.c_per_iter) {
        const Tensor& c = g.value(cn);
        for (int i = 0; i < N; ++i) {
            real s = 0;
            for (int j = 0; j < C; ++j) s += c.at(i, j);
            CHECK(std::fabs(s - 1) <= 1e-12);
        }
    }
}

TEST_CASE("routing with one class equals squash of the prediction sum, any iteration count") {
    Rng rng(6);
    const int N = 5, D2 = 3;
    Tensor uh({N, 1, D2});
    fill_uniform(uh, rng, -1, 1);
    Tensor expected({D2});
    for (int i = 0; i < N; ++i)
        for (int d = 0; d < D2; ++d) expected[d] += uh.at(i, 0, d);
    expected = squash(expected);
    for (int iters : {1, 2, 5}) {
        Graph g;
        RoutingResult r = routing_forward(g, g.input(uh), iters);
        const Tensor& v = g.value(r.v);
        for (int d = 0; d < D2; ++d) CHECK(v[d] == doctest::Approx(expected[d]).epsilon(1e-14));
    }
}

TEST_CASE("routing: two identical predictions, one class -> squash(2*u_hat)") {
    Rng rng(7);
    Tensor one({3});
    fill_uniform(one, rng, -1, 1);
    Tensor uh({2, 1, 3});
    for (int i = 0; i < 2; ++i)
        for (int d = 0; d < 3; ++d) uh.at(i, 0, d) = one[d];
    Tensor expected({3});
    for (int d = 0; d < 3; ++d) expected[d] = 2 * one[d];
    expected = squash(expected);
    Graph g;
    RoutingResult r = routing_forward(g, g.input(uh), 3);
    for (int d = 0; d < 3; ++d)
        CHECK(g.value(r.v)[d] == doctest::Approx(expected[d]).epsilon(1e-14));
}

TEST_CASE("capsnet_build grid arithmetic") {
    CapsNetConfig c28;  // 28x28, all defaults
    c28.input_height = c28.input_width = 28;
    CHECK(c28.grid_h() == 6);
    CHECK(c28.grid_w() == 6);
    Rng rng(8);
    CapsNet net(c28, rng);
    bool saw_stem = false;
    for (const Parameter* p : static_cast<const CapsNet&>(net).parameters())
        if (p->name == "stem_kernels") {
            saw_stem = true;
            CHECK(p->value.shape == std::vector<int>{9, 9, 1, 256});
        }
    CHECK(saw_stem);
    // stem output is 20x20x256 for this configuration
    CHECK(28 - c28.stem_kernel + 1 == 20);

    CapsNetConfig c32;
    c32.input_height = c32.input_width = 32;
    CHECK(c32.grid_h() == 8);

    // 17x17 is the smallest default-config input: stem leaves 9x9, the 9x9
    // stride-2 primary convolution a 1x1 grid
    CapsNetConfig c17;
    c17.input_height = c17.input_width = 17;
    CHECK_NOTHROW(c17.validate());
    CHECK(c17.grid_h() == 1);
    CapsNetConfig c16;
    c16.input_height = c16.input_width = 16;
    CHECK_THROWS_WITH_AS(c16.validate(), doctest::Contains("input too small"), ConfigError);
}

namespace {
CapsNetConfig tiny_config() {
    CapsNetConfig c;
    c.input_height = c.input_width = 12;
    c.C = 3;
    c.D1 = 4;
    c.D2 = 4;
    c.F = 2;
    c.stem_maps = 6;
    c.stem_kernel = 5;
    c.primary_kernel = 3;
    c.routing_iterations = 2;
    return c;
}
}  // namespace

TEST_CASE("primary capsule vectors have norm < 1 and zero stem gives zero capsules") {
    Rng rng(9);
    CapsNet net(tiny_config(), rng);
    Tensor img({12, 12, 1});
    Rng ir(10);
    fill_uniform(img, ir, 0, 1);
    const Tensor v = net.routing_outputs(img);
    REQUIRE(v.shape == std::vector<int>{3, 4});
    for (int k = 0; k < 3; ++k) {
        real n2 = 0;
        for (int d = 0; d < 4; ++d) n2 += v.at(k, d) * v.at(k, d);
        CHECK(std::sqrt(n2) < 1);
    }
    // zero image and zero parameters -> all capsule outputs zero
    for (Parameter* p : net.parameters()) std::fill(p->value.data.begin(), p->value.data.end(), 0);
    const Tensor vz = net.routing_outputs(Tensor({12, 12, 1}, 0.0));
    for (real x : vz.data) CHECK(x == 0);
}

TEST_CASE("masking: keeps one row, idempotent, inference picks the longest") {
    Tensor v({2, 3}, std::vector<real>{1, 2, 3, 4, 5, 6});
    Graph g;
    NodeId masked = mask_by_target(g, g.input(v), {1, 0});
    const Tensor& m = g.value(masked);
    REQUIRE(m.shape == std::vector<int>{6});
    CHECK(m[0] == 1);
    CHECK(m[2] == 3);
    CHECK(m[3] == 0);
    CHECK(m[5] == 0);
    // idempotent: masking the already-masked rows changes nothing
    NodeId again = mask_rows(g, g.input(v), 0);
    NodeId twice = mask_rows(g, again, 0);
    CHECK(g.value(again).data == g.value(twice).data);
    // inference mode picks row 1 (norm 8.77 > 3.74)
    NodeId longest = mask_by_longest(g, g.input(v));
    CHECK(g.value(longest)[0] == 0);
    CHECK(g.value(longest)[3] == 4);
}

TEST_CASE("reconstruction decoder shape chain and zero-input midpoint") {
    Rng rng(11);
    CapsNetConfig cfg = tiny_config();
    cfg.recon_weight = 1;
    CapsNet net(cfg, rng);
    // zero all parameters: masked input 0, decoder outputs sigmoid(0) = 0.5 at
    // every pixel, so the reconstruction loss is sum (0.5 - x)^2
    for (Parameter* p : net.parameters()) std::fill(p->value.data.begin(), p->value.data.end(), 0);
    Tensor img({12, 12, 1});
    Rng ir(12);
    fill_uniform(img, ir, 0, 1);
    Graph g;
    auto fw = net.build_loss(g, img, 1);
    const Tensor& recon = g.value(fw.recon);
    REQUIRE(recon.size() == 12 * 12);
    for (real r : recon.data) CHECK(r == 0.5);
    real expect = 0;
    for (real x : img.data) expect += (0.5 - x) * (0.5 - x);
    // recon_weight is 1, margin loss from zero capsules is a constant
    const real margin = g.value(fw.margin).scalar_value();
    CHECK(g.value(fw.loss).scalar_value() == doctest::Approx(margin + expect).epsilon(1e-12));
}

TEST_CASE("total loss: recon_weight 0 gives margin loss; linear in recon_weight") {
    Tensor img({12, 12, 1});
    Rng ir(13);
    fill_uniform(img, ir, 0, 1);
    auto losses_at = [&](real w) {
        CapsNetConfig cfg = tiny_config();
        cfg.recon_weight = w;
        Rng rng(14);  // same seed -> identical parameters across weights
        CapsNet net(cfg, rng);
        Graph g;
        auto fw = net.build_loss(g, img, 2);
        const real margin = g.value(fw.margin).scalar_value();
        real recon = 0;
        if (fw.recon >= 0) {
            const Tensor& r = g.value(fw.recon);
            for (long i = 0; i < r.size(); ++i)
                recon += (r[i] - img[i]) * (r[i] - img[i]);
        }
        const real total = g.value(fw.loss).scalar_value();
        return std::tuple<real, real, real>(margin, recon, total);
    };
    auto [m0, r0, t0] = losses_at(0);
    CHECK(t0 == m0);
    auto [m1, r1, t1] = losses_at(0.5);
    auto [m2, r2, t2] = losses_at(1.0);
    CHECK(m1 == m2);
    CHECK(r1 == r2);
    CHECK(t1 == doctest::Approx(m1 + 0.5 * r1).epsilon(1e-13));
    CHECK(t2 == doctest::Approx(m2 + 1.0 * r2).epsilon(1e-13));
}

TEST_CASE("capsnet_predict: argmax of norms, ties to the lowest index, scale invariant") {
    auto with_norms = [](const std::vector<real>& norms) {
        Tensor v({static_cast<int>(norms.size()), 2});
        for (size_t k = 0; k < norms.size(); ++k) v.at(static_cast<int>(k), 0) = norms[k];
        return v;
    };
    CHECK(capsnet_predict(with_norms({0.1, 0.9, 0.3})) == 1);
    CHECK(capsnet_predict(with_norms({0.4, 0.4, 0.4})) == 0);
    Rng rng(15);
    for (int rep = 0; rep < 100; ++rep) {
        Tensor v({5, 3});
        fill_uniform(v, rng, -1, 1);
        int brute = 0;
        real best = -1;
        for (int k = 0; k < 5; ++k) {
            real n2 = 0;
            for (int d = 0; d < 3; ++d) n2 += v.at(k, d) * v.at(k, d);
            if (n2 > best) {
                best = n2;
                brute = k;
            }
        }
        CHECK(capsnet_predict(v) == brute);
        Tensor scaled = v;
        for (auto& x : scaled.data) x *= 7.5;
        CHECK(capsnet_predict(scaled) == brute);
    }
}

TEST_CASE("detached couplings still give a usable gradient path") {
    CapsNetConfig cfg = tiny_config();
    cfg.detach_couplings = true;
    Rng rng(16);
    CapsNet net(cfg, rng);
    Tensor img({12, 12, 1});
    Rng ir(17);
    fill_uniform(img, ir, 0, 1);
    Graph g;
    auto fw = net.build_loss(g, img, 0);
    g.backward(fw.loss);
    real gsum = 0;
    for (Parameter* p : net.parameters())
        for (real x : p->grad.data) gsum += std::fabs(x);
    CHECK(gsum > 0);
}

TEST_CASE("checkpoint container round-trips bit-exactly") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "capsbench_ckpt_test.bin").string();
    Parameter a = make_param("alpha", {3, 4}, 20);
    Parameter b = make_param("beta/nested.name", {7}, 21);
    a.value[0] = real(1) / 3;           // non-terminating binary fraction
    a.value[1] = 5e-324;                // subnormal
    a.value[2] = -0.0;
    save_checkpoint(path, "model=capsnet\nseed=5\n", {&a, &b});
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.config_text == "model=capsnet\nseed=5\n");
    REQUIRE(ck.blobs.size() == 2);
    const Tensor& ra = ck.require("alpha");
    REQUIRE(ra.shape == a.value.shape);
    for (long i = 0; i < ra.size(); ++i) {
        // bit-exact: compare representations, not values (covers -0.0)
        double x = static_cast<double>(ra[i]), y = static_cast<double>(a.value[i]);
        CHECK(std::memcmp(&x, &y, sizeof x) == 0);
    }
    CHECK(ck.find("gamma") == nullptr);
    CHECK_THROWS_AS(ck.require("gamma"), DataError);
    // second save of the loaded checkpoint produces identical bytes
    const std::string path2 = path + ".2";
    save_checkpoint(path2, ck);
    CHECK(read_file_bytes(path) == read_file_bytes(path2));
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("checkpoint loader rejects a bad magic") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "capsbench_badmagic.bin").string();
    FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOPE", f);
    std::fclose(f);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    fs::remove(path);
}
