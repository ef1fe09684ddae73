// Acceptance gate: one pass/fail line per top-level requirement. Each check
// is independent; the process exit code is the number of failed checks.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "capsbench/adam.hpp"
#include "capsbench/capsnet.hpp"
#include "capsbench/config.hpp"
#include "capsbench/dataset.hpp"
#include "capsbench/fisherfaces.hpp"
#include "capsbench/image.hpp"
#include "capsbench/lenet.hpp"
#include "capsbench/trainer.hpp"

namespace fs = std::filesystem;
using namespace capsbench;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail = "") {
    std::printf("%s  %s%s%s\n", pass ? "PASS" : "FAIL", name.c_str(),
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void run_check(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
    try {
        auto [pass, detail] = fn();
        report(name, pass, detail);
    } catch (const std::exception& e) {
        report(name, false, std::string("exception: ") + e.what());
    }
}

real seconds_since(Clock::time_point t0) {
    return std::chrono::duration<real>(Clock::now() - t0).count();
}

real norm_of(const Tensor& t) {
    real n2 = 0;
    for (real v : t.data) n2 += v * v;
    return std::sqrt(n2);
}

// --- 1: squash law over 10^4 random vectors, dims 1..64, under a second ---
std::pair<bool, std::string> check_squash_law() {
    Rng rng(101);
    const auto t0 = Clock::now();
    real worst_norm = 0, worst_cos = 1;
    for (int i = 0; i < 10000; ++i) {
        const int dim = 1 + rng.index(64);
        Tensor s({dim});
        fill_normal(s, rng, 0, rng.uniform(0.01, 20));
        const Tensor v = squash(s);
        const real sn = norm_of(s), vn = norm_of(v);
        const real expect = sn * sn / (1 + sn * sn);
        worst_norm = std::max(worst_norm, std::fabs(vn - expect));
        if (sn > 0 && vn > 0) {
            real dot = 0;
            for (int d = 0; d < dim; ++d) dot += s[d] * v[d];
            worst_cos = std::min(worst_cos, dot / (sn * vn));
        }
    }
    const real elapsed = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "max |norm err| %.2e, min cosine 1-%.2e, %.2fs", worst_norm,
                  1 - worst_cos, elapsed);
    return {worst_norm <= 1e-12 && worst_cos >= 1 - 1e-12 && elapsed < 1.0, buf};
}

real margin_loss_of(const std::vector<real>& norms, int target, Rng& dir) {
    Graph g;
    const int C = static_cast<int>(norms.size());
    Tensor v({C, 4});
    for (int k = 0; k < C; ++k) {
        if (norms[static_cast<size_t>(k)] == 0) continue;
        Tensor row({4});
        fill_normal(row, dir, 0, 1);
        const real n = norm_of(row);
        for (int d = 0; d < 4; ++d) v.at(k, d) = row[d] * norms[static_cast<size_t>(k)] / n;
    }
    std::vector<real> T(norms.size(), 0);
    T[static_cast<size_t>(target)] = 1;
    return g.value(margin_loss(g, g.input(v), T, 0.9, 0.1, 0.5)).scalar_value();
}

// --- 2: margin-loss substitution cases exact; non-negative on 10^4 random ---
std::pair<bool, std::string> check_margin_loss() {
    Rng dir(102);
    const real a = margin_loss_of({0.95, 0, 0}, 0, dir);
    const real b = margin_loss_of({0, 0, 0}, 0, dir);
    const real c = margin_loss_of({0, 0.5}, 0, dir) - b;  // isolate the non-target term
    bool pass = std::fabs(a) <= 1e-12 && std::fabs(b - 0.81) <= 1e-12 && std::fabs(c - 0.08) <= 1e-12;
    Rng rng(103);
    for (int i = 0; i < 10000 && pass; ++i) {
        std::vector<real> norms(1 + rng.index(6));
        for (auto& n : norms) n = rng.uniform(0, 2);
        pass = margin_loss_of(norms, rng.index(static_cast<int>(norms.size())), dir) >= 0;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "cases %.3g / %.3g / %.3g, 10^4 random losses non-negative", a,
                  b + 0.0, c);
    return {pass, buf};
}

// --- 3: routing invariants ---
std::pair<bool, std::string> check_routing() {
    Rng rng(104);
    bool rows_ok = true, uniform_ok = true, closed_ok = true;
    {
        Tensor uh({7, 4, 5});
        fill_uniform(uh, rng, -1, 1);
        Graph g;
        RoutingResult r = routing_forward(g, g.input(uh), 4);
        for (NodeId cn : r.c_per_iter) {
            const Tensor& c = g.value(cn);
            for (int i = 0; i < 7; ++i) {
                real s = 0;
                for (int j = 0; j < 4; ++j) s += c.at(i, j);
                rows_ok = rows_ok && std::fabs(s - 1) <= 1e-12;
            }
        }
        const Tensor& c0 = g.value(r.c_per_iter[0]);
        for (long i = 0; i < c0.size(); ++i)
            uniform_ok = uniform_ok && std::fabs(c0[i] - 0.25) <= 1e-12;
    }
    {
        Tensor uh({6, 1, 3});
        fill_uniform(uh, rng, -1, 1);
        Tensor s({3});
        for (int i = 0; i < 6; ++i)
            for (int d = 0; d < 3; ++d) s[d] += uh.at(i, 0, d);
        const Tensor expect = squash(s);
        for (int iters : {1, 3, 5}) {
            Graph g;
            RoutingResult r = routing_forward(g, g.input(uh), iters);
            for (int d = 0; d < 3; ++d)
                closed_ok = closed_ok && g.value(r.v)[d] == expect[d];
        }
    }
    std::string detail = std::string("coupling rows sum to 1: ") + (rows_ok ? "yes" : "NO") +
                         "; uniform at b=0: " + (uniform_ok ? "yes" : "NO") +
                         "; C=1 closed form exact: " + (closed_ok ? "yes" : "NO");
    return {rows_ok && uniform_ok && closed_ok, detail};
}

// --- 4: end-to-end gradient checks, three models, under 10 minutes ---
std::pair<bool, std::string> check_gradients() {
    const auto t0 = Clock::now();
    auto one = [](const std::string& text) {
        ExperimentConfig cfg = ExperimentConfig::from_text(text);
        return gradcheck_model(cfg, 50, 1e-4);
    };
    const GradcheckOutcome caps = one(
        "model=capsnet\ndataset=unused\ninput_height=12\ninput_width=12\nclasses=3\n"
        "capsnet.stem_maps=8\ncapsnet.stem_kernel=5\ncapsnet.primary_kernel=3\n"
        "capsnet.F=2\ncapsnet.D1=4\ncapsnet.D2=4\ncapsnet.routing_iterations=2\n");
    const GradcheckOutcome lenet = one(
        "model=lenet\ndataset=unused\ninput_height=32\ninput_width=32\nclasses=10\n"
        "lenet.kernel=3\nlenet.channels=6,16,32\nlenet.fc1=64\nlenet.fc2=32\n");
    const GradcheckOutcome res =
        one("model=tiny_resnet\ndataset=unused\ninput_height=16\ninput_width=16\nclasses=4\n");
    const real elapsed = seconds_since(t0);
    char buf[240];
    std::snprintf(buf, sizeof buf,
                  "max rel err capsnet %.2e / lenet %.2e / tiny_resnet %.2e over %zu+%zu+%zu "
                  "entries, %.1fs",
                  caps.report.max_rel_err, lenet.report.max_rel_err, res.report.max_rel_err,
                  caps.report.entries.size(), lenet.report.entries.size(),
                  res.report.entries.size(), elapsed);
    const bool enough = caps.report.entries.size() >= 50 && lenet.report.entries.size() >= 50 &&
                        res.report.entries.size() >= 50;
    return {caps.report.pass && lenet.report.pass && res.report.pass && enough && elapsed < 600,
            buf};
}

// --- 5: the reference convolutional chain, all ten intermediate shapes ---
std::pair<bool, std::string> check_lenet_chain() {
    Rng rng(105);
    LeNet net(LeNetConfig{}, rng);
    const std::vector<std::vector<int>> expected = {
        {84, 84, 6}, {42, 42, 6}, {36, 36, 16}, {18, 18, 16}, {12, 12, 32},
        {6, 6, 32},  {1152},      {300},        {200},        {62},
    };
    const auto got = net.layer_output_shapes();
    bool pass = got.size() == expected.size();
    for (size_t i = 0; pass && i < expected.size(); ++i) pass = got[i] == expected[i];
    return {pass, std::to_string(got.size()) + " layer shapes asserted"};
}

// --- 6: fisherfaces against a brute-force nearest-neighbor oracle ---
std::pair<bool, std::string> check_fisherfaces_oracle() {
    Rng rng(106);
    const int C = 3, per = 30, dim = 10;
    auto sample_class = [&](int c, Rng& r) {
        Tensor x({dim});
        for (int d = 0; d < dim; ++d) x[d] = r.normal(d == c ? 10.0 * (c + 1) : 0.0, 1.0);
        return x;
    };
    Tensor train({C * per, dim});
    std::vector<int> labels;
    for (int c = 0; c < C; ++c)
        for (int s = 0; s < per; ++s) {
            const Tensor x = sample_class(c, rng);
            for (int d = 0; d < dim; ++d) train.at(c * per + s, d) = x[d];
            labels.push_back(c);
        }
    FisherfaceModel model = fisher_fit(train, labels, 5);
    if (model.n_components > C - 1)
        return {false, "discriminant count exceeds C-1"};
    // brute-force oracle: nearest projected training reference
    auto oracle = [&](const Tensor& img) {
        Tensor proj({model.n_components});
        for (int m = 0; m < model.n_components; ++m) {
            real s = 0;
            for (int d = 0; d < dim; ++d)
                s += (img[d] - model.mean_face[d]) * model.projection.at(d, m);
            proj[m] = s;
        }
        int best = -1;
        real best_d = 0;
        for (int r = 0; r < model.references.dim(0); ++r) {
            real d2 = 0;
            for (int m = 0; m < model.n_components; ++m) {
                const real diff = proj[m] - model.references.at(r, m);
                d2 += diff * diff;
            }
            if (best < 0 || d2 < best_d ||
                (d2 == best_d && model.labels[static_cast<size_t>(r)] <
                                     model.labels[static_cast<size_t>(best)])) {
                best = r;
                best_d = d2;
            }
        }
        return model.labels[static_cast<size_t>(best)];
    };
    Rng qr(107);
    int correct = 0, agree = 0;
    const int Q = 60;
    for (int q = 0; q < Q; ++q) {
        const int c = q % C;
        const Tensor img = sample_class(c, qr);
        const int pred = fisher_predict(model, img);
        correct += pred == c;
        agree += pred == oracle(img);
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "test accuracy %d/%d, oracle agreement %d/%d, %d discriminants",
                  correct, Q, agree, Q, model.n_components);
    return {correct == Q && agree == Q, buf};
}

// --- 7: desk-scale learning on synthetic shapes ---
struct DeskRun {
    int epochs_used = 0;
    real test_accuracy = 0;
};

template <typename Net, typename StepFn, typename PredictFn>
DeskRun desk_train(Net& net, StepFn step, PredictFn predict, const std::vector<Sample>& train_set,
                   const std::vector<Sample>& test_set, int batch, int max_epochs, real target,
                   uint64_t seed) {
    Adam opt(net.parameters(), AdamConfig{});
    Rng shuffle_rng(seed);
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    DeskRun run;
    for (int epoch = 1; epoch <= max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(batch)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(batch));
            opt.zero_grad();
            for (size_t i = begin; i < end; ++i) step(train_set[order[i]]);
            const real inv = real(1) / static_cast<real>(end - begin);
            for (Parameter* p : net.parameters())
                for (long k = 0; k < p->grad.size(); ++k) p->grad[k] *= inv;
            opt.step();
        }
        run.epochs_used = epoch;
        run.test_accuracy = evaluate_accuracy(predict, test_set);
        if (run.test_accuracy >= target) break;
    }
    return run;
}

std::pair<bool, std::string> check_desk_scale() {
    const auto t0 = Clock::now();
    const std::vector<ShapeKind> kinds = {ShapeKind::Rectangle, ShapeKind::Ellipse,
                                          ShapeKind::Triangle, ShapeKind::Cross};
    std::string detail;
    bool pass = true;
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        // 200 training and 50 held-out test images, drawn with different seeds
        auto train_set = synth_shapes(50, kinds, 64, 1000 + seed, 0.1);
        auto test_set = synth_shapes(13, kinds, 64, 2000 + seed, 0.1);
        test_set.resize(50);

        CapsNetConfig ccfg;
        ccfg.input_height = ccfg.input_width = 64;
        ccfg.C = 4;
        ccfg.D1 = 8;
        ccfg.F = 8;
        ccfg.D2 = 8;
        ccfg.stem_maps = 8;
        Rng crng(seed);
        CapsNet caps(ccfg, crng);
        const DeskRun caps_run = desk_train(
            caps,
            [&](const Sample& s) {
                Graph g;
                auto fw = caps.build_loss(g, s.image, s.label);
                g.backward(fw.loss);
            },
            [&](const Tensor& img) { return caps.predict(img); }, train_set, test_set, 16, 30,
            0.95, seed * 7 + 1);

        LeNetConfig lcfg;
        lcfg.input_height = lcfg.input_width = 64;
        lcfg.classes = 4;
        Rng lrng(seed);
        LeNet lenet(lcfg, lrng);
        const DeskRun lenet_run = desk_train(
            lenet,
            [&](const Sample& s) {
                Graph g;
                g.backward(lenet.build_loss(g, s.image, s.label));
            },
            [&](const Tensor& img) { return lenet.predict(img); }, train_set, test_set, 16, 30,
            0.98, seed * 7 + 2);

        char buf[160];
        std::snprintf(buf, sizeof buf, "[seed %llu: capsnet %.0f%% @%d ep, lenet %.0f%% @%d ep] ",
                      static_cast<unsigned long long>(seed), 100 * caps_run.test_accuracy,
                      caps_run.epochs_used, 100 * lenet_run.test_accuracy, lenet_run.epochs_used);
        detail += buf;
        pass = pass && caps_run.test_accuracy >= 0.95 && lenet_run.test_accuracy >= 0.98;
    }
    const real elapsed = seconds_since(t0);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.0fs total", elapsed);
    detail += buf;
    return {pass && elapsed < 1800, detail};
}

// --- 8: byte-identical metrics CSV for repeated runs ---
std::pair<bool, std::string> check_determinism() {
    const fs::path base = fs::temp_directory_path() / "capsbench_acceptance_det";
    fs::remove_all(base);
    auto run_one = [&](const std::string& sub) {
        ExperimentConfig cfg;
        cfg.set("model", "capsnet");
        cfg.set("dataset", "synth:classes=rectangle,ellipse;n=12;size=16;seed=4;jitter=0.1");
        cfg.set("capsnet.stem_maps", "4");
        cfg.set("capsnet.stem_kernel", "5");
        cfg.set("capsnet.primary_kernel", "3");
        cfg.set("capsnet.D1", "4");
        cfg.set("capsnet.D2", "4");
        cfg.set("capsnet.F", "2");
        cfg.set("epochs", "3");
        cfg.set("batch_size", "8");
        cfg.set("seed", "11");
        cfg.set("timing", "off");  // wall time is the one legitimately varying column
        cfg.set("output_dir", (base / sub).string());
        return train(cfg).metrics_path;
    };
    const auto a = read_file_bytes(run_one("a"));
    const auto b = read_file_bytes(run_one("b"));
    fs::remove_all(base);
    char buf[80];
    std::snprintf(buf, sizeof buf, "%zu bytes, %s", a.size(), a == b ? "identical" : "DIFFER");
    return {!a.empty() && a == b, buf};
}

// --- 9: preprocessing chains apply exactly the listed steps ---
std::pair<bool, std::string> check_preprocessing() {
    struct Row {
        std::string dataset;
        std::vector<std::string> steps;
        int in_h, in_w, in_c, out_h, out_w;
    };
    const std::vector<Row> rows = {
        {"yale", {"min_max_normalize", "histogram_equalize_conditional", "resize_96x84"}, 192, 168, 1, 96, 84},
        {"mit", {"min_max_normalize", "histogram_equalize_conditional", "resize_72x55"}, 200, 200, 1, 72, 55},
        {"belgiumts", {"to_grayscale", "min_max_normalize", "resize_90x90"}, 123, 77, 3, 90, 90},
        {"cifar100", {"to_grayscale", "min_max_normalize"}, 32, 32, 3, 32, 32},
    };
    Rng rng(108);
    for (const Row& row : rows) {
        const PreprocessChain chain = chain_for_dataset(row.dataset);
        if (chain.step_names() != row.steps)
            return {false, row.dataset + ": configured steps differ from the recipe"};
        Tensor img({row.in_h, row.in_w, row.in_c});
        fill_uniform(img, rng, 0, 1);
        const Tensor out = chain.apply(img);
        if (out.shape != std::vector<int>{row.out_h, row.out_w, 1})
            return {false, row.dataset + ": output is " + shape_str(out.shape)};
    }
    return {true, "yale/mit/belgiumts/cifar100 chains and target sizes verified"};
}

// --- 10: CIFAR-100 loader round trip ---
std::pair<bool, std::string> check_cifar_roundtrip() {
    std::vector<unsigned char> file;
    Rng rng(109);
    for (int r = 0; r < 3; ++r) {
        file.push_back(static_cast<unsigned char>(5 * r));       // coarse
        file.push_back(static_cast<unsigned char>(33 * r + 1));  // fine
        for (int i = 0; i < 3072; ++i)
            file.push_back(static_cast<unsigned char>(rng.index(256)));
    }
    const auto records = parse_cifar100(file);
    bool labels_ok = records.size() == 3;
    for (const Cifar100Record& rec : records)
        labels_ok = labels_ok && rec.fine >= 0 && rec.fine < 100;
    const bool bytes_ok = encode_cifar100(records) == file;
    return {labels_ok && bytes_ok,
            std::string("3 records, labels in [0,100): ") + (labels_ok ? "yes" : "NO") +
                ", re-serialization byte-identical: " + (bytes_ok ? "yes" : "NO")};
}

}  // namespace

int main() {
    run_check("squash law: ||v|| = ||s||^2/(1+||s||^2), direction preserved, 10^4 vectors < 1s",
              check_squash_law);
    run_check("margin loss: substitution cases exact to 1e-12, non-negative on 10^4 random inputs",
              check_margin_loss);
    run_check("routing: rows sum to 1, uniform couplings at b=0, C=1 closed form", check_routing);
    run_check("end-to-end gradient checks (capsnet 12x12, lenet 32x32 variant, tiny_resnet 16x16)",
              check_gradients);
    run_check("lenet shape chain: all 10 intermediate shapes", check_lenet_chain);
    run_check("fisherfaces: 100% on separated Gaussians, agrees with nearest-neighbor oracle",
              check_fisherfaces_oracle);
    run_check("desk-scale learning: capsnet >= 95%, lenet >= 98% on 64x64 shapes, 3 seeds",
              check_desk_scale);
    run_check("determinism: repeated training yields byte-identical metrics CSV",
              check_determinism);
    run_check("preprocessing conformance: per-dataset chains and resize targets",
              check_preprocessing);
    run_check("cifar-100 loader: hand-built 3-record file round-trips byte-identically",
              check_cifar_roundtrip);
    std::printf("%d of 10 checks failed\n", g_failures);
    return g_failures;
}
