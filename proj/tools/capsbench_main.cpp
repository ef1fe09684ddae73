#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "capsbench/config.hpp"
#include "capsbench/dataset.hpp"
#include "capsbench/metrics.hpp"
#include "capsbench/trainer.hpp"

namespace fs = std::filesystem;
using namespace capsbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& sets) {
    for (const std::string& kv : sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

std::string dataset_display_name(const std::string& ref) {
    if (is_synth_spec(ref)) return "synth_shapes";
    fs::path p(ref);
    const std::string base = p.filename().string();
    return base.empty() ? p.parent_path().filename().string() : base;
}

int run_train(const ExperimentConfig& cfg) {
    const TrainResult result = train(cfg);
    std::printf("test_accuracy %.4f\n", static_cast<double>(result.test_accuracy));
    std::printf("metrics %s\n", result.metrics_path.c_str());
    std::printf("checkpoint %s\n", result.checkpoint_path.c_str());
    if (result.aborted_nan) {
        std::fprintf(stderr,
                     "training aborted: non-finite loss (see the last train row in %s)\n",
                     result.metrics_path.c_str());
        return kExitNumeric;
    }
    return kExitOk;
}

// Worker cap from the environment. Runs execute sequentially (one worker), so
// any cap >= 1 is honored as-is; values below 1 are clamped.
int bench_workers() {
    const char* env = std::getenv("CAPSBENCH_THREADS");
    if (!env || !*env) return 1;
    int n = 1;
    try {
        n = std::stoi(env);
    } catch (...) {
        throw ConfigError(std::string("CAPSBENCH_THREADS must be an integer, got '") + env + "'");
    }
    return std::max(1, n);
}

int run_bench(const std::string& config_dir, const std::string& report_path) {
    const int worker_cap = bench_workers();
    std::printf("worker cap %d (sequential executor uses 1)\n", worker_cap);
    std::vector<fs::path> configs;
    if (!fs::is_directory(config_dir)) throw DataError("'" + config_dir + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(config_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".cfg")
            configs.push_back(entry.path());
    std::sort(configs.begin(), configs.end());
    if (configs.empty()) throw DataError("no .cfg files in '" + config_dir + "'");

    std::vector<RunSummary> rows;
    bool any_nan = false;
    for (const fs::path& path : configs) {
        ExperimentConfig cfg = ExperimentConfig::from_file(path.string());
        if (!cfg.has("output_dir"))
            cfg.set("output_dir", (path.parent_path() / path.stem()).string() + ".out");
        std::printf("== %s ==\n", path.filename().string().c_str());
        std::fflush(stdout);
        const TrainResult result = train(cfg);
        any_nan = any_nan || result.aborted_nan;
        const std::vector<Sample> samples = load_dataset(cfg.dataset());
        RunSummary row;
        row.dataset = dataset_display_name(cfg.dataset());
        row.classes = num_classes(samples);
        row.instances = static_cast<long>(samples.size());
        row.algorithm = cfg.model();
        row.avg_training_time_s = result.train_seconds;
        row.test_accuracy = result.test_accuracy;
        rows.push_back(row);
        std::printf("%s: test_accuracy %.4f (%.1fs)\n", cfg.model().c_str(),
                    static_cast<double>(result.test_accuracy),
                    static_cast<double>(result.train_seconds));
    }
    emit_results_table(rows, report_path);
    std::printf("report %s\n", report_path.c_str());
    return any_nan ? kExitNumeric : kExitOk;
}

int run_gradcheck(const ExperimentConfig& cfg, int samples, double tolerance, bool corrupt) {
    const GradcheckOutcome out =
        gradcheck_model(cfg, samples, static_cast<real>(tolerance), corrupt);
    if (!out.applicable) {
        std::printf("gradcheck: not applicable for model %s (no gradient training)\n",
                    cfg.model().c_str());
        return kExitOk;
    }
    std::printf("gradcheck: %zu entries, max_rel_err %.3e, tolerance %.1e -> %s\n",
                out.report.entries.size(), static_cast<double>(out.report.max_rel_err),
                static_cast<double>(out.report.tolerance), out.report.pass ? "pass" : "FAIL");
    if (!out.report.pass) {
        for (const GradCheckEntry& e : out.report.entries)
            if (e.rel_err > out.report.tolerance)
                std::fprintf(stderr, "  %s[%ld] analytic %.6e numeric %.6e rel_err %.3e\n",
                             e.param.c_str(), e.index, static_cast<double>(e.analytic),
                             static_cast<double>(e.numeric), static_cast<double>(e.rel_err));
        return kExitNumeric;
    }
    return kExitOk;
}

int run_synth(const std::string& spec, const std::string& out_dir) {
    if (!is_synth_spec(spec)) throw ConfigError("expected a synth:... spec, got '" + spec + "'");
    const std::vector<Sample> samples = generate_synth(parse_synth_spec(spec));
    save_dataset_dir(out_dir, samples);
    std::printf("wrote %zu images to %s\n", samples.size(), out_dir.c_str());
    return kExitOk;
}

int run_preprocess(const std::string& dataset_name, const std::string& in_dir,
                   const std::string& out_dir) {
    const PreprocessChain chain = chain_for_dataset(dataset_name);
    std::printf("chain %s:", dataset_name.c_str());
    for (const std::string& step : chain.step_names()) std::printf(" %s", step.c_str());
    std::printf("\n");
    std::vector<Sample> samples = load_dataset_dir(in_dir);
    for (Sample& s : samples) s.image = chain.apply(s.image);
    save_dataset_dir(out_dir, samples);
    std::printf("wrote %zu images to %s\n", samples.size(), out_dir.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capsbench: capsule-network and baseline classification benchmarks"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, dataset_ref, config_dir;
    std::string report_path = "results.csv";
    std::string synth_spec, out_dir, dataset_name, in_dir;
    std::vector<std::string> sets;
    int gc_samples = 50;
    double gc_tolerance = 1e-4;
    bool gc_corrupt = false;

    CLI::App* tr = app.add_subcommand("train", "Train one experiment from a config file");
    tr->add_option("config", config_path, "config file")->required();
    tr->add_option("--set", sets, "override config keys (key=value, repeatable)");

    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    ev->add_option("checkpoint", checkpoint_path, "model checkpoint")->required();
    ev->add_option("dataset", dataset_ref, "dataset directory or synth spec")->required();

    CLI::App* be = app.add_subcommand("bench", "Run every .cfg in a directory, write a report");
    be->add_option("config-dir", config_dir, "directory of .cfg files")->required();
    be->add_option("--report", report_path, "output report CSV");

    CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    gc->add_option("config", config_path, "config file")->required();
    gc->add_option("--set", sets, "override config keys (key=value, repeatable)");
    gc->add_option("--samples", gc_samples, "parameter entries to check");
    gc->add_option("--tolerance", gc_tolerance, "relative-error tolerance");
    gc->add_flag("--corrupt-backward", gc_corrupt,
                 "inject a wrong gradient (the check must then fail)");

    CLI::App* sy = app.add_subcommand("synth", "Render a synthetic shape dataset to disk");
    sy->add_option("spec", synth_spec, "synth:... spec")->required();
    sy->add_option("out-dir", out_dir, "output directory")->required();

    CLI::App* pp = app.add_subcommand("preprocess", "Apply a named preprocessing chain");
    pp->add_option("dataset-name", dataset_name, "yale | mit | belgiumts | cifar100")->required();
    pp->add_option("in-dir", in_dir, "input dataset directory")->required();
    pp->add_option("out-dir", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (tr->parsed()) {
            ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
            apply_overrides(cfg, sets);
            return run_train(cfg);
        }
        if (ev->parsed()) {
            const real acc = evaluate_checkpoint(checkpoint_path, load_dataset(dataset_ref));
            std::printf("accuracy %.4f\n", static_cast<double>(acc));
            return kExitOk;
        }
        if (be->parsed()) return run_bench(config_dir, report_path);
        if (gc->parsed()) {
            ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
            apply_overrides(cfg, sets);
            cfg.validate();
            return run_gradcheck(cfg, gc_samples, gc_tolerance, gc_corrupt);
        }
        if (sy->parsed()) return run_synth(synth_spec, out_dir);
        if (pp->parsed()) return run_preprocess(dataset_name, in_dir, out_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    }
    return kExitUsage;
}
