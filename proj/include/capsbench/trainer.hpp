#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capsbench/config.hpp"
#include "capsbench/dataset.hpp"
#include "capsbench/gradcheck.hpp"
#include "capsbench/metrics.hpp"

namespace capsbench {

struct TrainResult {
    std::vector<MetricsRecord> records;
    real test_accuracy = 0;
    real train_seconds = 0;
    std::string metrics_path;
    std::string checkpoint_path;
    bool aborted_nan = false;
};

// Runs one experiment end to end: load + split the dataset, train (Adam for
// the neural models, a single fit for fisherfaces), track the
// best-validation parameters, evaluate the test split once, and write
// metrics.csv plus a model checkpoint under output_dir.
TrainResult train(const ExperimentConfig& cfg);

real evaluate_accuracy(const std::function<int(const Tensor&)>& predict,
                       const std::vector<Sample>& samples);

// Loads a checkpoint and evaluates it on the given samples.
real evaluate_checkpoint(const std::string& checkpoint_path, const std::vector<Sample>& samples);

struct GradcheckOutcome {
    bool applicable = true;
    GradCheckReport report;
};

// Finite-difference check of the configured model on one synthetic input.
// corrupt_backward injects a deliberate gradient error so the failure path
// can be exercised.
GradcheckOutcome gradcheck_model(const ExperimentConfig& cfg, int max_samples = 50,
                                 real tolerance = 1e-4, bool corrupt_backward = false);

}  // namespace capsbench
