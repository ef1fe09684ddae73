#pragma once

#include <string>
#include <vector>

#include "capsbench/tensor.hpp"

namespace capsbench {

struct MetricsRecord {
    int epoch = 0;
    std::string split;  // train | validation | test
    real loss = 0;
    real accuracy = 0;
    real wall_time_s = 0;
};

// header: epoch,split,loss,accuracy,wall_time_s; rows ordered by (epoch,
// split) with train < validation < test.
void emit_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> parse_metrics_csv(const std::string& path);

// One row per benchmark run, Table-3-style layout.
struct RunSummary {
    std::string dataset;
    int classes = 0;
    long instances = 0;
    std::string algorithm;
    real avg_training_time_s = 0;
    real test_accuracy = 0;  // in [0,1]
};

// header: dataset,classes,instances,algorithm,avg_training_time,test_accuracy
// with accuracy printed as a percentage with one decimal (e.g. 95.3%).
void emit_results_table(const std::vector<RunSummary>& summaries, const std::string& path);

}  // namespace capsbench
