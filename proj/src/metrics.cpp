#include "capsbench/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace capsbench {

namespace {
int split_rank(const std::string& split) {
    if (split == "train") return 0;
    if (split == "validation") return 1;
    if (split == "test") return 2;
    return 3;
}

std::string fmt(real v, const char* spec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, static_cast<double>(v));
    return buf;
}
}  // namespace

void emit_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
    std::vector<MetricsRecord> sorted = records;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const MetricsRecord& a, const MetricsRecord& b) {
                         if (a.epoch != b.epoch) return a.epoch < b.epoch;
                         return split_rank(a.split) < split_rank(b.split);
                     });
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "epoch,split,loss,accuracy,wall_time_s\n";
    for (const MetricsRecord& r : sorted)
        out << r.epoch << "," << r.split << "," << fmt(r.loss, "%.9g") << ","
            << fmt(r.accuracy, "%.9g") << "," << fmt(r.wall_time_s, "%.3f") << "\n";
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("metrics file '" + path + "' not found");
    std::vector<MetricsRecord> records;
    std::string line;
    if (!std::getline(in, line) || line != "epoch,split,loss,accuracy,wall_time_s")
        throw DataError("metrics file '" + path + "': bad header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string field;
        MetricsRecord r;
        std::getline(row, field, ',');
        r.epoch = std::stoi(field);
        std::getline(row, r.split, ',');
        std::getline(row, field, ',');
        r.loss = static_cast<real>(std::stod(field));
        std::getline(row, field, ',');
        r.accuracy = static_cast<real>(std::stod(field));
        std::getline(row, field, ',');
        r.wall_time_s = static_cast<real>(std::stod(field));
        records.push_back(std::move(r));
    }
    return records;
}

void emit_results_table(const std::vector<RunSummary>& summaries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "dataset,classes,instances,algorithm,avg_training_time,test_accuracy\n";
    for (const RunSummary& s : summaries)
        out << s.dataset << "," << s.classes << "," << s.instances << "," << s.algorithm << ","
            << fmt(s.avg_training_time_s, "%.1f") << "s," << fmt(s.test_accuracy * 100, "%.1f")
            << "%\n";
}

}  // namespace capsbench
