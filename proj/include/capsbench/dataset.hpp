#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsbench/image.hpp"
#include "capsbench/tensor.hpp"

namespace capsbench {

struct Sample {
    Tensor image;  // HxWx1, values in [0,1]
    int label = 0;
    std::string source_id;
};

struct DatasetSplit {
    std::vector<Sample> train, validation, test;
    uint64_t seed = 0;
};

// Deterministic 70/15/15 split; stratified keeps the ratios per class
// (within +/- 1 sample).
DatasetSplit split_dataset(const std::vector<Sample>& samples, uint64_t seed,
                           bool stratified = true);

// repeats independent K-fold partitions; within each repeat the validation
// folds are disjoint and cover the whole set.
std::vector<std::pair<std::vector<Sample>, std::vector<Sample>>> kfold_split(
    const std::vector<Sample>& samples, int k, int repeats, uint64_t seed);

// --- synthetic shape dataset ---
enum class ShapeKind { Rectangle, Ellipse, Triangle, Cross };
ShapeKind shape_kind_from_name(const std::string& name);
std::string shape_kind_name(ShapeKind kind);

// Grayscale images of a single shape per class with seed-deterministic
// position/scale/rotation jitter. jitter = 0 renders the canonical pose, so
// images within a class are identical.
std::vector<Sample> synth_shapes(int n_per_class, const std::vector<ShapeKind>& classes, int size,
                                 uint64_t seed, real jitter);

// "synth:classes=rectangle,ellipse;n=50;size=64;seed=1;jitter=0.1"
struct SynthSpec {
    std::vector<ShapeKind> classes = {ShapeKind::Rectangle, ShapeKind::Ellipse,
                                      ShapeKind::Triangle, ShapeKind::Cross};
    int n_per_class = 50;
    int size = 64;
    uint64_t seed = 1;
    real jitter = 0.1;
};
bool is_synth_spec(const std::string& text);
SynthSpec parse_synth_spec(const std::string& text);
std::vector<Sample> generate_synth(const SynthSpec& spec);

// --- named per-dataset preprocessing chains ---
struct PreprocessStep {
    enum class Kind { ToGrayscale, MinMaxNormalize, EqualizeConditional, Resize };
    Kind kind = Kind::MinMaxNormalize;
    int out_h = 0, out_w = 0;          // Resize
    real range_threshold = 0.6;        // EqualizeConditional
    real entropy_threshold = 3.0;      // EqualizeConditional, bits
    std::string name() const;
};

struct PreprocessChain {
    std::string dataset;
    std::vector<PreprocessStep> steps;
    Tensor apply(const Tensor& image) const;
    std::vector<std::string> step_names() const;
};

// Known dataset names: yale, mit, belgiumts, cifar100.
PreprocessChain chain_for_dataset(const std::string& name);

// Directory layout <root>/<class-id>/<image files> (PGM), plus optional
// index.csv with path,label rows (paths relative to root).
std::vector<Sample> load_dataset_dir(const std::string& root);
// Writes samples as <out>/<label>/<n>.pgm plus index.csv.
void save_dataset_dir(const std::string& out_dir, const std::vector<Sample>& samples);

// Resolves a dataset reference: either a synth spec string or a directory.
std::vector<Sample> load_dataset(const std::string& ref);

int num_classes(const std::vector<Sample>& samples);

}  // namespace capsbench
