#include "capsbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "capsbench/rng.hpp"

namespace fs = std::filesystem;

namespace capsbench {

DatasetSplit split_dataset(const std::vector<Sample>& samples, uint64_t seed, bool stratified) {
    DatasetSplit split;
    split.seed = seed;
    Rng rng(seed);

    auto distribute = [&](std::vector<int> idx) {
        rng.shuffle(idx);
        const long n = static_cast<long>(idx.size());
        const long n_train = static_cast<long>(std::floor(n * 0.70));
        const long n_val = static_cast<long>(std::floor(n * 0.15));
        for (long i = 0; i < n; ++i) {
            const Sample& s = samples[static_cast<size_t>(idx[static_cast<size_t>(i)])];
            if (i < n_train)
                split.train.push_back(s);
            else if (i < n_train + n_val)
                split.validation.push_back(s);
            else
                split.test.push_back(s);
        }
    };

    if (stratified) {
        std::map<int, std::vector<int>> by_class;
        for (size_t i = 0; i < samples.size(); ++i)
            by_class[samples[i].label].push_back(static_cast<int>(i));
        for (auto& [label, idx] : by_class) distribute(std::move(idx));
    } else {
        std::vector<int> idx(samples.size());
        std::iota(idx.begin(), idx.end(), 0);
        distribute(std::move(idx));
    }
    return split;
}

std::vector<std::pair<std::vector<Sample>, std::vector<Sample>>> kfold_split(
    const std::vector<Sample>& samples, int k, int repeats, uint64_t seed) {
    if (k < 2) throw ConfigError("kfold_split: K must be >= 2");
    if (repeats < 1) throw ConfigError("kfold_split: repeats must be >= 1");
    if (static_cast<int>(samples.size()) < k)
        throw DataError("kfold_split: fewer samples than folds");

    std::vector<std::pair<std::vector<Sample>, std::vector<Sample>>> folds;
    Rng rng(seed);
    const long n = static_cast<long>(samples.size());
    for (int rep = 0; rep < repeats; ++rep) {
        std::vector<int> idx(samples.size());
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        // fold f gets indices [f*n/k, (f+1)*n/k)
        for (int f = 0; f < k; ++f) {
            const long lo = f * n / k, hi = (f + 1) * n / k;
            std::pair<std::vector<Sample>, std::vector<Sample>> fold;
            for (long i = 0; i < n; ++i) {
                const Sample& s = samples[static_cast<size_t>(idx[static_cast<size_t>(i)])];
                if (i >= lo && i < hi)
                    fold.second.push_back(s);
                else
                    fold.first.push_back(s);
            }
            folds.push_back(std::move(fold));
        }
    }
    return folds;
}

ShapeKind shape_kind_from_name(const std::string& name) {
    if (name == "rectangle") return ShapeKind::Rectangle;
    if (name == "ellipse") return ShapeKind::Ellipse;
    if (name == "triangle") return ShapeKind::Triangle;
    if (name == "cross") return ShapeKind::Cross;
    throw ConfigError("unknown shape class '" + name + "'");
}

std::string shape_kind_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Rectangle: return "rectangle";
        case ShapeKind::Ellipse: return "ellipse";
        case ShapeKind::Triangle: return "triangle";
        case ShapeKind::Cross: return "cross";
    }
    return "?";
}

namespace {
// Membership test in the shape's local frame; s is the half-extent.
bool inside_shape(ShapeKind kind, real u, real v, real s) {
    switch (kind) {
        case ShapeKind::Rectangle:
            return std::abs(u) <= s && std::abs(v) <= real(0.6) * s;
        case ShapeKind::Ellipse: {
            const real a = u / s, b = v / (real(0.65) * s);
            return a * a + b * b <= 1;
        }
        case ShapeKind::Triangle: {
            // isoceles triangle, apex up: A=(0,-s) B=(-0.9s,s) C=(0.9s,s)
            if (v > s) return false;
            const real half_width = real(0.9) * s * (v + s) / (2 * s);
            return std::abs(u) <= half_width;
        }
        case ShapeKind::Cross:
            return (std::abs(u) <= real(0.3) * s && std::abs(v) <= s) ||
                   (std::abs(v) <= real(0.3) * s && std::abs(u) <= s);
    }
    return false;
}
}  // namespace

std::vector<Sample> synth_shapes(int n_per_class, const std::vector<ShapeKind>& classes, int size,
                                 uint64_t seed, real jitter) {
    if (n_per_class < 1 || size < 4) throw ConfigError("synth_shapes: invalid size parameters");
    if (classes.empty()) throw ConfigError("synth_shapes: need at least one class");
    Rng rng(seed);
    std::vector<Sample> samples;
    for (size_t ci = 0; ci < classes.size(); ++ci) {
        const ShapeKind kind = classes[ci];
        for (int i = 0; i < n_per_class; ++i) {
            // Always draw the same number of values so that the stream stays
            // aligned across jitter settings.
            const real dx = rng.uniform(-0.12, 0.12) * jitter;
            const real dy = rng.uniform(-0.12, 0.12) * jitter;
            const real ds = rng.uniform(-0.25, 0.25) * jitter;
            const real rot = rng.uniform(-0.5, 0.5) * jitter;

            const real cx = real(0.5) + dx, cy = real(0.5) + dy;
            const real s = real(0.3) * (1 + ds);
            const real cos_r = std::cos(rot), sin_r = std::sin(rot);

            Tensor img({size, size, 1});
            const real inv = real(1) / size;
            for (int h = 0; h < size; ++h)
                for (int w = 0; w < size; ++w) {
                    // 2x2 supersampling for soft edges
                    int hits = 0;
                    for (int sub = 0; sub < 4; ++sub) {
                        const real py = (h + real(0.25) + real(0.5) * (sub / 2)) * inv - cy;
                        const real px = (w + real(0.25) + real(0.5) * (sub % 2)) * inv - cx;
                        const real u = cos_r * px + sin_r * py;
                        const real v = -sin_r * px + cos_r * py;
                        if (inside_shape(kind, u, v, s)) ++hits;
                    }
                    img.at(h, w, 0) = hits * real(0.25);
                }
            Sample sample;
            sample.image = std::move(img);
            sample.label = static_cast<int>(ci);
            sample.source_id = "synth:" + shape_kind_name(kind) + ":" + std::to_string(i);
            samples.push_back(std::move(sample));
        }
    }
    return samples;
}

bool is_synth_spec(const std::string& text) { return text.rfind("synth:", 0) == 0 || text == "synth"; }

SynthSpec parse_synth_spec(const std::string& text) {
    SynthSpec spec;
    if (text == "synth") return spec;
    if (!is_synth_spec(text)) throw ConfigError("not a synth spec: '" + text + "'");
    std::stringstream body(text.substr(6));
    std::string item;
    while (std::getline(body, item, ';')) {
        if (item.empty()) continue;
        const size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("synth spec: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
        if (key == "classes") {
            spec.classes.clear();
            std::stringstream names(value);
            std::string name;
            while (std::getline(names, name, ','))
                spec.classes.push_back(shape_kind_from_name(name));
        } else if (key == "n") {
            spec.n_per_class = std::stoi(value);
        } else if (key == "size") {
            spec.size = std::stoi(value);
        } else if (key == "seed") {
            spec.seed = std::stoull(value);
        } else if (key == "jitter") {
            spec.jitter = static_cast<real>(std::stod(value));
        } else {
            throw ConfigError("synth spec: unknown key '" + key + "'");
        }
    }
    return spec;
}

std::vector<Sample> generate_synth(const SynthSpec& spec) {
    return synth_shapes(spec.n_per_class, spec.classes, spec.size, spec.seed, spec.jitter);
}

std::string PreprocessStep::name() const {
    switch (kind) {
        case Kind::ToGrayscale: return "to_grayscale";
        case Kind::MinMaxNormalize: return "min_max_normalize";
        case Kind::EqualizeConditional: return "histogram_equalize_conditional";
        case Kind::Resize:
            return "resize_" + std::to_string(out_h) + "x" + std::to_string(out_w);
    }
    return "?";
}

Tensor PreprocessChain::apply(const Tensor& image) const {
    Tensor img = image;
    for (const PreprocessStep& step : steps) {
        switch (step.kind) {
            case PreprocessStep::Kind::ToGrayscale:
                img = to_grayscale(img);
                break;
            case PreprocessStep::Kind::MinMaxNormalize:
                img = min_max_normalize(img);
                break;
            case PreprocessStep::Kind::EqualizeConditional:
                if (intensity_range(img) < step.range_threshold ||
                    histogram_entropy(img) < step.entropy_threshold)
                    img = histogram_equalize(img);
                break;
            case PreprocessStep::Kind::Resize:
                img = resize_bilinear(img, step.out_h, step.out_w);
                break;
        }
    }
    return img;
}

std::vector<std::string> PreprocessChain::step_names() const {
    std::vector<std::string> names;
    for (const PreprocessStep& step : steps) names.push_back(step.name());
    return names;
}

PreprocessChain chain_for_dataset(const std::string& name) {
    using Kind = PreprocessStep::Kind;
    PreprocessChain chain;
    chain.dataset = name;
    auto resize = [](int h, int w) {
        PreprocessStep s;
        s.kind = Kind::Resize;
        s.out_h = h;
        s.out_w = w;
        return s;
    };
    if (name == "yale") {
        chain.steps = {{.kind = Kind::MinMaxNormalize}, {.kind = Kind::EqualizeConditional},
                       resize(96, 84)};
    } else if (name == "mit") {
        chain.steps = {{.kind = Kind::MinMaxNormalize}, {.kind = Kind::EqualizeConditional},
                       resize(72, 55)};
    } else if (name == "belgiumts") {
        chain.steps = {{.kind = Kind::ToGrayscale}, {.kind = Kind::MinMaxNormalize},
                       resize(90, 90)};
    } else if (name == "cifar100") {
        chain.steps = {{.kind = Kind::ToGrayscale}, {.kind = Kind::MinMaxNormalize}};
    } else {
        throw ConfigError("unknown dataset '" + name +
                          "' (expected yale, mit, belgiumts, or cifar100)");
    }
    return chain;
}

std::vector<Sample> load_dataset_dir(const std::string& root) {
    if (!fs::is_directory(root)) throw DataError("dataset directory '" + root + "' not found");
    std::vector<Sample> samples;

    const fs::path index = fs::path(root) / "index.csv";
    if (fs::exists(index)) {
        std::ifstream in(index);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (first && line.rfind("path,", 0) == 0) {
                first = false;
                continue;
            }
            first = false;
            const size_t comma = line.rfind(',');
            if (comma == std::string::npos)
                throw DataError("index.csv: malformed row '" + line + "'");
            Sample s;
            const std::string rel = line.substr(0, comma);
            s.label = std::stoi(line.substr(comma + 1));
            s.image = load_pgm((fs::path(root) / rel).string());
            s.source_id = rel;
            samples.push_back(std::move(s));
        }
        return samples;
    }

    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const fs::path& dir : class_dirs) {
        const int label = std::stoi(dir.filename().string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& file : files) {
            Sample s;
            s.image = load_pgm(file.string());
            s.label = label;
            s.source_id = file.filename().string();
            samples.push_back(std::move(s));
        }
    }
    if (samples.empty()) throw DataError("dataset directory '" + root + "' has no samples");
    return samples;
}

void save_dataset_dir(const std::string& out_dir, const std::vector<Sample>& samples) {
    fs::create_directories(out_dir);
    std::ofstream index(fs::path(out_dir) / "index.csv");
    index << "path,label\n";
    std::map<int, int> counters;
    for (const Sample& s : samples) {
        const int n = counters[s.label]++;
        const fs::path class_dir = fs::path(out_dir) / std::to_string(s.label);
        fs::create_directories(class_dir);
        const std::string rel =
            std::to_string(s.label) + "/" + std::to_string(n) + ".pgm";
        save_pgm((fs::path(out_dir) / rel).string(), s.image);
        index << rel << "," << s.label << "\n";
    }
}

std::vector<Sample> load_dataset(const std::string& ref) {
    if (is_synth_spec(ref)) return generate_synth(parse_synth_spec(ref));
    return load_dataset_dir(ref);
}

int num_classes(const std::vector<Sample>& samples) {
    int c = 0;
    for (const Sample& s : samples) c = std::max(c, s.label + 1);
    return c;
}

}  // namespace capsbench
