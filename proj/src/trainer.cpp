#include "capsbench/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <sstream>
#include <utility>

#include "capsbench/adam.hpp"
#include "capsbench/capsnet.hpp"
#include "capsbench/checkpoint.hpp"
#include "capsbench/fisherfaces.hpp"
#include "capsbench/lenet.hpp"
#include "capsbench/resnet.hpp"
#include "capsbench/rng.hpp"

namespace capsbench {

namespace {

using Clock = std::chrono::steady_clock;

real seconds_since(Clock::time_point t0) {
    return std::chrono::duration<real>(Clock::now() - t0).count();
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    return out;
}

CapsNetConfig capsnet_config_from(const ExperimentConfig& cfg, int h, int w, int classes) {
    CapsNetConfig c;
    c.input_height = h;
    c.input_width = w;
    c.C = classes;
    c.stem_maps = cfg.get_int("capsnet.stem_maps", c.stem_maps);
    c.stem_kernel = cfg.get_int("capsnet.stem_kernel", c.stem_kernel);
    c.primary_kernel = cfg.get_int("capsnet.primary_kernel", c.primary_kernel);
    c.primary_stride = cfg.get_int("capsnet.primary_stride", c.primary_stride);
    c.F = cfg.get_int("capsnet.F", c.F);
    c.D1 = cfg.get_int("capsnet.D1", c.D1);
    c.D2 = cfg.get_int("capsnet.D2", c.D2);
    c.routing_iterations = cfg.get_int("capsnet.routing_iterations", c.routing_iterations);
    c.m_plus = cfg.get_real("capsnet.m_plus", c.m_plus);
    c.m_minus = cfg.get_real("capsnet.m_minus", c.m_minus);
    c.lambda = cfg.get_real("capsnet.lambda", c.lambda);
    c.recon_weight = cfg.get_real("capsnet.recon_weight", c.recon_weight);
    c.decoder_h1 = cfg.get_int("capsnet.decoder_h1", c.decoder_h1);
    c.decoder_h2 = cfg.get_int("capsnet.decoder_h2", c.decoder_h2);
    c.detach_couplings = cfg.get_bool("capsnet.detach_couplings", c.detach_couplings);
    c.validate();
    return c;
}

LeNetConfig lenet_config_from(const ExperimentConfig& cfg, int h, int w, int classes) {
    LeNetConfig c;
    c.input_height = h;
    c.input_width = w;
    c.classes = classes;
    c.conv_kernel = cfg.get_int("lenet.kernel", c.conv_kernel);
    if (cfg.has("lenet.channels")) c.conv_channels = parse_int_list(cfg.get_string("lenet.channels"));
    c.fc1 = cfg.get_int("lenet.fc1", c.fc1);
    c.fc2 = cfg.get_int("lenet.fc2", c.fc2);
    c.validate();
    return c;
}

TinyResNetConfig resnet_config_from(const ExperimentConfig& cfg, int h, int w, int classes) {
    TinyResNetConfig c;
    c.input_height = h;
    c.input_width = w;
    c.classes = classes;
    c.num_blocks = cfg.get_int("resnet.blocks", c.num_blocks);
    c.channels = cfg.get_int("resnet.channels", c.channels);
    c.kernel = cfg.get_int("resnet.kernel", c.kernel);
    return c;
}

// Uniform training/evaluation interface over the three gradient-trained
// models; run() returns (loss, predicted label) for one sample and
// accumulates gradients into Parameter::grad when backward is set.
struct NeuralDriver {
    std::vector<Parameter*> params;
    std::function<std::pair<real, int>(const Sample&, bool training, bool backward)> run;
    std::function<int(const Tensor&)> predict;
    // Non-parameter state (batch-norm running statistics) written to / read
    // from checkpoints. Null when the model has none.
    std::function<void(Checkpoint&)> extra_save;
    std::function<void(const Checkpoint&)> extra_load;
};

int argmax_index(const Tensor& t) {
    int best = 0;
    for (long i = 1; i < t.size(); ++i)
        if (t[i] > t[best]) best = static_cast<int>(i);
    return best;
}

std::string bn_base_name(const BatchNorm& bn) {
    const std::string suffix = ".gamma";
    const std::string& n = bn.gamma.name;
    if (n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
        return n.substr(0, n.size() - suffix.size());
    return n;
}

NeuralDriver make_driver(const ExperimentConfig& cfg, int h, int w, int classes) {
    Rng rng(cfg.seed());
    NeuralDriver d;
    const std::string model = cfg.model();
    if (model == "capsnet") {
        auto net = std::make_shared<CapsNet>(capsnet_config_from(cfg, h, w, classes), rng);
        d.params = net->parameters();
        d.run = [net](const Sample& s, bool, bool backward) {
            Graph g;
            auto fw = net->build_loss(g, s.image, s.label);
            const real loss = g.value(fw.loss).scalar_value();
            const int pred = capsnet_predict(g.value(fw.v));
            if (backward) g.backward(fw.loss);
            return std::make_pair(loss, pred);
        };
        d.predict = [net](const Tensor& img) { return net->predict(img); };
    } else if (model == "lenet") {
        auto net = std::make_shared<LeNet>(lenet_config_from(cfg, h, w, classes), rng);
        d.params = net->parameters();
        d.run = [net](const Sample& s, bool, bool backward) {
            Graph g;
            const NodeId logits = net->build_logits(g, s.image);
            const NodeId loss = softmax_cross_entropy(g, logits, s.label);
            const real loss_v = g.value(loss).scalar_value();
            const int pred = argmax_index(g.value(logits));
            if (backward) g.backward(loss);
            return std::make_pair(loss_v, pred);
        };
        d.predict = [net](const Tensor& img) { return net->predict(img); };
    } else if (model == "tiny_resnet") {
        auto net = std::make_shared<TinyResNet>(resnet_config_from(cfg, h, w, classes), rng);
        d.params = net->parameters();
        d.run = [net](const Sample& s, bool training, bool backward) {
            Graph g;
            const NodeId logits = net->build_logits(g, s.image, training);
            const NodeId loss = softmax_cross_entropy(g, logits, s.label);
            const real loss_v = g.value(loss).scalar_value();
            const int pred = argmax_index(g.value(logits));
            if (backward) g.backward(loss);
            return std::make_pair(loss_v, pred);
        };
        d.predict = [net](const Tensor& img) { return net->predict(img); };
        auto each_bn = [net](const std::function<void(BatchNorm&)>& fn) {
            fn(net->stem_bn());
            for (ResidualBlock& b : net->blocks()) {
                fn(b.bn1);
                fn(b.bn2);
            }
        };
        d.extra_save = [each_bn](Checkpoint& ckpt) {
            each_bn([&ckpt](BatchNorm& bn) {
                const std::string base = bn_base_name(bn);
                ckpt.blobs.emplace_back(base + ".running_mean", bn.running_mean);
                ckpt.blobs.emplace_back(base + ".running_var", bn.running_var);
            });
        };
        d.extra_load = [each_bn](const Checkpoint& ckpt) {
            each_bn([&ckpt](BatchNorm& bn) {
                const std::string base = bn_base_name(bn);
                bn.running_mean = ckpt.require(base + ".running_mean");
                bn.running_var = ckpt.require(base + ".running_var");
            });
        };
    } else {
        throw ConfigError("model '" + model + "' is not gradient-trained");
    }
    return d;
}

std::string checkpoint_config_text(const ExperimentConfig& cfg, int h, int w, int classes) {
    ExperimentConfig copy = cfg;
    copy.set("input_height", std::to_string(h));
    copy.set("input_width", std::to_string(w));
    copy.set("classes", std::to_string(classes));
    return copy.to_text();
}

void save_neural_checkpoint(const std::string& path, const std::string& config_text,
                            const NeuralDriver& driver) {
    Checkpoint ckpt;
    ckpt.config_text = config_text;
    for (const Parameter* p : driver.params) ckpt.blobs.emplace_back(p->name, p->value);
    if (driver.extra_save) driver.extra_save(ckpt);
    save_checkpoint(path, ckpt);
}

struct EvalStats {
    real mean_loss = 0;
    real accuracy = 0;
};

EvalStats evaluate_split(const NeuralDriver& driver, const std::vector<Sample>& samples) {
    EvalStats st;
    if (samples.empty()) return st;
    long correct = 0;
    for (const Sample& s : samples) {
        const auto [loss, pred] = driver.run(s, /*training=*/false, /*backward=*/false);
        st.mean_loss += loss;
        correct += pred == s.label;
    }
    st.mean_loss /= static_cast<real>(samples.size());
    st.accuracy = static_cast<real>(correct) / static_cast<real>(samples.size());
    return st;
}

TrainResult train_fisherfaces(const ExperimentConfig& cfg, const DatasetSplit& split, int h, int w,
                              int classes) {
    const long P = static_cast<long>(h) * w;
    const int N = static_cast<int>(split.train.size());
    Tensor images({N, static_cast<int>(P)});
    std::vector<int> labels(split.train.size());
    for (int i = 0; i < N; ++i) {
        const Tensor& img = split.train[static_cast<size_t>(i)].image;
        if (img.size() != P) throw ShapeError("fisherfaces: inconsistent image sizes in dataset");
        for (long j = 0; j < P; ++j) images[i * P + j] = img[j];
        labels[static_cast<size_t>(i)] = split.train[static_cast<size_t>(i)].label;
    }

    TrainResult result;
    const bool timed = cfg.record_wall_time();
    const auto t0 = Clock::now();
    FisherfaceModel model = fisher_fit(images, labels, cfg.get_int("fisherfaces.n_components", 40));
    result.train_seconds = seconds_since(t0);

    auto accuracy_of = [&model](const std::vector<Sample>& samples) {
        if (samples.empty()) return real(0);
        long correct = 0;
        for (const Sample& s : samples) correct += fisher_predict(model, s.image) == s.label;
        return static_cast<real>(correct) / static_cast<real>(samples.size());
    };

    for (const auto& [name, samples] :
         {std::pair<std::string, const std::vector<Sample>*>{"train", &split.train},
          {"validation", &split.validation},
          {"test", &split.test}}) {
        const auto te = Clock::now();
        const real acc = accuracy_of(*samples);
        MetricsRecord rec;
        rec.epoch = 1;
        rec.split = name;
        rec.loss = 0;
        rec.accuracy = acc;
        rec.wall_time_s = timed ? (name == "train" ? result.train_seconds : seconds_since(te)) : 0;
        result.records.push_back(rec);
        if (name == "test") result.test_accuracy = acc;
    }

    const std::filesystem::path out(cfg.output_dir());
    std::filesystem::create_directories(out);
    const std::string ckpt_path = (out / "model.ckpt").string();
    {
        // Rewrap the model blobs with the experiment config so eval can tell
        // the model type apart.
        save_fisherface(ckpt_path, model);
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        ckpt.config_text = checkpoint_config_text(cfg, h, w, classes);
        save_checkpoint(ckpt_path, ckpt);
    }
    result.checkpoint_path = ckpt_path;
    result.metrics_path = (out / "metrics.csv").string();
    emit_metrics_csv(result.records, result.metrics_path);
    return result;
}

}  // namespace

real evaluate_accuracy(const std::function<int(const Tensor&)>& predict,
                       const std::vector<Sample>& samples) {
    if (samples.empty()) return 0;
    long correct = 0;
    for (const Sample& s : samples) correct += predict(s.image) == s.label;
    return static_cast<real>(correct) / static_cast<real>(samples.size());
}

TrainResult train(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<Sample> samples = load_dataset(cfg.dataset());
    if (samples.empty()) throw DataError("dataset '" + cfg.dataset() + "' is empty");
    const int classes = num_classes(samples);
    const DatasetSplit split = split_dataset(samples, cfg.seed());
    if (split.train.empty()) throw DataError("dataset too small: empty training split");
    const int h = split.train.front().image.shape[0];
    const int w = split.train.front().image.shape[1];

    if (cfg.model() == "fisherfaces") return train_fisherfaces(cfg, split, h, w, classes);

    NeuralDriver driver = make_driver(cfg, h, w, classes);
    AdamConfig acfg;
    acfg.lr = cfg.learning_rate();
    acfg.beta1 = cfg.get_real("adam.beta1", acfg.beta1);
    acfg.beta2 = cfg.get_real("adam.beta2", acfg.beta2);
    acfg.eps = cfg.get_real("adam.eps", acfg.eps);
    Adam opt(driver.params, acfg);

    const bool timed = cfg.record_wall_time();
    const int batch = cfg.batch_size();
    const int patience = cfg.get_int("patience", 0);
    Rng shuffle_rng(cfg.seed() ^ 0x9e3779b97f4a7c15ULL);

    TrainResult result;
    real best_val_loss = std::numeric_limits<real>::infinity();
    std::vector<Tensor> best_values;
    int epochs_since_best = 0;
    int last_epoch = 0;
    const auto t_train0 = Clock::now();

    std::vector<size_t> order(split.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs() && !result.aborted_nan; ++epoch) {
        last_epoch = epoch;
        const auto t_epoch = Clock::now();
        shuffle_rng.shuffle(order);

        real loss_sum = 0;
        long correct = 0;
        for (size_t begin = 0; begin < order.size() && !result.aborted_nan; begin += batch) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(batch));
            opt.zero_grad();
            real batch_loss = 0;
            for (size_t i = begin; i < end; ++i) {
                const Sample& s = split.train[order[i]];
                const auto [loss, pred] = driver.run(s, /*training=*/true, /*backward=*/true);
                batch_loss += loss;
                correct += pred == s.label;
            }
            loss_sum += batch_loss;
            if (!std::isfinite(batch_loss)) {
                result.aborted_nan = true;
                break;
            }
            const real inv = real(1) / static_cast<real>(end - begin);
            for (Parameter* p : driver.params)
                for (long k = 0; k < p->grad.size(); ++k) p->grad[k] *= inv;
            opt.step();
        }

        MetricsRecord tr;
        tr.epoch = epoch;
        tr.split = "train";
        tr.loss = loss_sum / static_cast<real>(split.train.size());
        tr.accuracy = static_cast<real>(correct) / static_cast<real>(split.train.size());
        tr.wall_time_s = timed ? seconds_since(t_epoch) : 0;
        result.records.push_back(tr);
        if (result.aborted_nan) break;  // the non-finite row above is the diagnostic

        const auto t_val = Clock::now();
        const EvalStats val = evaluate_split(driver, split.validation);
        MetricsRecord vr;
        vr.epoch = epoch;
        vr.split = "validation";
        vr.loss = val.mean_loss;
        vr.accuracy = val.accuracy;
        vr.wall_time_s = timed ? seconds_since(t_val) : 0;
        result.records.push_back(vr);

        if (val.mean_loss < best_val_loss) {
            best_val_loss = val.mean_loss;
            best_values.clear();
            for (const Parameter* p : driver.params) best_values.push_back(p->value);
            epochs_since_best = 0;
        } else if (patience > 0 && ++epochs_since_best >= patience) {
            break;
        }
    }
    result.train_seconds = seconds_since(t_train0);

    // Evaluate (and persist) the parameters that did best on validation.
    if (!best_values.empty())
        for (size_t i = 0; i < driver.params.size(); ++i) driver.params[i]->value = best_values[i];

    const auto t_test = Clock::now();
    const EvalStats test = evaluate_split(driver, split.test);
    MetricsRecord te;
    te.epoch = last_epoch;
    te.split = "test";
    te.loss = test.mean_loss;
    te.accuracy = test.accuracy;
    te.wall_time_s = timed ? seconds_since(t_test) : 0;
    result.records.push_back(te);
    result.test_accuracy = test.accuracy;

    const std::filesystem::path out(cfg.output_dir());
    std::filesystem::create_directories(out);
    result.checkpoint_path = (out / "model.ckpt").string();
    save_neural_checkpoint(result.checkpoint_path, checkpoint_config_text(cfg, h, w, classes),
                           driver);
    result.metrics_path = (out / "metrics.csv").string();
    emit_metrics_csv(result.records, result.metrics_path);
    return result;
}

real evaluate_checkpoint(const std::string& checkpoint_path, const std::vector<Sample>& samples) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const ExperimentConfig cfg = ExperimentConfig::from_text(ckpt.config_text);
    if (cfg.model() == "fisherfaces") {
        const FisherfaceModel model = load_fisherface(checkpoint_path);
        return evaluate_accuracy(
            [&model](const Tensor& img) { return fisher_predict(model, img); }, samples);
    }
    const int h = cfg.get_int("input_height", 0);
    const int w = cfg.get_int("input_width", 0);
    const int classes = cfg.get_int("classes", 0);
    if (h < 1 || w < 1 || classes < 1)
        throw DataError("checkpoint config lacks input_height/input_width/classes");
    NeuralDriver driver = make_driver(cfg, h, w, classes);
    for (Parameter* p : driver.params) {
        const Tensor& stored = ckpt.require(p->name);
        if (stored.shape != p->value.shape)
            throw ShapeError("checkpoint blob '" + p->name + "' has shape " +
                             shape_str(stored.shape) + ", expected " + shape_str(p->value.shape));
        p->value = stored;
    }
    if (driver.extra_load) driver.extra_load(ckpt);
    return evaluate_accuracy(driver.predict, samples);
}

GradcheckOutcome gradcheck_model(const ExperimentConfig& cfg, int max_samples, real tolerance,
                                 bool corrupt_backward) {
    GradcheckOutcome out;
    const std::string model = cfg.model();
    if (model == "fisherfaces") {
        out.applicable = false;  // closed-form fit, no gradients to check
        return out;
    }
    int h = cfg.get_int("input_height", 0);
    int w = cfg.get_int("input_width", 0);
    int classes = cfg.get_int("classes", 0);
    if (h < 1) h = model == "lenet" ? 90 : (model == "tiny_resnet" ? 16 : 28);
    if (w < 1) w = h;
    if (classes < 1) classes = model == "lenet" ? 62 : (model == "tiny_resnet" ? 4 : 10);

    NeuralDriver driver = make_driver(cfg, h, w, classes);
    Rng rng(cfg.seed() + 1);
    Sample sample;
    sample.image = Tensor({h, w, 1});
    fill_uniform(sample.image, rng, 0, 1);
    sample.label = rng.index(classes);

    auto loss_forward = [&driver, &sample]() {
        return driver.run(sample, /*training=*/true, /*backward=*/false).first;
    };
    auto loss_backward = [&driver, &sample, corrupt_backward]() {
        const real loss = driver.run(sample, /*training=*/true, /*backward=*/true).first;
        // Deliberately break every analytic gradient so the check must flag
        // whichever coordinates it samples.
        if (corrupt_backward)
            for (Parameter* p : driver.params)
                for (long k = 0; k < p->grad.size(); ++k) p->grad[k] += 1;
        return loss;
    };
    // Batch norm divides by per-pass statistics, which makes the loss sharply
    // curved around the current parameters; central differences need a
    // smaller step there to keep truncation error below the tolerance.
    const real step = model == "tiny_resnet" ? real(1e-6) : real(1e-5);
    out.report = finite_diff_check(driver.params, loss_forward, loss_backward, tolerance,
                                   max_samples, cfg.seed(), step);
    return out;
}

}  // namespace capsbench
