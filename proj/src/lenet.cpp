#include "capsbench/lenet.hpp"

#include <cmath>

namespace capsbench {

void LeNetConfig::validate() const {
    if (classes < 1) throw ConfigError("lenet: classes must be >= 1");
    if (conv_kernel < 1 || pool_window < 1 || pool_stride < 1)
        throw ConfigError("lenet: layer sizes must be positive");
    if (conv_channels.empty()) throw ConfigError("lenet: need at least one conv stage");
    if (fc1 < 1 || fc2 < 1) throw ConfigError("lenet: fully connected widths must be >= 1");
    int h = input_height, w = input_width;
    for (size_t i = 0; i < conv_channels.size(); ++i) {
        if (conv_kernel > h || conv_kernel > w)
            throw ConfigError("lenet: input too small for conv stage " + std::to_string(i + 1));
        h = conv_out_extent(h, conv_kernel, 1);
        w = conv_out_extent(w, conv_kernel, 1);
        if (pool_window > h || pool_window > w)
            throw ConfigError("lenet: input too small for pool stage " + std::to_string(i + 1));
        h = conv_out_extent(h, pool_window, pool_stride);
        w = conv_out_extent(w, pool_window, pool_stride);
    }
}

LeNet::LeNet(LeNetConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    int cin = 1;
    for (size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
        const int cout = cfg_.conv_channels[i];
        const int K = cfg_.conv_kernel;
        Parameter kern("conv" + std::to_string(i + 1) + "_kernels", Tensor({K, K, cin, cout}));
        const real limit = real(1) / std::sqrt(static_cast<real>(K) * K * cin);
        fill_uniform(kern.value, rng, -limit, limit);
        conv_kernels_.push_back(std::move(kern));
        conv_biases_.emplace_back("conv" + std::to_string(i + 1) + "_bias", Tensor({cout}));
        cin = cout;
    }
    const auto shapes = layer_output_shapes();
    flat_dim_ = shapes[shapes.size() - 4][0];

    auto make_fc = [&](const std::string& name, int in, int out, Parameter& w, Parameter& b) {
        w = Parameter(name + "_w", Tensor({in, out}));
        const real limit = real(1) / std::sqrt(static_cast<real>(in));
        fill_uniform(w.value, rng, -limit, limit);
        b = Parameter(name + "_b", Tensor({out}));
    };
    make_fc("fc1", flat_dim_, cfg_.fc1, fc1_w_, fc1_b_);
    make_fc("fc2", cfg_.fc1, cfg_.fc2, fc2_w_, fc2_b_);
    make_fc("out", cfg_.fc2, cfg_.classes, out_w_, out_b_);
}

std::vector<std::vector<int>> LeNet::layer_output_shapes() const {
    std::vector<std::vector<int>> shapes;
    int h = cfg_.input_height, w = cfg_.input_width;
    for (int c : cfg_.conv_channels) {
        h = conv_out_extent(h, cfg_.conv_kernel, 1);
        w = conv_out_extent(w, cfg_.conv_kernel, 1);
        shapes.push_back({h, w, c});
        h = conv_out_extent(h, cfg_.pool_window, cfg_.pool_stride);
        w = conv_out_extent(w, cfg_.pool_window, cfg_.pool_stride);
        shapes.push_back({h, w, c});
    }
    shapes.push_back({h * w * cfg_.conv_channels.back()});
    shapes.push_back({cfg_.fc1});
    shapes.push_back({cfg_.fc2});
    shapes.push_back({cfg_.classes});
    return shapes;
}

long LeNet::parameter_count() const {
    long total = 0;
    for (const Parameter* p : parameters()) total += p->value.size();
    return total;
}

NodeId LeNet::logits_impl(Graph& g, const Tensor& image, bool trainable) const {
    Tensor img = image;
    if (img.ndim() == 2) img = Tensor({img.dim(0), img.dim(1), 1}, img.data);
    if (img.ndim() != 3 || img.dim(2) != 1 || img.dim(0) != cfg_.input_height ||
        img.dim(1) != cfg_.input_width)
        throw ShapeError("lenet: image must be " + std::to_string(cfg_.input_height) + "x" +
                         std::to_string(cfg_.input_width) + "x1, got " + shape_str(image.shape));
    // Trainable binding is only requested through the non-const entry points.
    auto bind = [&](const Parameter& p) {
        return trainable ? g.param(const_cast<Parameter*>(&p)) : g.const_param(&p);
    };

    NodeId x = g.input(std::move(img));
    for (size_t i = 0; i < conv_kernels_.size(); ++i) {
        x = conv2d(g, x, bind(conv_kernels_[i]), 1);
        x = add_channel_bias(g, x, bind(conv_biases_[i]));
        x = activation(g, x, Activation::Relu);
        x = pool_avg(g, x, cfg_.pool_window, cfg_.pool_stride);
    }
    x = reshape(g, x, {flat_dim_});
    x = activation(g, fully_connected(g, x, bind(fc1_w_), bind(fc1_b_)), Activation::Relu);
    x = activation(g, fully_connected(g, x, bind(fc2_w_), bind(fc2_b_)), Activation::Relu);
    return fully_connected(g, x, bind(out_w_), bind(out_b_));
}

NodeId LeNet::build_logits(Graph& g, const Tensor& image) { return logits_impl(g, image, true); }

NodeId LeNet::build_loss(Graph& g, const Tensor& image, int label) {
    return softmax_cross_entropy(g, build_logits(g, image), label);
}

Tensor LeNet::logits(const Tensor& image) const {
    Graph g;
    return g.value(logits_impl(g, image, false));
}

int LeNet::predict(const Tensor& image) const {
    const Tensor l = logits(image);
    int best = 0;
    for (long i = 1; i < l.size(); ++i)
        if (l[i] > l[best]) best = static_cast<int>(i);
    return best;
}

std::vector<Parameter*> LeNet::parameters() {
    std::vector<Parameter*> out;
    for (size_t i = 0; i < conv_kernels_.size(); ++i) {
        out.push_back(&conv_kernels_[i]);
        out.push_back(&conv_biases_[i]);
    }
    for (Parameter* p : {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_, &out_w_, &out_b_}) out.push_back(p);
    return out;
}

std::vector<const Parameter*> LeNet::parameters() const {
    std::vector<const Parameter*> out;
    for (Parameter* p : const_cast<LeNet*>(this)->parameters()) out.push_back(p);
    return out;
}

}  // namespace capsbench
