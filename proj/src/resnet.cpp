#include "capsbench/resnet.hpp"

#include <cmath>

namespace capsbench {

BatchNorm::BatchNorm(const std::string& name, int channels)
    : gamma(name + "_gamma", Tensor({channels}, 1)),
      beta(name + "_beta", Tensor({channels}, 0)),
      running_mean({channels}, 0),
      running_var({channels}, 1) {}

NodeId BatchNorm::forward(Graph& g, NodeId x, bool training) {
    if (!training) return forward_const(g, x);
    Tensor batch_mean, batch_var;
    NodeId y = batch_norm_train(g, x, g.param(&gamma), g.param(&beta), eps, &batch_mean,
                                &batch_var);
    for (long c = 0; c < running_mean.size(); ++c) {
        running_mean[c] = momentum * running_mean[c] + (1 - momentum) * batch_mean[c];
        running_var[c] = momentum * running_var[c] + (1 - momentum) * batch_var[c];
    }
    return y;
}

NodeId BatchNorm::forward_const(Graph& g, NodeId x) const {
    const int C = static_cast<int>(running_mean.size());
    Tensor scl({C}), shift({C});
    for (int c = 0; c < C; ++c) {
        scl[c] = gamma.value[c] / std::sqrt(running_var[c] + eps);
        shift[c] = beta.value[c] - running_mean[c] * scl[c];
    }
    return channel_affine(g, x, scl, shift);
}

namespace {
Parameter make_conv(const std::string& name, int kernel, int cin, int cout, Rng& rng) {
    Parameter p(name, Tensor({kernel, kernel, cin, cout}));
    const real limit = real(1) / std::sqrt(static_cast<real>(kernel) * kernel * cin);
    fill_uniform(p.value, rng, -limit, limit);
    return p;
}
}  // namespace

ResidualBlock::ResidualBlock(const std::string& name, int channels_, int kernel_, Rng& rng)
    : conv1(make_conv(name + "_conv1", kernel_, channels_, channels_, rng)),
      conv2(make_conv(name + "_conv2", kernel_, channels_, channels_, rng)),
      bn1(name + "_bn1", channels_),
      bn2(name + "_bn2", channels_),
      channels(channels_),
      kernel(kernel_) {
    if (kernel_ % 2 == 0) throw ConfigError("residual block: kernel must be odd for same padding");
}

NodeId ResidualBlock::forward(Graph& g, NodeId x, bool training) {
    const Tensor& vx = g.value(x);
    if (vx.ndim() != 3 || vx.dim(2) != channels)
        throw ShapeError("residual block: expected HxWx" + std::to_string(channels) +
                         " input, got " + shape_str(vx.shape));
    const int pad = kernel / 2;
    NodeId h = conv2d(g, pad2d(g, x, pad), g.param(&conv1), 1);
    h = activation(g, bn1.forward(g, h, training), Activation::Relu);
    h = conv2d(g, pad2d(g, h, pad), g.param(&conv2), 1);
    h = bn2.forward(g, h, training);
    return activation(g, add(g, h, x), Activation::Relu);
}

NodeId ResidualBlock::forward_const(Graph& g, NodeId x) const {
    const int pad = kernel / 2;
    NodeId h = conv2d(g, pad2d(g, x, pad), g.const_param(&conv1), 1);
    h = activation(g, bn1.forward_const(g, h), Activation::Relu);
    h = conv2d(g, pad2d(g, h, pad), g.const_param(&conv2), 1);
    h = bn2.forward_const(g, h);
    return activation(g, add(g, h, x), Activation::Relu);
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
    out.push_back(&conv1);
    out.push_back(&bn1.gamma);
    out.push_back(&bn1.beta);
    out.push_back(&conv2);
    out.push_back(&bn2.gamma);
    out.push_back(&bn2.beta);
}

TinyResNet::TinyResNet(TinyResNetConfig cfg, Rng& rng) : cfg_(cfg) {
    if (cfg_.classes < 1 || cfg_.channels < 1 || cfg_.num_blocks < 0)
        throw ConfigError("tiny_resnet: invalid configuration");
    stem_kernels_ = make_conv("stem_kernels", cfg_.kernel, 1, cfg_.channels, rng);
    stem_bias_ = Parameter("stem_bias", Tensor({cfg_.channels}));
    stem_bn_ = BatchNorm("stem_bn", cfg_.channels);
    for (int i = 0; i < cfg_.num_blocks; ++i)
        blocks_.emplace_back("block" + std::to_string(i + 1), cfg_.channels, cfg_.kernel, rng);
    fc_w_ = Parameter("fc_w", Tensor({cfg_.channels, cfg_.classes}));
    const real limit = real(1) / std::sqrt(static_cast<real>(cfg_.channels));
    fill_uniform(fc_w_.value, rng, -limit, limit);
    fc_b_ = Parameter("fc_b", Tensor({cfg_.classes}));
}

NodeId TinyResNet::build_logits(Graph& g, const Tensor& image, bool training) {
    Tensor img = image;
    if (img.ndim() == 2) img = Tensor({img.dim(0), img.dim(1), 1}, img.data);
    if (img.ndim() != 3 || img.dim(2) != 1)
        throw ShapeError("tiny_resnet: image must be HxWx1");
    NodeId x = g.input(std::move(img));
    const int pad = cfg_.kernel / 2;
    x = conv2d(g, pad2d(g, x, pad), g.param(&stem_kernels_), 1);
    x = add_channel_bias(g, x, g.param(&stem_bias_));
    x = activation(g, stem_bn_.forward(g, x, training), Activation::Relu);
    for (ResidualBlock& block : blocks_) x = block.forward(g, x, training);
    x = global_avg_pool(g, x);
    return fully_connected(g, x, g.param(&fc_w_), g.param(&fc_b_));
}

NodeId TinyResNet::build_loss(Graph& g, const Tensor& image, int label) {
    return softmax_cross_entropy(g, build_logits(g, image, true), label);
}

Tensor TinyResNet::logits(const Tensor& image) const {
    Graph g;
    Tensor img = image;
    if (img.ndim() == 2) img = Tensor({img.dim(0), img.dim(1), 1}, img.data);
    NodeId x = g.input(std::move(img));
    const int pad = cfg_.kernel / 2;
    x = conv2d(g, pad2d(g, x, pad), g.const_param(&stem_kernels_), 1);
    x = add_channel_bias(g, x, g.const_param(&stem_bias_));
    x = activation(g, stem_bn_.forward_const(g, x), Activation::Relu);
    for (const ResidualBlock& block : blocks_) x = block.forward_const(g, x);
    x = global_avg_pool(g, x);
    return g.value(fully_connected(g, x, g.const_param(&fc_w_), g.const_param(&fc_b_)));
}

int TinyResNet::predict(const Tensor& image) const {
    const Tensor l = logits(image);
    int best = 0;
    for (long i = 1; i < l.size(); ++i)
        if (l[i] > l[best]) best = static_cast<int>(i);
    return best;
}

std::vector<Parameter*> TinyResNet::parameters() {
    std::vector<Parameter*> out{&stem_kernels_, &stem_bias_, &stem_bn_.gamma, &stem_bn_.beta};
    for (ResidualBlock& block : blocks_) block.collect(out);
    out.push_back(&fc_w_);
    out.push_back(&fc_b_);
    return out;
}

}  // namespace capsbench
