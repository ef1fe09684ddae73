#include "capsbench/capsnet.hpp"

#include <algorithm>
#include <cmath>

namespace capsbench {

int CapsNetConfig::grid_h() const {
    const int stem = input_height - stem_kernel + 1;
    return conv_out_extent(stem, primary_kernel, primary_stride);
}
int CapsNetConfig::grid_w() const {
    const int stem = input_width - stem_kernel + 1;
    return conv_out_extent(stem, primary_kernel, primary_stride);
}

void CapsNetConfig::validate() const {
    if (D1 < 1 || D2 < 1 || F < 1 || C < 1)
        throw ConfigError("capsnet: D1, D2, F, C must all be >= 1");
    if (!(0 < m_minus && m_minus < m_plus && m_plus < 1))
        throw ConfigError("capsnet: need 0 < m_minus < m_plus < 1");
    if (lambda <= 0) throw ConfigError("capsnet: lambda must be positive");
    if (routing_iterations < 1) throw ConfigError("capsnet: routing_iterations must be >= 1");
    if (stem_maps < 1 || stem_kernel < 1 || primary_kernel < 1 || primary_stride < 1)
        throw ConfigError("capsnet: stem/primary layer sizes must be positive");
    if (input_height < stem_kernel || input_width < stem_kernel || grid_h() < 1 || grid_w() < 1)
        throw ConfigError("capsnet: input too small, primary capsule grid would be empty (" +
                          std::to_string(input_height) + "x" + std::to_string(input_width) + ")");
    if (decoder_h1 < 1 || decoder_h2 < 1) throw ConfigError("capsnet: decoder widths must be >= 1");
}

Tensor squash(const Tensor& s) {
    real n2 = 0;
    for (real v : s.data) n2 += v * v;
    const real f = std::sqrt(n2) / (1 + n2);
    Tensor out(s.shape);
    for (long i = 0; i < s.size(); ++i) out[i] = s[i] * f;
    return out;
}

RoutingResult routing_forward(Graph& g, NodeId u_hat, int iterations, bool detach_couplings) {
    const Tensor& vu = g.value(u_hat);
    if (vu.ndim() != 3) throw ShapeError("routing_forward: u_hat must be NxCxD2");
    if (iterations < 1) throw ShapeError("routing_forward: iterations must be >= 1");
    const int N = vu.dim(0), C = vu.dim(1);

    RoutingResult res;
    NodeId b = g.input(Tensor({N, C}, 0));
    for (int it = 0; it < iterations; ++it) {
        NodeId c = softmax(g, detach_couplings ? detach(g, b) : b, 1);
        res.c_per_iter.push_back(c);
        res.c_final = c;
        res.s = caps_weighted_sum(g, c, u_hat);
        res.v = squash_rows(g, res.s);
        if (it + 1 < iterations) b = add(g, b, caps_agreement(g, u_hat, res.v));
    }
    return res;
}

NodeId margin_loss(Graph& g, NodeId v, const std::vector<real>& target_one_hot, real m_plus,
                   real m_minus, real lambda) {
    const Tensor& vv = g.value(v);
    if (vv.ndim() != 2) throw ShapeError("margin_loss: v must be CxD2");
    const int C = vv.dim(0);
    if (static_cast<int>(target_one_hot.size()) != C)
        throw ShapeError("margin_loss: target length must equal class count");
    Tensor t({C}), t_inv({C});
    for (int k = 0; k < C; ++k) {
        t[k] = target_one_hot[k];
        t_inv[k] = 1 - target_one_hot[k];
    }
    NodeId n = row_norms(g, v);
    // present-class hinge: max(0, m+ - ||v||)^2
    NodeId pos = activation(g, add_scalar(g, scale(g, n, -1), m_plus), Activation::Relu);
    NodeId pos_sq = mul(g, pos, pos);
    // absent-class hinge: max(0, ||v|| - m-)^2
    NodeId neg = activation(g, add_scalar(g, n, -m_minus), Activation::Relu);
    NodeId neg_sq = mul(g, neg, neg);
    return add(g, sum(g, mul_const(g, pos_sq, t)),
               scale(g, sum(g, mul_const(g, neg_sq, t_inv)), lambda));
}

namespace {
int one_hot_argmax(const std::vector<real>& t) {
    int best = 0;
    for (size_t i = 1; i < t.size(); ++i)
        if (t[i] > t[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}
}  // namespace

NodeId mask_by_target(Graph& g, NodeId v, const std::vector<real>& target_one_hot) {
    // Capture the size before mask_rows: adding a node may reallocate the
    // graph's node storage and invalidate references into it.
    const int n = static_cast<int>(g.value(v).size());
    NodeId masked = mask_rows(g, v, one_hot_argmax(target_one_hot));
    return reshape(g, masked, {n});
}

NodeId mask_by_longest(Graph& g, NodeId v) {
    const int n = static_cast<int>(g.value(v).size());
    const int row = capsnet_predict(g.value(v));
    NodeId masked = mask_rows(g, v, row);
    return reshape(g, masked, {n});
}

NodeId sum_squared_error(Graph& g, NodeId a, const Tensor& reference) {
    const Tensor& va = g.value(a);
    if (va.size() != reference.size())
        throw ShapeError("sum_squared_error: size mismatch " + shape_str(va.shape) + " vs " +
                         shape_str(reference.shape));
    Tensor diff_val(va.shape);
    for (long i = 0; i < diff_val.size(); ++i) diff_val[i] = va[i] - reference[i];
    NodeId diff = g.make(std::move(diff_val), {a}, [a](Graph& gg, NodeId self) {
        if (!gg.needs_grad(a)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad(a);
        for (long i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
    return sum(g, mul(g, diff, diff));
}

int capsnet_predict(const Tensor& v) {
    if (v.ndim() != 2) throw ShapeError("capsnet_predict: v must be CxD2");
    const int C = v.dim(0), D = v.dim(1);
    int best = 0;
    real best_n2 = -1;
    for (int k = 0; k < C; ++k) {
        real n2 = 0;
        for (int d = 0; d < D; ++d) n2 += v.at(k, d) * v.at(k, d);
        if (n2 > best_n2) {
            best_n2 = n2;
            best = k;
        }
    }
    return best;
}

namespace {
// He-style uniform init: keeps activation scale roughly constant through the
// ReLU stem and leaves the primary-capsule pre-squash norms near 1, where the
// squash nonlinearity neither crushes nor saturates.
void init_fan_in_uniform(Tensor& t, long fan_in, Rng& rng) {
    const real limit = std::sqrt(real(6) / static_cast<real>(fan_in));
    fill_uniform(t, rng, -limit, limit);
}
}  // namespace

CapsNet::CapsNet(CapsNetConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int K = cfg_.stem_kernel, Kp = cfg_.primary_kernel;
    const int M = cfg_.stem_maps, FD = cfg_.F * cfg_.D1;
    const int N = cfg_.num_primary();
    const int recon_out = cfg_.input_height * cfg_.input_width;
    const int dec_in = cfg_.C * cfg_.D2;

    stem_kernels_ = Parameter("stem_kernels", Tensor({K, K, 1, M}));
    init_fan_in_uniform(stem_kernels_.value, static_cast<long>(K) * K, rng);
    stem_bias_ = Parameter("stem_bias", Tensor({M}));

    primary_kernels_ = Parameter("primary_kernels", Tensor({Kp, Kp, M, FD}));
    init_fan_in_uniform(primary_kernels_.value, static_cast<long>(Kp) * Kp * M, rng);
    primary_bias_ = Parameter("primary_bias", Tensor({FD}));

    routing_weights_ = Parameter("routing_weights", Tensor({N, cfg_.C, cfg_.D1, cfg_.D2}));
    fill_normal(routing_weights_.value, rng, 0, real(1) / std::sqrt(static_cast<real>(cfg_.D1)));

    dec_w1_ = Parameter("decoder_w1", Tensor({dec_in, cfg_.decoder_h1}));
    init_fan_in_uniform(dec_w1_.value, dec_in, rng);
    dec_b1_ = Parameter("decoder_b1", Tensor({cfg_.decoder_h1}));
    dec_w2_ = Parameter("decoder_w2", Tensor({cfg_.decoder_h1, cfg_.decoder_h2}));
    init_fan_in_uniform(dec_w2_.value, cfg_.decoder_h1, rng);
    dec_b2_ = Parameter("decoder_b2", Tensor({cfg_.decoder_h2}));
    dec_w3_ = Parameter("decoder_w3", Tensor({cfg_.decoder_h2, recon_out}));
    init_fan_in_uniform(dec_w3_.value, cfg_.decoder_h2, rng);
    dec_b3_ = Parameter("decoder_b3", Tensor({recon_out}));
}

namespace {
// Conv stem -> primary capsule conv -> G1*G2*F squashed capsule vectors ->
// routed prediction vectors u_hat.
NodeId capsule_stack(Graph& g, const CapsNetConfig& cfg, const Tensor& image, NodeId stem_k,
                     NodeId stem_b, NodeId prim_k, NodeId prim_b, NodeId route_w) {
    Tensor img = image;
    if (img.ndim() == 2) img = Tensor({img.dim(0), img.dim(1), 1}, img.data);
    if (img.ndim() != 3 || img.dim(2) != 1 || img.dim(0) != cfg.input_height ||
        img.dim(1) != cfg.input_width)
        throw ShapeError("capsnet: image must be " + std::to_string(cfg.input_height) + "x" +
                         std::to_string(cfg.input_width) + "x1, got " + shape_str(image.shape));
    NodeId x = g.input(std::move(img));
    NodeId stem = activation(g, add_channel_bias(g, conv2d(g, x, stem_k, 1), stem_b),
                             Activation::Relu);
    NodeId prim = add_channel_bias(g, conv2d(g, stem, prim_k, cfg.primary_stride), prim_b);
    NodeId u = squash_rows(g, reshape(g, prim, {cfg.num_primary(), cfg.D1}));
    return caps_transform(g, u, route_w);
}
}  // namespace

CapsNet::ForwardNodes CapsNet::build_loss(Graph& g, const Tensor& image, int label) {
    if (label < 0 || label >= cfg_.C) throw DataError("capsnet: label out of range");
    ForwardNodes fwd;
    NodeId u_hat = capsule_stack(g, cfg_, image, g.param(&stem_kernels_), g.param(&stem_bias_),
                                 g.param(&primary_kernels_), g.param(&primary_bias_),
                                 g.param(&routing_weights_));
    fwd.routing = routing_forward(g, u_hat, cfg_.routing_iterations, cfg_.detach_couplings);
    fwd.v = fwd.routing.v;

    std::vector<real> target(static_cast<size_t>(cfg_.C), 0);
    target[static_cast<size_t>(label)] = 1;
    fwd.margin = margin_loss(g, fwd.v, target, cfg_.m_plus, cfg_.m_minus, cfg_.lambda);

    const real w = cfg_.effective_recon_weight();
    if (w != 0) {
        NodeId masked = mask_by_target(g, fwd.v, target);
        NodeId h1 = activation(g, fully_connected(g, masked, g.param(&dec_w1_), g.param(&dec_b1_)),
                               Activation::Relu);
        NodeId h2 = activation(g, fully_connected(g, h1, g.param(&dec_w2_), g.param(&dec_b2_)),
                               Activation::Relu);
        NodeId recon = activation(
            g, fully_connected(g, h2, g.param(&dec_w3_), g.param(&dec_b3_)), Activation::Sigmoid);
        fwd.recon = recon;
        fwd.loss = add(g, fwd.margin, scale(g, sum_squared_error(g, recon, image), w));
    } else {
        fwd.loss = fwd.margin;
    }
    return fwd;
}

Tensor CapsNet::routing_outputs(const Tensor& image) const {
    Graph g;
    NodeId u_hat =
        capsule_stack(g, cfg_, image, g.const_param(&stem_kernels_), g.const_param(&stem_bias_),
                      g.const_param(&primary_kernels_), g.const_param(&primary_bias_),
                      g.const_param(&routing_weights_));
    RoutingResult r = routing_forward(g, u_hat, cfg_.routing_iterations);
    return g.value(r.v);
}

int CapsNet::predict(const Tensor& image) const { return capsnet_predict(routing_outputs(image)); }

std::vector<Parameter*> CapsNet::parameters() {
    return {&stem_kernels_, &stem_bias_, &primary_kernels_, &primary_bias_, &routing_weights_,
            &dec_w1_,       &dec_b1_,    &dec_w2_,          &dec_b2_,       &dec_w3_,
            &dec_b3_};
}

std::vector<const Parameter*> CapsNet::parameters() const {
    return {&stem_kernels_, &stem_bias_, &primary_kernels_, &primary_bias_, &routing_weights_,
            &dec_w1_,       &dec_b1_,    &dec_w2_,          &dec_b2_,       &dec_w3_,
            &dec_b3_};
}

}  // namespace capsbench
