#pragma once

#include <vector>

#include "capsbench/graph.hpp"
#include "capsbench/ops.hpp"
#include "capsbench/rng.hpp"

namespace capsbench {

struct BatchNorm {
    Parameter gamma, beta;
    Tensor running_mean, running_var;
    real eps = 1e-5;
    real momentum = 0.9;

    BatchNorm() = default;
    explicit BatchNorm(const std::string& name, int channels);

    // Training mode uses this pass's statistics and folds them into the
    // running averages; inference mode applies the stored statistics.
    NodeId forward(Graph& g, NodeId x, bool training);
    NodeId forward_const(Graph& g, NodeId x) const;
};

// conv-BN-relu-conv-BN weight path summed with the identity shortcut, then
// ReLU. Same-shape (stride-1, zero-padded) configuration only.
struct ResidualBlock {
    Parameter conv1, conv2;
    BatchNorm bn1, bn2;
    int channels = 0;
    int kernel = 3;

    ResidualBlock() = default;
    ResidualBlock(const std::string& name, int channels, int kernel, Rng& rng);

    NodeId forward(Graph& g, NodeId x, bool training);
    NodeId forward_const(Graph& g, NodeId x) const;

    void collect(std::vector<Parameter*>& out);
};

// Desk-scale residual classifier: stem conv-BN-relu, a stack of identical
// residual blocks, global average pooling, one fully connected layer.
struct TinyResNetConfig {
    int input_height = 16;
    int input_width = 16;
    int classes = 4;
    int channels = 16;
    int num_blocks = 4;
    int kernel = 3;
};

class TinyResNet {
  public:
    TinyResNet(TinyResNetConfig cfg, Rng& rng);

    NodeId build_logits(Graph& g, const Tensor& image, bool training);
    NodeId build_loss(Graph& g, const Tensor& image, int label);
    Tensor logits(const Tensor& image) const;
    int predict(const Tensor& image) const;

    std::vector<Parameter*> parameters();
    const TinyResNetConfig& config() const { return cfg_; }
    std::vector<ResidualBlock>& blocks() { return blocks_; }
    BatchNorm& stem_bn() { return stem_bn_; }

  private:
    TinyResNetConfig cfg_;
    Parameter stem_kernels_, stem_bias_;
    BatchNorm stem_bn_;
    std::vector<ResidualBlock> blocks_;
    Parameter fc_w_, fc_b_;
};

}  // namespace capsbench
