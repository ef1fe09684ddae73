#pragma once

#include <vector>

#include "capsbench/graph.hpp"
#include "capsbench/ops.hpp"
#include "capsbench/rng.hpp"

namespace capsbench {

// Modified LeNet-5: repeated conv+avg-pool stages, flatten, three fully
// connected layers, ReLU throughout, valid padding. Defaults give the
// 90x90x1 -> 62-class stack.
struct LeNetConfig {
    int input_height = 90;
    int input_width = 90;
    int classes = 62;
    int conv_kernel = 7;
    std::vector<int> conv_channels = {6, 16, 32};
    int pool_window = 2;
    int pool_stride = 2;
    int fc1 = 300;
    int fc2 = 200;

    void validate() const;
};

class LeNet {
  public:
    LeNet(LeNetConfig cfg, Rng& rng);

    NodeId build_logits(Graph& g, const Tensor& image);
    NodeId build_loss(Graph& g, const Tensor& image, int label);
    Tensor logits(const Tensor& image) const;
    int predict(const Tensor& image) const;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    const LeNetConfig& config() const { return cfg_; }

    // Output shape after every layer (conv, pool, ..., flatten, fc1, fc2,
    // logits), for asserting the Table-2 chain.
    std::vector<std::vector<int>> layer_output_shapes() const;
    long parameter_count() const;

  private:
    NodeId logits_impl(Graph& g, const Tensor& image, bool trainable) const;

    LeNetConfig cfg_;
    std::vector<Parameter> conv_kernels_, conv_biases_;
    Parameter fc1_w_, fc1_b_, fc2_w_, fc2_b_, out_w_, out_b_;
    int flat_dim_ = 0;
};

}  // namespace capsbench
