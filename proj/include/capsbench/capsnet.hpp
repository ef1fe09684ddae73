#pragma once

#include <vector>

#include "capsbench/graph.hpp"
#include "capsbench/ops.hpp"
#include "capsbench/rng.hpp"

namespace capsbench {

struct CapsNetConfig {
    int input_height = 28;  // x1
    int input_width = 28;   // x2
    int stem_maps = 256;
    int stem_kernel = 9;
    int primary_kernel = 9;
    int primary_stride = 2;
    int F = 8;    // primary capsule channels
    int D1 = 8;   // primary capsule vector dimension
    int D2 = 16;  // routing capsule vector dimension
    int C = 10;   // classes
    int routing_iterations = 3;
    real m_plus = 0.9;
    real m_minus = 0.1;
    real lambda = 0.5;
    // Negative means "use the default 0.0005 * (x1*x2) / 784".
    real recon_weight = -1;
    int decoder_h1 = 512;
    int decoder_h2 = 1024;
    // When set, coupling coefficients are treated as constants in the
    // backward pass instead of being differentiated through.
    bool detach_couplings = false;

    int grid_h() const;  // G1
    int grid_w() const;  // G2
    int num_primary() const { return grid_h() * grid_w() * F; }
    real effective_recon_weight() const {
        return recon_weight >= 0
                   ? recon_weight
                   : real(0.0005) * static_cast<real>(input_height) * input_width / 784;
    }
    // Throws on invalid hyperparameters, including "input too small".
    void validate() const;
};

// Squash nonlinearity on a single vector: v = s * ||s|| / (1 + ||s||^2)
// (value-level helper; the graph op is squash_rows).
Tensor squash(const Tensor& s);

struct RoutingResult {
    NodeId v = -1;        // CxD2 capsule outputs
    NodeId s = -1;        // CxD2 pre-squash inputs
    NodeId c_final = -1;  // NxC couplings used in the final iteration
    std::vector<NodeId> c_per_iter;
};

// Routing-by-agreement over prediction vectors u_hat (NxCxD2): logits start
// at zero; each iteration takes couplings as the class-axis softmax of the
// logits, forms the coupled sums, squashes them, and adds the dot-product
// agreement to the logits (skipped after the last iteration).
RoutingResult routing_forward(Graph& g, NodeId u_hat, int iterations,
                              bool detach_couplings = false);

// Two-sided margin loss over capsule norms: the target class is pushed above
// m_plus, every other class below m_minus with down-weight lambda.
NodeId margin_loss(Graph& g, NodeId v, const std::vector<real>& target_one_hot, real m_plus,
                   real m_minus, real lambda);

// Zero all rows of v except the selected one and flatten to C*D2. Training
// selects argmax of the target; inference the row with the longest vector.
NodeId mask_by_target(Graph& g, NodeId v, const std::vector<real>& target_one_hot);
NodeId mask_by_longest(Graph& g, NodeId v);

// Sum of squared differences between two equal-sized tensors.
NodeId sum_squared_error(Graph& g, NodeId a, const Tensor& reference);

// argmax_k ||v_k||, lowest index on ties.
int capsnet_predict(const Tensor& v);

class CapsNet {
  public:
    CapsNet(CapsNetConfig cfg, Rng& rng);

    struct ForwardNodes {
        NodeId v = -1;
        NodeId margin = -1;
        NodeId recon = -1;  // -1 when the decoder is skipped (recon_weight == 0)
        NodeId loss = -1;
        RoutingResult routing;
    };
    // Builds the full training graph for one sample. image is x1 x x2 x 1.
    ForwardNodes build_loss(Graph& g, const Tensor& image, int label);

    // Value-only forward; returns the routing capsule outputs CxD2.
    Tensor routing_outputs(const Tensor& image) const;
    int predict(const Tensor& image) const;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    const CapsNetConfig& config() const { return cfg_; }

  private:
    CapsNetConfig cfg_;
    Parameter stem_kernels_, stem_bias_;
    Parameter primary_kernels_, primary_bias_;
    Parameter routing_weights_;
    Parameter dec_w1_, dec_b1_, dec_w2_, dec_b2_, dec_w3_, dec_b3_;
};

}  // namespace capsbench
