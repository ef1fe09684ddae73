#pragma once

#include <vector>

#include "capsbench/graph.hpp"

namespace capsbench {

struct AdamConfig {
    real lr = 0.001;
    real beta1 = 0.9;
    real beta2 = 0.999;
    real eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter set.
class Adam {
  public:
    Adam(std::vector<Parameter*> params, AdamConfig cfg);

    // Applies one update from the gradients currently held by the
    // parameters.
    void step();
    void zero_grad();
    long step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

  private:
    std::vector<Parameter*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace capsbench
