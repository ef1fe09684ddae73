#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capsbench/graph.hpp"
#include "capsbench/rng.hpp"

namespace capsbench {

struct GradCheckEntry {
    std::string param;
    long index = 0;
    real analytic = 0;
    real numeric = 0;
    real rel_err = 0;
};

struct GradCheckReport {
    bool pass = false;
    real tolerance = 0;
    real max_rel_err = 0;
    std::vector<GradCheckEntry> entries;
};

// Central-difference check of reverse-mode gradients.
//
// `loss_forward` evaluates the loss with current parameter values and must be
// deterministic. `loss_backward` additionally populates Parameter::grad
// (grads are zeroed here first). Up to `max_samples` parameter entries are
// drawn seed-deterministically across all parameters; relative error is
// |g_a - g_n| / max(|g_a|, |g_n|, 1e-12).
GradCheckReport finite_diff_check(const std::vector<Parameter*>& params,
                                  const std::function<real()>& loss_forward,
                                  const std::function<real()>& loss_backward, real tolerance,
                                  int max_samples, uint64_t seed, real step = 1e-5);

}  // namespace capsbench
