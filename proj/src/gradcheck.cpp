#include "capsbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace capsbench {

GradCheckReport finite_diff_check(const std::vector<Parameter*>& params,
                                  const std::function<real()>& loss_forward,
                                  const std::function<real()>& loss_backward, real tolerance,
                                  int max_samples, uint64_t seed, real step) {
    for (Parameter* p : params) p->zero_grad();
    loss_backward();

    // Flat list of (param, entry) coordinates to sample from.
    std::vector<std::pair<int, long>> coords;
    for (size_t pi = 0; pi < params.size(); ++pi)
        for (long i = 0; i < params[pi]->value.size(); ++i)
            coords.emplace_back(static_cast<int>(pi), i);
    Rng rng(seed);
    rng.shuffle(coords);
    if (static_cast<long>(coords.size()) > max_samples)
        coords.resize(static_cast<size_t>(max_samples));

    GradCheckReport report;
    report.tolerance = tolerance;
    for (auto [pi, idx] : coords) {
        Parameter& p = *params[static_cast<size_t>(pi)];
        const real saved = p.value[idx];
        p.value[idx] = saved + step;
        const real lp = loss_forward();
        p.value[idx] = saved - step;
        const real lm = loss_forward();
        p.value[idx] = saved;

        GradCheckEntry e;
        e.param = p.name;
        e.index = idx;
        e.analytic = p.grad[idx];
        e.numeric = (lp - lm) / (2 * step);
        e.rel_err = std::abs(e.analytic - e.numeric) /
                    std::max({std::abs(e.analytic), std::abs(e.numeric), real(1e-12)});
        report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
        report.entries.push_back(e);
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

}  // namespace capsbench
