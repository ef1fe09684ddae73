#include "capsbench/adam.hpp"

#include <cmath>

namespace capsbench {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape, 0);
        v_.emplace_back(p->value.shape, 0);
    }
}

void Adam::step() {
    ++t_;
    const real bc1 = 1 - std::pow(cfg_.beta1, static_cast<real>(t_));
    const real bc2 = 1 - std::pow(cfg_.beta2, static_cast<real>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (!p.grad.same_shape(p.value))
            throw ShapeError("adam: gradient shape " + shape_str(p.grad.shape) +
                             " does not match parameter '" + p.name + "'");
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (long j = 0; j < p.value.size(); ++j) {
            const real g = p.grad[j];
            m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * g * g;
            const real m_hat = m[j] / bc1;
            const real v_hat = v[j] / bc2;
            p.value[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

}  // namespace capsbench
