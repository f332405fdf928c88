#pragma once

#include <cmath>
#include <vector>

#include "treeseg/nn/autograd.hpp"

namespace treeseg::nn {

// Optimizers step over a fixed parameter list; state is positional, so the
// list must be the same (and in the same order) on every call.

struct Sgd {
    real_t lr = 0.01;
    real_t momentum = 0.0;
    real_t weight_decay = 0.0;
    std::vector<Tensor> velocity;

    Sgd() = default;
    Sgd(real_t lr_, real_t momentum_, real_t weight_decay_)
        : lr(lr_), momentum(momentum_), weight_decay(weight_decay_) {}

    void step(const std::vector<Var>& params) {
        if (velocity.empty()) velocity.resize(params.size());
        TS_CHECK(velocity.size() == params.size(), "sgd: parameter list changed");
        for (size_t k = 0; k < params.size(); ++k) {
            Var p = params[k];
            if (!p->requires_grad || p->grad.numel() != p->value.numel()) continue;
            if (velocity[k].numel() != p->value.numel())
                velocity[k] = Tensor::zeros(p->value.shape());
            const int64_t n = p->value.numel();
            for (int64_t i = 0; i < n; ++i) {
                real_t g = p->grad[i] + weight_decay * p->value[i];
                velocity[k][i] = momentum * velocity[k][i] + g;
                p->value[i] -= lr * velocity[k][i];
            }
        }
    }
};

struct Adam {
    real_t lr = 1e-3;
    real_t beta1 = 0.9, beta2 = 0.999;
    real_t eps = 1e-8;
    real_t weight_decay = 0.0;
    bool decoupled = false;  // true = AdamW-style decay
    int64_t t = 0;
    std::vector<Tensor> m, v;

    Adam() = default;
    Adam(real_t lr_, real_t beta1_, real_t beta2_, real_t weight_decay_,
         bool decoupled_ = false)
        : lr(lr_), beta1(beta1_), beta2(beta2_), weight_decay(weight_decay_),
          decoupled(decoupled_) {}

    static Adam adamw(real_t lr_, real_t weight_decay_) {
        return Adam(lr_, 0.9, 0.999, weight_decay_, true);
    }

    void step(const std::vector<Var>& params) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
        }
        TS_CHECK(m.size() == params.size(), "adam: parameter list changed");
        ++t;
        const real_t bc1 = 1.0 - std::pow(beta1, (real_t)t);
        const real_t bc2 = 1.0 - std::pow(beta2, (real_t)t);
        for (size_t k = 0; k < params.size(); ++k) {
            Var p = params[k];
            if (!p->requires_grad || p->grad.numel() != p->value.numel()) continue;
            if (m[k].numel() != p->value.numel()) {
                m[k] = Tensor::zeros(p->value.shape());
                v[k] = Tensor::zeros(p->value.shape());
            }
            const int64_t n = p->value.numel();
            for (int64_t i = 0; i < n; ++i) {
                real_t g = p->grad[i];
                if (!decoupled) g += weight_decay * p->value[i];
                m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * g;
                v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * g * g;
                const real_t mhat = m[k][i] / bc1;
                const real_t vhat = v[k][i] / bc2;
                if (decoupled) p->value[i] -= lr * weight_decay * p->value[i];
                p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

inline real_t grad_norm(const std::vector<Var>& params) {
    real_t s = 0;
    for (const auto& p : params) {
        if (p->grad.numel() != p->value.numel()) continue;
        for (int64_t i = 0; i < p->grad.numel(); ++i) s += p->grad[i] * p->grad[i];
    }
    return std::sqrt(s);
}

inline void clip_grad_norm(const std::vector<Var>& params, real_t max_norm) {
    const real_t norm = grad_norm(params);
    if (norm <= max_norm || norm == 0) return;
    const real_t k = max_norm / norm;
    for (const auto& p : params) {
        if (p->grad.numel() != p->value.numel()) continue;
        for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= k;
    }
}

}  // namespace treeseg::nn
