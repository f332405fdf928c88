#pragma once

#include <cmath>

#include "treeseg/nn/ops.hpp"

// Fused normalization ops with analytic backward passes. Variance is biased
// (divide by N), matching the usual deep-learning convention.

namespace treeseg::nn {

namespace detail {

// Shared backward for one normalization slice: given upstream grad through
// xhat, accumulate into dx. M is the slice width.
//   dx = (1/sigma) * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
struct NormSlice {
    real_t mean, inv_sigma;
};

}  // namespace detail

// Layer norm over the last dimension: x [..., D], gamma/beta [D].
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                           real_t eps = 1e-5) {
    const int64_t d = x->value.dim(-1);
    const int64_t rows = x->value.numel() / d;
    TS_CHECK(gamma->value.numel() == d && beta->value.numel() == d,
             "layer_norm: affine size mismatch");
    Tensor out(x->value.shape());
    auto slices = std::make_shared<std::vector<detail::NormSlice>>((size_t)rows);
    for (int64_t r = 0; r < rows; ++r) {
        const real_t* p = x->value.data() + r * d;
        real_t mu = 0;
        for (int64_t j = 0; j < d; ++j) mu += p[j];
        mu /= (real_t)d;
        real_t var = 0;
        for (int64_t j = 0; j < d; ++j) var += (p[j] - mu) * (p[j] - mu);
        var /= (real_t)d;
        const real_t inv_sigma = 1.0 / std::sqrt(var + eps);
        (*slices)[(size_t)r] = {mu, inv_sigma};
        real_t* o = out.data() + r * d;
        for (int64_t j = 0; j < d; ++j)
            o[j] = gamma->value[j] * (p[j] - mu) * inv_sigma + beta->value[j];
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, slices, rows, d](Node& node) {
                       for (int64_t r = 0; r < rows; ++r) {
                           const auto& sl = (*slices)[(size_t)r];
                           const real_t* p = x->value.data() + r * d;
                           const real_t* g = node.grad.data() + r * d;
                           real_t m1 = 0, m2 = 0;
                           for (int64_t j = 0; j < d; ++j) {
                               const real_t xh = (p[j] - sl.mean) * sl.inv_sigma;
                               const real_t dxh = g[j] * gamma->value[j];
                               m1 += dxh;
                               m2 += dxh * xh;
                           }
                           m1 /= (real_t)d;
                           m2 /= (real_t)d;
                           if (x->requires_grad) {
                               Tensor& gx = x->ensure_grad();
                               for (int64_t j = 0; j < d; ++j) {
                                   const real_t xh = (p[j] - sl.mean) * sl.inv_sigma;
                                   const real_t dxh = g[j] * gamma->value[j];
                                   gx[r * d + j] += sl.inv_sigma * (dxh - m1 - xh * m2);
                               }
                           }
                           if (gamma->requires_grad) {
                               Tensor& gg = gamma->ensure_grad();
                               for (int64_t j = 0; j < d; ++j)
                                   gg[j] += g[j] * (p[j] - sl.mean) * sl.inv_sigma;
                           }
                           if (beta->requires_grad) {
                               Tensor& gb = beta->ensure_grad();
                               for (int64_t j = 0; j < d; ++j) gb[j] += g[j];
                           }
                       }
                   });
}

// Channel-wise layer norm on [C,H,W]: each pixel normalized across channels,
// per-channel affine.
inline Var layer_norm_chw(const Var& x, const Var& gamma, const Var& beta,
                          real_t eps = 1e-6) {
    TS_CHECK(x->value.ndim() == 3, "layer_norm_chw: input must be [C,H,W]");
    const int64_t C = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
    TS_CHECK(gamma->value.numel() == C && beta->value.numel() == C,
             "layer_norm_chw: affine size mismatch");
    Tensor out(x->value.shape());
    auto slices = std::make_shared<std::vector<detail::NormSlice>>((size_t)hw);
    const real_t* xd = x->value.data();
    for (int64_t p = 0; p < hw; ++p) {
        real_t mu = 0;
        for (int64_t c = 0; c < C; ++c) mu += xd[c * hw + p];
        mu /= (real_t)C;
        real_t var = 0;
        for (int64_t c = 0; c < C; ++c) {
            const real_t dl = xd[c * hw + p] - mu;
            var += dl * dl;
        }
        var /= (real_t)C;
        const real_t inv_sigma = 1.0 / std::sqrt(var + eps);
        (*slices)[(size_t)p] = {mu, inv_sigma};
        for (int64_t c = 0; c < C; ++c)
            out[c * hw + p] =
                gamma->value[c] * (xd[c * hw + p] - mu) * inv_sigma + beta->value[c];
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, slices, C, hw](Node& node) {
                       const real_t* xd = x->value.data();
                       for (int64_t p = 0; p < hw; ++p) {
                           const auto& sl = (*slices)[(size_t)p];
                           real_t m1 = 0, m2 = 0;
                           for (int64_t c = 0; c < C; ++c) {
                               const real_t xh = (xd[c * hw + p] - sl.mean) * sl.inv_sigma;
                               const real_t dxh = node.grad[c * hw + p] * gamma->value[c];
                               m1 += dxh;
                               m2 += dxh * xh;
                           }
                           m1 /= (real_t)C;
                           m2 /= (real_t)C;
                           if (x->requires_grad) {
                               Tensor& gx = x->ensure_grad();
                               for (int64_t c = 0; c < C; ++c) {
                                   const real_t xh = (xd[c * hw + p] - sl.mean) * sl.inv_sigma;
                                   const real_t dxh = node.grad[c * hw + p] * gamma->value[c];
                                   gx[c * hw + p] += sl.inv_sigma * (dxh - m1 - xh * m2);
                               }
                           }
                           if (gamma->requires_grad) {
                               Tensor& gg = gamma->ensure_grad();
                               for (int64_t c = 0; c < C; ++c)
                                   gg[c] += node.grad[c * hw + p] *
                                            (xd[c * hw + p] - sl.mean) * sl.inv_sigma;
                           }
                           if (beta->requires_grad) {
                               Tensor& gb = beta->ensure_grad();
                               for (int64_t c = 0; c < C; ++c) gb[c] += node.grad[c * hw + p];
                           }
                       }
                   });
}

// Group norm on [C,H,W]: channels split into `groups` contiguous groups, each
// normalized over its channels and all spatial positions; per-channel affine.
inline Var group_norm(const Var& x, int64_t groups, const Var& gamma, const Var& beta,
                      real_t eps = 1e-5) {
    TS_CHECK(x->value.ndim() == 3, "group_norm: input must be [C,H,W]");
    const int64_t C = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
    TS_CHECK(C % groups == 0, "group_norm: channels not divisible by groups");
    TS_CHECK(gamma->value.numel() == C && beta->value.numel() == C,
             "group_norm: affine size mismatch");
    const int64_t cg = C / groups, m = cg * hw;
    Tensor out(x->value.shape());
    auto slices = std::make_shared<std::vector<detail::NormSlice>>((size_t)groups);
    const real_t* xd = x->value.data();
    for (int64_t g = 0; g < groups; ++g) {
        const real_t* p = xd + g * m;
        real_t mu = 0;
        for (int64_t i = 0; i < m; ++i) mu += p[i];
        mu /= (real_t)m;
        real_t var = 0;
        for (int64_t i = 0; i < m; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= (real_t)m;
        const real_t inv_sigma = 1.0 / std::sqrt(var + eps);
        (*slices)[(size_t)g] = {mu, inv_sigma};
        for (int64_t i = 0; i < m; ++i) {
            const int64_t c = g * cg + i / hw;
            out[g * m + i] = gamma->value[c] * (p[i] - mu) * inv_sigma + beta->value[c];
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, slices, groups, cg, hw, m](Node& node) {
                       const real_t* xd = x->value.data();
                       for (int64_t g = 0; g < groups; ++g) {
                           const auto& sl = (*slices)[(size_t)g];
                           const real_t* p = xd + g * m;
                           const real_t* gr = node.grad.data() + g * m;
                           real_t m1 = 0, m2 = 0;
                           for (int64_t i = 0; i < m; ++i) {
                               const int64_t c = g * cg + i / hw;
                               const real_t xh = (p[i] - sl.mean) * sl.inv_sigma;
                               const real_t dxh = gr[i] * gamma->value[c];
                               m1 += dxh;
                               m2 += dxh * xh;
                           }
                           m1 /= (real_t)m;
                           m2 /= (real_t)m;
                           if (x->requires_grad) {
                               Tensor& gx = x->ensure_grad();
                               for (int64_t i = 0; i < m; ++i) {
                                   const int64_t c = g * cg + i / hw;
                                   const real_t xh = (p[i] - sl.mean) * sl.inv_sigma;
                                   const real_t dxh = gr[i] * gamma->value[c];
                                   gx[g * m + i] += sl.inv_sigma * (dxh - m1 - xh * m2);
                               }
                           }
                           if (gamma->requires_grad || beta->requires_grad) {
                               for (int64_t i = 0; i < m; ++i) {
                                   const int64_t c = g * cg + i / hw;
                                   const real_t xh = (p[i] - sl.mean) * sl.inv_sigma;
                                   if (gamma->requires_grad) gamma->ensure_grad()[c] += gr[i] * xh;
                                   if (beta->requires_grad) beta->ensure_grad()[c] += gr[i];
                               }
                           }
                       }
                   });
}

}  // namespace treeseg::nn
