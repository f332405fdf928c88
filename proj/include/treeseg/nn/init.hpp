#pragma once

#include <cmath>

#include "treeseg/common.hpp"
#include "treeseg/nn/tensor.hpp"

namespace treeseg::nn {

inline void fill_uniform(Tensor& t, real_t lo, real_t hi, Rng& rng) {
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) t[i] = rng.uniform(lo, hi);
}

inline void fill_normal(Tensor& t, real_t mean, real_t std, Rng& rng) {
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) t[i] = rng.normal(mean, std);
}

// Normal draw rejected outside +-2 std, the usual transformer token init.
inline void fill_trunc_normal(Tensor& t, real_t std, Rng& rng) {
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
        real_t v;
        do {
            v = rng.normal(0.0, std);
        } while (std::abs(v) > 2.0 * std);
        t[i] = v;
    }
}

// Torch-style default for Linear/Conv weights: uniform(-1/sqrt(fan_in), ...).
inline void fill_kaiming_uniform(Tensor& t, int64_t fan_in, Rng& rng) {
    TS_CHECK(fan_in > 0, "kaiming init: fan_in must be positive");
    const real_t bound = 1.0 / std::sqrt((real_t)fan_in);
    fill_uniform(t, -bound, bound, rng);
}

inline void fill_xavier_uniform(Tensor& t, int64_t fan_in, int64_t fan_out, Rng& rng) {
    const real_t bound = std::sqrt(6.0 / (real_t)(fan_in + fan_out));
    fill_uniform(t, -bound, bound, rng);
}

}  // namespace treeseg::nn
