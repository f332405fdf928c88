#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "treeseg/nn/tensor.hpp"

// DSM handling: per-sample max normalization, local-maxima point prompts with
// minimum-distance suppression, and gradient channels.

namespace treeseg {

struct DsmChannel {
    nn::Tensor values;           // [H,W]
    std::vector<uint8_t> valid;  // 1 = real data, 0 = masked border

    DsmChannel() = default;
    explicit DsmChannel(nn::Tensor v) : values(std::move(v)) {
        TS_CHECK(values.ndim() == 2, "dsm: values must be [H,W]");
        valid.assign((size_t)values.numel(), 1);
    }
    DsmChannel(nn::Tensor v, std::vector<uint8_t> mask)
        : values(std::move(v)), valid(std::move(mask)) {
        TS_CHECK(values.ndim() == 2, "dsm: values must be [H,W]");
        TS_CHECK((int64_t)valid.size() == values.numel(), "dsm: mask size mismatch");
    }

    int64_t height() const { return values.dim(0); }
    int64_t width() const { return values.dim(1); }
    bool is_valid(int64_t y, int64_t x) const {
        return valid[(size_t)(y * width() + x)] != 0;
    }
};

struct PeakConfig {
    int64_t min_distance = 50;
};

struct Peak {
    int64_t x = 0, y = 0;
    real_t value = 0;
};

// Divide by the maximum over valid pixels; invalid pixels forced to 0. A
// non-positive maximum cannot scale meaningfully, so the output is all zeros
// and *guarded is set.
inline DsmChannel normalize_dsm(const DsmChannel& dsm, bool* guarded = nullptr) {
    TS_CHECK(std::count(dsm.valid.begin(), dsm.valid.end(), 1) > 0,
             "normalize_dsm: no valid pixels");
    if (guarded) *guarded = false;
    real_t mx = -std::numeric_limits<real_t>::infinity();
    for (int64_t i = 0; i < dsm.values.numel(); ++i)
        if (dsm.valid[(size_t)i]) mx = std::max(mx, dsm.values[i]);

    DsmChannel out(nn::Tensor::zeros(dsm.values.shape()), dsm.valid);
    if (mx <= 0) {
        if (guarded) *guarded = true;
        return out;
    }
    for (int64_t i = 0; i < dsm.values.numel(); ++i)
        if (dsm.valid[(size_t)i]) out.values[i] = dsm.values[i] / mx;
    return out;
}

// Local maxima with plateau handling: 8-connected components of equal value
// qualify when no valid neighbor is higher and at least one valid neighbor is
// lower (a flat image therefore yields no peaks). Each plateau contributes
// the member pixel nearest its centroid. Candidates are then greedily kept in
// descending value order (ties by row-major position) subject to a Euclidean
// minimum distance. Depends only on value ordering, so any strictly
// increasing rescale of the DSM gives identical output.
inline std::vector<Peak> peak_prompts(const DsmChannel& dsm, const PeakConfig& cfg) {
    TS_CHECK(cfg.min_distance >= 1, "peak_prompts: min_distance must be >= 1");
    const int64_t h = dsm.height(), w = dsm.width();
    std::vector<uint8_t> visited((size_t)(h * w), 0);
    std::vector<Peak> candidates;

    std::vector<int64_t> component;
    for (int64_t sy = 0; sy < h; ++sy)
        for (int64_t sx = 0; sx < w; ++sx) {
            const int64_t start = sy * w + sx;
            if (visited[(size_t)start] || !dsm.valid[(size_t)start]) continue;
            const real_t v = dsm.values[start];
            component.clear();
            bool dominated = false, has_lower = false;
            std::queue<int64_t> q;
            q.push(start);
            visited[(size_t)start] = 1;
            while (!q.empty()) {
                const int64_t cur = q.front();
                q.pop();
                component.push_back(cur);
                const int64_t cy = cur / w, cx = cur % w;
                for (int64_t dy = -1; dy <= 1; ++dy)
                    for (int64_t dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        const int64_t ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        const int64_t n = ny * w + nx;
                        if (!dsm.valid[(size_t)n]) continue;
                        const real_t nv = dsm.values[n];
                        if (nv > v) dominated = true;
                        else if (nv < v) has_lower = true;
                        else if (!visited[(size_t)n]) {
                            visited[(size_t)n] = 1;
                            q.push(n);
                        }
                    }
            }
            if (dominated || !has_lower) continue;
            real_t mx = 0, my = 0;
            for (int64_t p : component) {
                my += (real_t)(p / w);
                mx += (real_t)(p % w);
            }
            mx /= (real_t)component.size();
            my /= (real_t)component.size();
            int64_t best = component[0];
            real_t best_d = std::numeric_limits<real_t>::infinity();
            for (int64_t p : component) {
                const real_t dy = (real_t)(p / w) - my, dx = (real_t)(p % w) - mx;
                const real_t d = dy * dy + dx * dx;
                if (d < best_d || (d == best_d && p < best)) {
                    best_d = d;
                    best = p;
                }
            }
            candidates.push_back({best % w, best / w, v});
        }

    std::sort(candidates.begin(), candidates.end(), [](const Peak& a, const Peak& b) {
        if (a.value != b.value) return a.value > b.value;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });

    const real_t min_d2 = (real_t)(cfg.min_distance * cfg.min_distance);
    std::vector<Peak> kept;
    for (const Peak& c : candidates) {
        bool ok = true;
        for (const Peak& k : kept) {
            const real_t dy = (real_t)(c.y - k.y), dx = (real_t)(c.x - k.x);
            if (dy * dy + dx * dx < min_d2) {
                ok = false;
                break;
            }
        }
        if (ok) kept.push_back(c);
    }
    return kept;
}

// Central differences with one-sided stencils at the array edges; the masked
// border region is zeroed afterwards. Returns {vertical, horizontal}.
inline std::pair<nn::Tensor, nn::Tensor> dsm_gradients(const DsmChannel& dsm) {
    const int64_t h = dsm.height(), w = dsm.width();
    nn::Tensor gy(dsm.values.shape()), gx(dsm.values.shape());
    const nn::Tensor& v = dsm.values;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int64_t i = y * w + x;
            if (h == 1) gy[i] = 0;
            else if (y == 0) gy[i] = v[w + x] - v[x];
            else if (y == h - 1) gy[i] = v[i] - v[i - w];
            else gy[i] = (v[i + w] - v[i - w]) / 2.0;
            if (w == 1) gx[i] = 0;
            else if (x == 0) gx[i] = v[i + 1] - v[i];
            else if (x == w - 1) gx[i] = v[i] - v[i - 1];
            else gx[i] = (v[i + 1] - v[i - 1]) / 2.0;
            if (!dsm.valid[(size_t)i]) {
                gy[i] = 0;
                gx[i] = 0;
            }
        }
    return {std::move(gy), std::move(gx)};
}

}  // namespace treeseg
