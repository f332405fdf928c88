#pragma once

#include <algorithm>
#include <vector>

#include "treeseg/data/sample.hpp"
#include "treeseg/detectors/config.hpp"
#include "treeseg/nn/modules.hpp"
#include "treeseg/nn/norm.hpp"

namespace treeseg::detectors {

// Jointly-trained per-pixel DSM encoding appended as the detector's 4th input
// channel. Stride-1 even kernels keep the spatial size via bottom/right zero
// padding.
struct DsmEncoderStack : nn::Module {
    nn::Conv2dLayer conv1, conv2, conv3;
    nn::LayerNorm2d norm1, norm2;

    DsmEncoderStack() = default;
    DsmEncoderStack(int64_t c1, int64_t c2, Rng& rng)
        : conv1(1, c1, 2, 1, 0, rng),
          conv2(c1, c2, 2, 1, 0, rng),
          conv3(c2, 1, 1, 1, 0, rng),
          norm1(c1),
          norm2(c2) {}

    // [1,H,W] -> [1,H,W]
    nn::Var forward(const nn::Var& dsm) const {
        TS_CHECK(dsm->value.ndim() == 3 && dsm->value.dim(0) == 1,
                 "dsm encoder stack: input must be [1,H,W]");
        nn::Var y = conv1.forward(nn::zero_pad2d(dsm, 0, 1, 0, 1));
        y = nn::gelu(norm1.forward(y));
        y = conv2.forward(nn::zero_pad2d(y, 0, 1, 0, 1));
        y = nn::gelu(norm2.forward(y));
        return conv3.forward(y);
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        conv1.collect(nn::join_name(prefix, "conv1"), out);
        norm1.collect(nn::join_name(prefix, "norm1"), out);
        conv2.collect(nn::join_name(prefix, "conv2"), out);
        norm2.collect(nn::join_name(prefix, "norm2"), out);
        conv3.collect(nn::join_name(prefix, "conv3"), out);
    }
};

// Symmetric percentile bound over finite values, for squashing slope outliers.
inline real_t symmetric_percentile_bound(const nn::Tensor& t, real_t percentile) {
    std::vector<real_t> mags;
    mags.reserve((size_t)t.numel());
    for (int64_t i = 0; i < t.numel(); ++i) mags.push_back(std::abs(t[i]));
    std::sort(mags.begin(), mags.end());
    if (mags.empty()) return 0;
    const size_t idx = std::min(mags.size() - 1,
                                (size_t)((percentile / 100.0) * (real_t)mags.size()));
    return mags[idx];
}

// Static input channels for the detector: RGB scaled to [0,1], plus the
// normalized DSM (stack mode) or its clamped-and-rescaled slopes (gradients
// mode). Encoder mode contributes its channel inside the model forward, so
// here it gets RGB only.
inline nn::Tensor stack_detector_input(const Sample& sample, DsmInputMode mode,
                                       real_t gradient_clamp_percentile = 98.0) {
    sample.validate();
    const int64_t h = sample.rgb.dim(1), w = sample.rgb.dim(2);
    const int64_t chans = mode == DsmInputMode::stack ? 4
                          : mode == DsmInputMode::gradients ? 5
                                                            : 3;
    nn::Tensor out({chans, h, w});
    for (int64_t i = 0; i < 3 * h * w; ++i) out[i] = sample.rgb[i] / 255.0;
    if (mode == DsmInputMode::none || mode == DsmInputMode::encoder) return out;

    TS_CHECK(sample.dsm.has_value(), "detector input: DSM channel required");
    const DsmChannel norm = normalize_dsm(*sample.dsm);
    if (mode == DsmInputMode::stack) {
        for (int64_t i = 0; i < h * w; ++i) out[3 * h * w + i] = norm.values[i];
        return out;
    }

    const auto [gy, gx] = dsm_gradients(norm);
    const nn::Tensor* grads[2] = {&gy, &gx};
    for (int c = 0; c < 2; ++c) {
        const nn::Tensor& g = *grads[c];
        const real_t bound = symmetric_percentile_bound(g, gradient_clamp_percentile);
        for (int64_t i = 0; i < h * w; ++i) {
            const real_t v = bound > 0 ? std::clamp(g[i], -bound, bound) / bound : 0.0;
            out[(3 + c) * h * w + i] = (v + 1.0) / 2.0;
        }
    }
    return out;
}

}  // namespace treeseg::detectors
