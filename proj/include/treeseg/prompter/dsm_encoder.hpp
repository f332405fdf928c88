#pragma once

#include <array>
#include <vector>

#include "treeseg/nn/modules.hpp"
#include "treeseg/nn/norm.hpp"
#include "treeseg/sam/config.hpp"

namespace treeseg::prompter {

// Three-layer convolutional DSM embedding: stride-2 then stride-8 then 1x1,
// matching the image-embedding grid (total stride = the image patch stride).
// Kernels equal strides so no padding is involved anywhere.
struct DsmPromptEncoderSpec {
    int64_t k1 = 2, s1 = 2, c1 = 192;
    int64_t k2 = 8, s2 = 8, c2 = 768;
    int64_t out_channels = 256;

    int64_t total_stride() const { return s1 * s2; }

    void validate() const {
        TS_CHECK(k1 == s1 && k2 == s2, "dsm encoder: kernels must equal strides");
        TS_CHECK(s1 > 0 && s2 > 0 && c1 > 0 && c2 > 0 && out_channels > 0,
                 "dsm encoder: positive dims");
    }

    static DsmPromptEncoderSpec full() { return DsmPromptEncoderSpec{}; }

    // scaled to a promptable-segmenter preset: output grid and channel width
    // must match its image embedding
    static DsmPromptEncoderSpec for_sam(const sam::SamConfig& cfg, int64_t c1_ = 0,
                                        int64_t c2_ = 0) {
        DsmPromptEncoderSpec s;
        TS_CHECK(cfg.patch_size % 2 == 0, "dsm encoder: odd patch stride");
        s.s2 = cfg.patch_size / 2;
        s.k2 = s.s2;
        s.out_channels = cfg.embed_dim;
        if (c1_ > 0) s.c1 = c1_;
        if (c2_ > 0) s.c2 = c2_;
        s.validate();
        return s;
    }

    int64_t param_count() const {
        const int64_t conv1 = c1 * (1 * k1 * k1) + c1;
        const int64_t norm1 = 2 * c1;
        const int64_t conv2 = c2 * (c1 * k2 * k2) + c2;
        const int64_t norm2 = 2 * c2;
        const int64_t conv3 = out_channels * c2 + out_channels;
        return conv1 + norm1 + conv2 + norm2 + conv3;
    }
};

// Per-stage output shapes of one forward pass, for shape-contract checks.
struct ShapeTrace {
    std::vector<std::array<int64_t, 3>> stages;
};

struct DsmPromptEncoder : nn::Module {
    DsmPromptEncoderSpec spec;
    nn::Conv2dLayer conv1, conv2, conv3;
    nn::LayerNorm2d norm1, norm2;

    DsmPromptEncoder() = default;
    DsmPromptEncoder(const DsmPromptEncoderSpec& spec_, Rng& rng) : spec(spec_) {
        spec.validate();
        conv1 = nn::Conv2dLayer(1, spec.c1, spec.k1, spec.s1, 0, rng);
        conv2 = nn::Conv2dLayer(spec.c1, spec.c2, spec.k2, spec.s2, 0, rng);
        conv3 = nn::Conv2dLayer(spec.c2, spec.out_channels, 1, 1, 0, rng);
        norm1 = nn::LayerNorm2d(spec.c1);
        norm2 = nn::LayerNorm2d(spec.c2);
        // zero final layer: the DSM path starts as an exact no-op so training
        // begins from the no-DSM baseline
        conv3.weight->value = nn::Tensor::zeros(conv3.weight->value.shape());
        conv3.bias->value = nn::Tensor::zeros(conv3.bias->value.shape());
    }

    // [1,H,W] -> [out, H/stride, W/stride]
    nn::Var forward(const nn::Var& dsm, ShapeTrace* trace = nullptr) const {
        TS_CHECK(dsm->value.ndim() == 3 && dsm->value.dim(0) == 1,
                 "dsm encoder: input must be [1,H,W]");
        const int64_t h = dsm->value.dim(1), w = dsm->value.dim(2);
        TS_CHECK(h % spec.total_stride() == 0 && w % spec.total_stride() == 0,
                 "dsm encoder: input not divisible by the total stride");
        nn::Var y = nn::gelu(norm1.forward(conv1.forward(dsm)));
        if (trace) trace->stages.push_back({spec.c1, h / spec.s1, w / spec.s1});
        y = nn::gelu(norm2.forward(conv2.forward(y)));
        if (trace)
            trace->stages.push_back({spec.c2, h / spec.total_stride(),
                                     w / spec.total_stride()});
        y = conv3.forward(y);
        if (trace)
            trace->stages.push_back({spec.out_channels, h / spec.total_stride(),
                                     w / spec.total_stride()});
        return y;
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        conv1.collect(nn::join_name(prefix, "conv1"), out);
        norm1.collect(nn::join_name(prefix, "norm1"), out);
        conv2.collect(nn::join_name(prefix, "conv2"), out);
        norm2.collect(nn::join_name(prefix, "norm2"), out);
        conv3.collect(nn::join_name(prefix, "conv3"), out);
    }
};

}  // namespace treeseg::prompter
