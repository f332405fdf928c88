#pragma once

#include <cstring>
#include <vector>

#include "treeseg/detectors/config.hpp"
#include "treeseg/nn/modules.hpp"

namespace treeseg::detectors {

// Stand-in for an ImageNet-pretrained checkpoint: a fixed-seed generator that
// always produces the same 3-channel weights, independent of the model seed.
// Surgery onto wider inputs copies these bitwise into the RGB slice.
constexpr uint64_t kPretrainedSeed = 0x1337c0de;

inline nn::Tensor pretrained_conv1_weight(int64_t base, int64_t k) {
    Rng rng(kPretrainedSeed);
    nn::Tensor w({base, 3, k, k});
    nn::fill_kaiming_uniform(w, 3 * k * k, rng);
    return w;
}

inline nn::Tensor pretrained_conv1_bias(int64_t base, int64_t k) {
    Rng rng(kPretrainedSeed + 1);
    nn::Tensor b({base});
    nn::fill_kaiming_uniform(b, 3 * k * k, rng);
    return b;
}

struct BackboneStage : nn::Module {
    nn::Conv2dLayer conv1, conv2;
    nn::GroupNormLayer norm1, norm2;

    BackboneStage() = default;
    BackboneStage(int64_t in_ch, int64_t out_ch, Rng& rng)
        : conv1(in_ch, out_ch, 3, 2, 1, rng),
          conv2(out_ch, out_ch, 3, 1, 1, rng),
          norm1(out_ch, groups_for(out_ch)),
          norm2(out_ch, groups_for(out_ch)) {}

    static int64_t groups_for(int64_t c) { return c % 8 == 0 ? 8 : 1; }

    nn::Var forward(const nn::Var& x) const {
        nn::Var y = nn::relu(norm1.forward(conv1.forward(x)));
        return nn::relu(norm2.forward(conv2.forward(y)));
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        conv1.collect(nn::join_name(prefix, "conv1"), out);
        norm1.collect(nn::join_name(prefix, "norm1"), out);
        conv2.collect(nn::join_name(prefix, "conv2"), out);
        norm2.collect(nn::join_name(prefix, "norm2"), out);
    }
};

// conv1 7x7/2 followed by stride-2 stages, single output feature map.
// Pretrained construction draws every backbone layer from fixed streams so
// that two models share backbone weights regardless of their own seeds; the
// extra input channels of conv1 are the only freshly-initialized slice.
struct Backbone : nn::Module {
    nn::Conv2dLayer conv1;
    nn::GroupNormLayer norm1;
    std::vector<BackboneStage> stages;
    int64_t in_channels = 3;

    Backbone() = default;
    Backbone(const DetectorConfig& cfg, Rng& rng) : in_channels(cfg.in_channels) {
        Rng conv1_rng = rng.fork(0);
        Rng pre(kPretrainedSeed + 2);
        conv1 = nn::Conv2dLayer(cfg.in_channels, cfg.backbone_base, 7, 2, 3, conv1_rng);
        if (cfg.pretrained_backbone) apply_surgery(cfg, conv1_rng);
        norm1 = nn::GroupNormLayer(cfg.backbone_base,
                                   BackboneStage::groups_for(cfg.backbone_base));
        int64_t ch = cfg.backbone_base;
        for (int64_t i = 0; i < cfg.backbone_stages; ++i) {
            Rng stage_rng = rng.fork((uint64_t)i + 1);
            Rng stage_pre = pre.fork((uint64_t)i + 1);
            stages.emplace_back(ch, ch * 2, cfg.pretrained_backbone ? stage_pre : stage_rng);
            ch *= 2;
        }
    }

    void apply_surgery(const DetectorConfig& cfg, Rng& fresh_rng) {
        const int64_t base = cfg.backbone_base, c = cfg.in_channels, k = 7;
        const nn::Tensor pre_w = pretrained_conv1_weight(base, k);
        nn::Tensor& w = conv1.weight->value;
        if (c == 3) {
            std::memcpy(w.data(), pre_w.data(), (size_t)pre_w.numel() * sizeof(real_t));
        } else {
            nn::Tensor extra({base, c - 3, k, k});
            nn::fill_kaiming_uniform(extra, c * k * k, fresh_rng);
            for (int64_t o = 0; o < base; ++o) {
                std::memcpy(w.data() + (o * c) * k * k, pre_w.data() + (o * 3) * k * k,
                            (size_t)(3 * k * k) * sizeof(real_t));
                std::memcpy(w.data() + (o * c + 3) * k * k,
                            extra.data() + (o * (c - 3)) * k * k,
                            (size_t)((c - 3) * k * k) * sizeof(real_t));
            }
        }
        const nn::Tensor pre_b = pretrained_conv1_bias(base, k);
        std::memcpy(conv1.bias->value.data(), pre_b.data(),
                    (size_t)pre_b.numel() * sizeof(real_t));
    }

    nn::Var forward(const nn::Var& x) const {
        TS_CHECK(x->value.ndim() == 3 && x->value.dim(0) == in_channels,
                 "backbone: input channel mismatch");
        nn::Var y = nn::relu(norm1.forward(conv1.forward(x)));
        for (const auto& s : stages) y = s.forward(y);
        return y;
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        conv1.collect(nn::join_name(prefix, "conv1"), out);
        norm1.collect(nn::join_name(prefix, "norm1"), out);
        for (size_t i = 0; i < stages.size(); ++i)
            stages[i].collect(nn::join_name(prefix, "stage" + std::to_string(i)), out);
    }
};

}  // namespace treeseg::detectors
