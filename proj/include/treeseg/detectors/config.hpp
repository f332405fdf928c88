#pragma once

#include <vector>

#include "treeseg/common.hpp"

namespace treeseg::detectors {

enum class DetectorKind { faster, mask };

// How the height channel enters the network. `stack` appends the normalized
// DSM as a 4th input channel, `gradients` appends two slope channels,
// `encoder` appends a jointly-trained per-pixel encoding of the DSM.
enum class DsmInputMode { none, stack, gradients, encoder };

inline int64_t channels_for_mode(DsmInputMode mode) {
    switch (mode) {
        case DsmInputMode::none: return 3;
        case DsmInputMode::stack: return 4;
        case DsmInputMode::gradients: return 5;
        case DsmInputMode::encoder: return 4;
    }
    TS_CHECK(false, "detector config: unknown dsm mode");
    return 0;
}

struct DetectorConfig {
    DetectorKind kind = DetectorKind::mask;
    int64_t in_channels = 3;
    int64_t num_classes = 1;
    bool pretrained_backbone = false;
    bool extra_head_capacity = false;
    bool dsm_encoder_stack = false;
    DsmInputMode dsm_mode = DsmInputMode::none;

    int64_t image_size = 1024;
    int64_t backbone_base = 64;   // conv1 output channels
    int64_t backbone_stages = 3;  // stride-2 stages after conv1+pool
    int64_t head_width = 1024;    // shared fully-connected width
    std::vector<real_t> anchor_sizes = {32, 64, 128};
    std::vector<real_t> anchor_ratios = {0.5, 1.0, 2.0};
    int64_t rpn_pre_nms = 600;
    int64_t rpn_post_nms_train = 64;
    int64_t rpn_post_nms_eval = 100;
    real_t rpn_nms_iou = 0.7;
    real_t score_threshold = 0.05;
    real_t nms_iou = 0.5;
    int64_t dsm_stack_c1 = 192;
    int64_t dsm_stack_c2 = 768;
    real_t gradient_clamp_percentile = 98.0;

    int64_t stride() const { return int64_t(1) << (1 + backbone_stages); }
    int64_t feature_channels() const { return backbone_base << backbone_stages; }

    void validate() const {
        TS_CHECK(num_classes >= 1, "detector config: num_classes must be >= 1");
        TS_CHECK(in_channels == 3 || in_channels == 4 || in_channels == 5,
                 "detector config: in_channels must be 3, 4 or 5");
        TS_CHECK(in_channels == channels_for_mode(dsm_mode),
                 "detector config: in_channels inconsistent with dsm mode");
        TS_CHECK(dsm_encoder_stack == (dsm_mode == DsmInputMode::encoder),
                 "detector config: dsm_encoder_stack flag inconsistent with dsm mode");
        TS_CHECK(image_size > 0 && image_size % stride() == 0,
                 "detector config: image size must be divisible by the stride");
        TS_CHECK(backbone_base > 0 && backbone_stages >= 1,
                 "detector config: backbone shape");
        TS_CHECK(!anchor_sizes.empty() && !anchor_ratios.empty(),
                 "detector config: anchors");
        TS_CHECK(rpn_pre_nms >= 1 && rpn_post_nms_train >= 1 && rpn_post_nms_eval >= 1,
                 "detector config: proposal counts");
    }

    static DetectorConfig with_dsm(DetectorConfig base, DsmInputMode mode) {
        base.dsm_mode = mode;
        base.in_channels = channels_for_mode(mode);
        base.dsm_encoder_stack = mode == DsmInputMode::encoder;
        return base;
    }

    // desk-scale preset for 64-pixel tiles
    static DetectorConfig tiny(int64_t num_classes, DetectorKind kind = DetectorKind::mask) {
        DetectorConfig c;
        c.kind = kind;
        c.num_classes = num_classes;
        c.image_size = 64;
        c.backbone_base = 16;
        c.backbone_stages = 2;
        c.head_width = 64;
        c.anchor_sizes = {12, 24, 40};
        c.anchor_ratios = {0.5, 1.0, 2.0};
        c.rpn_pre_nms = 200;
        c.rpn_post_nms_train = 24;
        c.rpn_post_nms_eval = 32;
        c.dsm_stack_c1 = 8;
        c.dsm_stack_c2 = 16;
        return c;
    }
};

}  // namespace treeseg::detectors
