#pragma once

#include <array>
#include <vector>

#include "treeseg/common.hpp"

namespace treeseg::sam {

// Promptable-segmenter hyperparameters. vit_h() carries the published
// ViT-Huge constants; tiny() is a scaled-down preset with the same wiring
// so tests and CPU-only pipelines stay tractable.
struct SamConfig {
    int64_t image_size = 1024;
    int64_t patch_size = 16;
    int64_t encoder_dim = 1280;
    int64_t encoder_depth = 32;
    int64_t encoder_heads = 16;
    int64_t window_size = 14;
    std::vector<int64_t> global_attn_layers = {7, 15, 23, 31};
    int64_t embed_dim = 256;  // prompt/decoder/embedding channel width
    int64_t decoder_depth = 2;
    int64_t decoder_heads = 8;
    int64_t decoder_mlp_dim = 2048;
    int64_t num_multimask = 3;
    std::array<real_t, 3> pixel_mean = {123.675, 116.28, 103.53};
    std::array<real_t, 3> pixel_std = {58.395, 57.12, 57.375};

    int64_t grid_size() const { return image_size / patch_size; }
    int64_t mask_input_size() const { return 4 * grid_size(); }

    void validate() const {
        TS_CHECK(image_size > 0 && patch_size > 0, "sam config: sizes must be positive");
        TS_CHECK(image_size % patch_size == 0, "sam config: image not divisible by patch");
        TS_CHECK(encoder_dim % encoder_heads == 0, "sam config: encoder heads");
        TS_CHECK(embed_dim % decoder_heads == 0, "sam config: decoder heads");
        TS_CHECK(embed_dim % 2 == 0, "sam config: embed dim must be even");
        TS_CHECK(window_size > 0, "sam config: window size");
        TS_CHECK(num_multimask >= 1, "sam config: multimask count");
    }

    static SamConfig vit_h() { return SamConfig{}; }

    static SamConfig tiny() {
        SamConfig c;
        c.image_size = 64;
        c.patch_size = 8;
        c.encoder_dim = 32;
        c.encoder_depth = 2;
        c.encoder_heads = 2;
        c.window_size = 4;
        c.global_attn_layers = {1};
        c.embed_dim = 32;
        c.decoder_depth = 2;
        c.decoder_heads = 2;
        c.decoder_mlp_dim = 64;
        return c;
    }
};

}  // namespace treeseg::sam
