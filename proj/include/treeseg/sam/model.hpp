#pragma once

#include <string>

#include "treeseg/nn/serialize.hpp"
#include "treeseg/sam/decoder.hpp"
#include "treeseg/sam/encoder.hpp"
#include "treeseg/sam/prompt_encoder.hpp"

namespace treeseg::sam {

// 2-d feature grid produced by the image encoder (and consumed by the mask
// decoder). Stored channel-first.
struct EmbeddingMap {
    nn::Var feat;  // [E, g, g]

    int64_t channels() const { return feat->value.dim(0); }
    int64_t height() const { return feat->value.dim(1); }
    int64_t width() const { return feat->value.dim(2); }
};

// The full promptable segmenter. All parameters are frozen at construction;
// training in this repository only ever touches prompter-side modules.
struct SamModel : nn::Module {
    SamConfig cfg;
    ImageEncoderVit encoder;
    PromptEncoder prompt_encoder;
    MaskDecoder decoder;
    nn::Tensor image_pe_grid;  // [g*g, E], fixed Fourier features

    SamModel() = default;
    explicit SamModel(const SamConfig& cfg_, uint64_t seed = 7310) : cfg(cfg_) {
        cfg.validate();
        Rng rng(seed);
        encoder = ImageEncoderVit(cfg, rng);
        prompt_encoder = PromptEncoder(cfg, rng);
        decoder = MaskDecoder(cfg, rng);
        image_pe_grid = prompt_encoder.dense_position_grid();
        set_trainable(false);
    }

    EmbeddingMap encode_image(const nn::Tensor& rgb) const {
        TS_CHECK(rgb.ndim() == 3 && rgb.dim(0) == 3 && rgb.dim(1) == cfg.image_size &&
                     rgb.dim(2) == cfg.image_size,
                 "encode_image: expected [3," + std::to_string(cfg.image_size) + "," +
                     std::to_string(cfg.image_size) + "] RGB tile");
        nn::Tensor norm = rgb.clone();
        const int64_t px = cfg.image_size * cfg.image_size;
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < px; ++i)
                norm[c * px + i] =
                    (norm[c * px + i] - cfg.pixel_mean[(size_t)c]) /
                    cfg.pixel_std[(size_t)c];
        nn::NoGradGuard g;
        return {encoder.forward(nn::make_leaf(std::move(norm)))};
    }

    nn::Var image_pe() const { return nn::make_leaf(image_pe_grid); }

    // dense may be null, in which case the learned no-mask embedding is used
    DecoderOutput decode(const nn::Var& image_emb, const nn::Var& sparse,
                         const nn::Var& dense = nullptr) const {
        return decoder.forward(image_emb, image_pe(), sparse,
                               dense ? dense : prompt_encoder.no_mask_dense());
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        encoder.collect(nn::join_name(prefix, "encoder"), out);
        prompt_encoder.collect(nn::join_name(prefix, "prompt_encoder"), out);
        decoder.collect(nn::join_name(prefix, "decoder"), out);
    }

    uint64_t checksum() const { return nn::params_checksum(named_params()); }

    void save(const std::string& path) const {
        nlohmann::ordered_json meta;
        meta["kind"] = "sam";
        nn::save_params(path, named_params(), std::move(meta));
    }
    void load(const std::string& path) {
        nn::load_params(path, named_params());
        set_trainable(false);
    }
};

}  // namespace treeseg::sam
