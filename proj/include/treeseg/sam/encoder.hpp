#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "treeseg/nn/modules.hpp"
#include "treeseg/sam/config.hpp"

namespace treeseg::sam {

// [G*G, D] tokens <-> [D, G, G] grid
inline nn::Var tokens_to_grid(const nn::Var& t, int64_t g) {
    return nn::reshape(nn::transpose(t), {t->value.dim(1), g, g});
}

inline nn::Var grid_to_tokens(const nn::Var& x) {
    const int64_t d = x->value.dim(0), g = x->value.dim(1);
    return nn::transpose(nn::reshape(x, {d, g * g}));
}

struct VitBlock : nn::Module {
    nn::LayerNorm norm1, norm2;
    nn::MultiheadAttention attn;
    nn::Mlp mlp;
    int64_t window = 0;  // 0 = global attention

    VitBlock() = default;
    VitBlock(int64_t dim, int64_t heads, int64_t window_, Rng& rng)
        : norm1(dim), norm2(dim), attn(dim, heads, rng),
          mlp(dim, 4 * dim, dim, rng), window(window_) {}

    // Window-major gather order over a grid padded up to a window multiple;
    // padded cells point at the sentinel row (index g*g).
    static std::vector<int64_t> window_order(int64_t g, int64_t w) {
        const int64_t gp = (g + w - 1) / w * w, nw = gp / w;
        std::vector<int64_t> order;
        order.reserve((size_t)(gp * gp));
        for (int64_t wy = 0; wy < nw; ++wy)
            for (int64_t wx = 0; wx < nw; ++wx)
                for (int64_t iy = 0; iy < w; ++iy)
                    for (int64_t ix = 0; ix < w; ++ix) {
                        const int64_t r = wy * w + iy, c = wx * w + ix;
                        order.push_back(r < g && c < g ? r * g + c : g * g);
                    }
        return order;
    }

    nn::Var attend(const nn::Var& h, int64_t g) const {
        if (window == 0 || g <= window) return attn.forward(h, h, h);
        const auto order = window_order(g, window);
        const int64_t ww = window * window, nwin = (int64_t)order.size() / ww;
        nn::Var padded = nn::concat_rows(
            {h, nn::make_leaf(nn::Tensor::zeros({1, h->value.dim(1)}))});
        nn::Var gathered = nn::index_rows(padded, order);
        std::vector<nn::Var> outs;
        outs.reserve((size_t)nwin);
        for (int64_t i = 0; i < nwin; ++i) {
            nn::Var win = nn::slice_rows(gathered, i * ww, ww);
            outs.push_back(attn.forward(win, win, win));
        }
        nn::Var merged = nn::concat_rows(outs);
        std::vector<int64_t> inv((size_t)(g * g));
        for (int64_t k = 0; k < (int64_t)order.size(); ++k)
            if (order[(size_t)k] < g * g) inv[(size_t)order[(size_t)k]] = k;
        return nn::index_rows(merged, inv);
    }

    nn::Var forward(const nn::Var& x, int64_t g) const {
        nn::Var h = nn::add(x, attend(norm1.forward(x), g));
        return nn::add(h, mlp.forward(norm2.forward(h)));
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        norm1.collect(nn::join_name(prefix, "norm1"), out);
        attn.collect(nn::join_name(prefix, "attn"), out);
        norm2.collect(nn::join_name(prefix, "norm2"), out);
        mlp.collect(nn::join_name(prefix, "mlp"), out);
    }
};

struct ImageEncoderVit : nn::Module {
    SamConfig cfg;
    nn::Conv2dLayer patch_embed;
    nn::Var pos_embed;  // [G*G, D]
    std::vector<VitBlock> blocks;
    nn::Conv2dLayer neck1, neck2;
    nn::LayerNorm2d neck_norm1, neck_norm2;

    ImageEncoderVit() = default;
    ImageEncoderVit(const SamConfig& cfg_, Rng& rng) : cfg(cfg_) {
        cfg.validate();
        const int64_t g = cfg.grid_size();
        patch_embed = nn::Conv2dLayer(3, cfg.encoder_dim, cfg.patch_size,
                                      cfg.patch_size, 0, rng);
        nn::Tensor pe({g * g, cfg.encoder_dim});
        nn::fill_normal(pe, 0.0, 0.02, rng);
        pos_embed = nn::make_var(std::move(pe), true);
        for (int64_t i = 0; i < cfg.encoder_depth; ++i) {
            const bool global =
                std::find(cfg.global_attn_layers.begin(), cfg.global_attn_layers.end(),
                          i) != cfg.global_attn_layers.end();
            blocks.emplace_back(cfg.encoder_dim, cfg.encoder_heads,
                                global ? 0 : cfg.window_size, rng);
        }
        neck1 = nn::Conv2dLayer(cfg.encoder_dim, cfg.embed_dim, 1, 1, 0, rng, false);
        neck_norm1 = nn::LayerNorm2d(cfg.embed_dim);
        neck2 = nn::Conv2dLayer(cfg.embed_dim, cfg.embed_dim, 3, 1, 1, rng, false);
        neck_norm2 = nn::LayerNorm2d(cfg.embed_dim);
    }

    // x [3,S,S] normalized pixels -> [E, G, G]
    nn::Var forward(const nn::Var& x) const {
        TS_CHECK(x->value.ndim() == 3 && x->value.dim(0) == 3 &&
                     x->value.dim(1) == cfg.image_size &&
                     x->value.dim(2) == cfg.image_size,
                 "image encoder: expected [3," + std::to_string(cfg.image_size) + "," +
                     std::to_string(cfg.image_size) + "] input");
        const int64_t g = cfg.grid_size();
        nn::Var t = nn::add(grid_to_tokens(patch_embed.forward(x)), pos_embed);
        for (const auto& b : blocks) t = b.forward(t, g);
        nn::Var grid = tokens_to_grid(t, g);
        grid = neck_norm1.forward(neck1.forward(grid));
        return neck_norm2.forward(neck2.forward(grid));
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        patch_embed.collect(nn::join_name(prefix, "patch_embed"), out);
        out.push_back({nn::join_name(prefix, "pos_embed"), pos_embed});
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(nn::join_name(prefix, "block" + std::to_string(i)), out);
        neck1.collect(nn::join_name(prefix, "neck1"), out);
        neck_norm1.collect(nn::join_name(prefix, "neck_norm1"), out);
        neck2.collect(nn::join_name(prefix, "neck2"), out);
        neck_norm2.collect(nn::join_name(prefix, "neck_norm2"), out);
    }
};

}  // namespace treeseg::sam
