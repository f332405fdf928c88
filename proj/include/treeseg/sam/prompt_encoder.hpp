#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "treeseg/geometry.hpp"
#include "treeseg/nn/modules.hpp"
#include "treeseg/sam/config.hpp"

namespace treeseg::sam {

// Random-Fourier positional features over [0,1]^2 coordinates. The frequency
// matrix is a frozen buffer; it is registered with the parameters so
// checkpoints reproduce it, but it never trains.
struct FourierPositionEncoding : nn::Module {
    nn::Var gauss;  // [2, E/2]
    int64_t dim = 0;

    FourierPositionEncoding() = default;
    FourierPositionEncoding(int64_t embed_dim, Rng& rng) : dim(embed_dim) {
        nn::Tensor g({2, embed_dim / 2});
        nn::fill_normal(g, 0.0, 1.0, rng);
        gauss = nn::make_var(std::move(g), false);
    }

    // coords: normalized (x, y) pairs
    nn::Tensor encode(const std::vector<Point>& coords) const {
        const int64_t n = (int64_t)coords.size(), half = dim / 2;
        nn::Tensor out({n, dim});
        for (int64_t i = 0; i < n; ++i) {
            const real_t cx = 2.0 * coords[(size_t)i].x - 1.0;
            const real_t cy = 2.0 * coords[(size_t)i].y - 1.0;
            for (int64_t j = 0; j < half; ++j) {
                const real_t f = 2.0 * std::numbers::pi_v<real_t> *
                                 (cx * gauss->value[j] + cy * gauss->value[half + j]);
                out[i * dim + j] = std::sin(f);
                out[i * dim + half + j] = std::cos(f);
            }
        }
        return out;
    }

    // dense encoding over a g x g grid of cell centers, row-major [g*g, E]
    nn::Tensor encode_grid(int64_t g) const {
        std::vector<Point> coords;
        coords.reserve((size_t)(g * g));
        for (int64_t y = 0; y < g; ++y)
            for (int64_t x = 0; x < g; ++x)
                coords.push_back({((real_t)x + 0.5) / (real_t)g,
                                  ((real_t)y + 0.5) / (real_t)g});
        return encode(coords);
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        out.push_back({nn::join_name(prefix, "gauss"), gauss});
    }
};

struct PromptEncoder : nn::Module {
    SamConfig cfg;
    FourierPositionEncoding pe;
    nn::Embedding point_embeds;  // rows: negative, positive, box corner 0, box corner 1
    nn::Embedding not_a_point;
    nn::Embedding no_mask;
    nn::Conv2dLayer mask_conv1, mask_conv2, mask_conv3;
    nn::LayerNorm2d mask_norm1, mask_norm2;

    PromptEncoder() = default;
    PromptEncoder(const SamConfig& cfg_, Rng& rng)
        : cfg(cfg_), pe(cfg_.embed_dim, rng),
          point_embeds(4, cfg_.embed_dim, rng, 0.02),
          not_a_point(1, cfg_.embed_dim, rng, 0.02),
          no_mask(1, cfg_.embed_dim, rng, 0.02) {
        const int64_t chans = 16;
        mask_conv1 = nn::Conv2dLayer(1, chans / 4, 2, 2, 0, rng);
        mask_norm1 = nn::LayerNorm2d(chans / 4);
        mask_conv2 = nn::Conv2dLayer(chans / 4, chans, 2, 2, 0, rng);
        mask_norm2 = nn::LayerNorm2d(chans);
        mask_conv3 = nn::Conv2dLayer(chans, cfg_.embed_dim, 1, 1, 0, rng);
    }

    nn::Var point_row(Point p, bool positive) const {
        const real_t s = (real_t)cfg.image_size;
        nn::Tensor enc = pe.encode({{p.x / s, p.y / s}});
        return nn::add(nn::make_leaf(std::move(enc)),
                       point_embeds.forward({positive ? 1 : 0}));
    }

    // point prompts are padded with a learned not-a-point token when no box
    // accompanies them
    nn::Var encode_points(const std::vector<Point>& pts,
                          const std::vector<bool>& positive, bool pad) const {
        std::vector<nn::Var> rows;
        for (size_t i = 0; i < pts.size(); ++i)
            rows.push_back(point_row(pts[i], positive[i]));
        if (pad) rows.push_back(not_a_point.forward({0}));
        return nn::concat_rows(rows);
    }

    nn::Var encode_box(const Box& b) const {
        const real_t s = (real_t)cfg.image_size;
        nn::Tensor enc = pe.encode({{b.x0 / s, b.y0 / s}, {b.x1 / s, b.y1 / s}});
        return nn::add(nn::make_leaf(std::move(enc)), point_embeds.forward({2, 3}));
    }

    // mask prompt at 4x embedding resolution -> [E, g, g]
    nn::Var encode_mask(const nn::Var& mask) const {
        const int64_t m = cfg.mask_input_size();
        TS_CHECK(mask->value.ndim() == 3 && mask->value.dim(0) == 1 &&
                     mask->value.dim(1) == m && mask->value.dim(2) == m,
                 "prompt encoder: mask prompt must be [1," + std::to_string(m) + "," +
                     std::to_string(m) + "]");
        nn::Var h = nn::gelu(mask_norm1.forward(mask_conv1.forward(mask)));
        h = nn::gelu(mask_norm2.forward(mask_conv2.forward(h)));
        return mask_conv3.forward(h);
    }

    // dense embedding when no mask prompt is given: the learned no-mask row
    // broadcast over the grid
    nn::Var no_mask_dense() const {
        const int64_t g = cfg.grid_size(), e = cfg.embed_dim;
        nn::Tensor ones({g * g, 1});
        for (int64_t i = 0; i < g * g; ++i) ones[i] = 1.0;
        nn::Var sheet = nn::matmul(nn::make_leaf(std::move(ones)), no_mask.all());
        return nn::reshape(nn::transpose(sheet), {e, g, g});
    }

    nn::Tensor dense_position_grid() const { return pe.encode_grid(cfg.grid_size()); }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        pe.collect(nn::join_name(prefix, "pe"), out);
        point_embeds.collect(nn::join_name(prefix, "point_embeds"), out);
        not_a_point.collect(nn::join_name(prefix, "not_a_point"), out);
        no_mask.collect(nn::join_name(prefix, "no_mask"), out);
        mask_conv1.collect(nn::join_name(prefix, "mask_conv1"), out);
        mask_norm1.collect(nn::join_name(prefix, "mask_norm1"), out);
        mask_conv2.collect(nn::join_name(prefix, "mask_conv2"), out);
        mask_norm2.collect(nn::join_name(prefix, "mask_norm2"), out);
        mask_conv3.collect(nn::join_name(prefix, "mask_conv3"), out);
    }
};

}  // namespace treeseg::sam
