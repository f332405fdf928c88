#pragma once

#include <string>
#include <vector>

#include "treeseg/nn/modules.hpp"
#include "treeseg/sam/config.hpp"
#include "treeseg/sam/encoder.hpp"

namespace treeseg::sam {

// Three-layer perceptron; hidden activations are rectified, output is linear.
struct TriMlp : nn::Module {
    nn::Linear fc1, fc2, fc3;

    TriMlp() = default;
    TriMlp(int64_t in, int64_t hidden, int64_t out, Rng& rng)
        : fc1(in, hidden, rng), fc2(hidden, hidden, rng), fc3(hidden, out, rng) {}

    nn::Var forward(const nn::Var& x) const {
        return fc3.forward(nn::relu(fc2.forward(nn::relu(fc1.forward(x)))));
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        fc1.collect(nn::join_name(prefix, "fc1"), out);
        fc2.collect(nn::join_name(prefix, "fc2"), out);
        fc3.collect(nn::join_name(prefix, "fc3"), out);
    }
};

// One round of token self-attention, token->image cross-attention, token MLP,
// and image->token cross-attention. Positional encodings are re-added to the
// attention inputs at every round; the first round skips them on the
// self-attention so the raw prompt tokens drive it.
struct TwoWayBlock : nn::Module {
    nn::MultiheadAttention self_attn, cross_t2i, cross_i2t;
    nn::LayerNorm norm1, norm2, norm3, norm4;
    nn::Mlp mlp;
    bool skip_first_pe = false;

    TwoWayBlock() = default;
    TwoWayBlock(int64_t dim, int64_t heads, int64_t mlp_dim, bool skip_first, Rng& rng)
        : self_attn(dim, heads, rng),
          cross_t2i(dim, heads, rng, dim / 2),
          cross_i2t(dim, heads, rng, dim / 2),
          norm1(dim), norm2(dim), norm3(dim), norm4(dim),
          mlp(dim, mlp_dim, dim, rng), skip_first_pe(skip_first) {}

    void forward(nn::Var& queries, nn::Var& keys, const nn::Var& query_pe,
                 const nn::Var& key_pe) const {
        if (skip_first_pe) {
            queries = self_attn.forward(queries, queries, queries);
        } else {
            nn::Var q = nn::add(queries, query_pe);
            queries = nn::add(queries, self_attn.forward(q, q, queries));
        }
        queries = norm1.forward(queries);

        nn::Var q = nn::add(queries, query_pe);
        nn::Var k = nn::add(keys, key_pe);
        queries = norm2.forward(nn::add(queries, cross_t2i.forward(q, k, keys)));

        queries = norm3.forward(nn::add(queries, mlp.forward(queries)));

        q = nn::add(queries, query_pe);
        k = nn::add(keys, key_pe);
        keys = norm4.forward(nn::add(keys, cross_i2t.forward(k, q, queries)));
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        self_attn.collect(nn::join_name(prefix, "self_attn"), out);
        cross_t2i.collect(nn::join_name(prefix, "cross_t2i"), out);
        cross_i2t.collect(nn::join_name(prefix, "cross_i2t"), out);
        norm1.collect(nn::join_name(prefix, "norm1"), out);
        norm2.collect(nn::join_name(prefix, "norm2"), out);
        norm3.collect(nn::join_name(prefix, "norm3"), out);
        norm4.collect(nn::join_name(prefix, "norm4"), out);
        mlp.collect(nn::join_name(prefix, "mlp"), out);
    }
};

struct DecoderOutput {
    nn::Var mask_logits;  // [M, 4g, 4g]
    nn::Var iou_pred;     // [M]
};

struct MaskDecoder : nn::Module {
    SamConfig cfg;
    nn::Embedding iou_token;    // [1, E]
    nn::Embedding mask_tokens;  // [M, E]; row 0 is the single-mask output
    std::vector<TwoWayBlock> blocks;
    nn::MultiheadAttention final_t2i;
    nn::LayerNorm final_norm;
    nn::ConvTranspose2dLayer up1, up2;
    nn::LayerNorm2d up_norm;
    std::vector<TriMlp> hyper_mlps;  // one per mask token
    TriMlp iou_head;

    MaskDecoder() = default;
    MaskDecoder(const SamConfig& cfg_, Rng& rng)
        : cfg(cfg_),
          iou_token(1, cfg_.embed_dim, rng, 0.02),
          mask_tokens(cfg_.num_multimask + 1, cfg_.embed_dim, rng, 0.02),
          final_t2i(cfg_.embed_dim, cfg_.decoder_heads, rng, cfg_.embed_dim / 2),
          final_norm(cfg_.embed_dim) {
        const int64_t e = cfg.embed_dim, m = num_mask_tokens();
        for (int64_t i = 0; i < cfg.decoder_depth; ++i)
            blocks.emplace_back(e, cfg.decoder_heads, cfg.decoder_mlp_dim, i == 0, rng);
        up1 = nn::ConvTranspose2dLayer(e, e / 4, 2, 2, rng);
        up_norm = nn::LayerNorm2d(e / 4);
        up2 = nn::ConvTranspose2dLayer(e / 4, e / 8, 2, 2, rng);
        for (int64_t i = 0; i < m; ++i) hyper_mlps.emplace_back(e, e, e / 8, rng);
        iou_head = TriMlp(e, e, m, rng);
    }

    int64_t num_mask_tokens() const { return cfg.num_multimask + 1; }

    // image_emb and dense [E,g,g]; image_pe [g*g,E]; sparse [N,E]
    DecoderOutput forward(const nn::Var& image_emb, const nn::Var& image_pe,
                          const nn::Var& sparse, const nn::Var& dense) const {
        const int64_t g = cfg.grid_size(), e = cfg.embed_dim, m = num_mask_tokens();
        TS_CHECK(image_emb->value.ndim() == 3 && image_emb->value.dim(0) == e &&
                     image_emb->value.dim(1) == g && image_emb->value.dim(2) == g,
                 "mask decoder: embedding must be [" + std::to_string(e) + "," +
                     std::to_string(g) + "," + std::to_string(g) + "]");
        TS_CHECK(dense->value.same_shape(image_emb->value),
                 "mask decoder: dense prompt shape mismatch");
        TS_CHECK(sparse->value.ndim() == 2 && sparse->value.dim(1) == e,
                 "mask decoder: sparse token width mismatch");

        nn::Var tokens =
            nn::concat_rows({iou_token.all(), mask_tokens.all(), sparse});
        nn::Var queries = tokens;
        nn::Var keys = grid_to_tokens(nn::add(image_emb, dense));
        for (const auto& b : blocks) b.forward(queries, keys, tokens, image_pe);
        nn::Var q = nn::add(queries, tokens);
        nn::Var k = nn::add(keys, image_pe);
        queries = final_norm.forward(nn::add(queries, final_t2i.forward(q, k, keys)));

        nn::Var src = tokens_to_grid(keys, g);
        nn::Var up = nn::gelu(up_norm.forward(up1.forward(src)));
        up = nn::gelu(up2.forward(up));  // [E/8, 2g, 2g] ... [E/8, 4g, 4g]
        up = nn::reshape(up, {e / 8, up->value.dim(1) * up->value.dim(2)});

        std::vector<nn::Var> hyper_rows;
        for (int64_t i = 0; i < m; ++i)
            hyper_rows.push_back(
                hyper_mlps[(size_t)i].forward(nn::slice_rows(queries, 1 + i, 1)));
        nn::Var masks = nn::matmul(nn::concat_rows(hyper_rows), up);
        masks = nn::reshape(masks, {m, 4 * g, 4 * g});
        nn::Var iou = nn::reshape(iou_head.forward(nn::slice_rows(queries, 0, 1)), {m});
        return {masks, iou};
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        iou_token.collect(nn::join_name(prefix, "iou_token"), out);
        mask_tokens.collect(nn::join_name(prefix, "mask_tokens"), out);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(nn::join_name(prefix, "block" + std::to_string(i)), out);
        final_t2i.collect(nn::join_name(prefix, "final_t2i"), out);
        final_norm.collect(nn::join_name(prefix, "final_norm"), out);
        up1.collect(nn::join_name(prefix, "up1"), out);
        up_norm.collect(nn::join_name(prefix, "up_norm"), out);
        up2.collect(nn::join_name(prefix, "up2"), out);
        for (size_t i = 0; i < hyper_mlps.size(); ++i)
            hyper_mlps[i].collect(nn::join_name(prefix, "hyper" + std::to_string(i)),
                                  out);
        iou_head.collect(nn::join_name(prefix, "iou_head"), out);
    }
};

}  // namespace treeseg::sam
