#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "treeseg/detectors/boxes.hpp"
#include "treeseg/detectors/rpn.hpp"
#include "treeseg/nn/modules.hpp"
#include "treeseg/sam/config.hpp"

namespace treeseg::prompter {

struct AnchorPrompterConfig {
    int64_t num_proposals = 16;       // instances emitted per tile
    int64_t tokens_per_instance = 2;  // sparse-prompt tokens per instance
    int64_t token_width = 0;          // 0 = the decoder's sparse-prompt width
    int64_t hidden_channels = 0;      // feature projection width, 0 = embed dim
    int64_t hidden_fc = 256;
    std::vector<real_t> anchor_sizes;  // image-pixel units; empty = derived
    std::vector<real_t> anchor_ratios = {0.5, 1.0, 2.0};
    int64_t pre_nms = 400;
    real_t rpn_nms_iou = 0.7;
    real_t score_threshold = 0.05;
    real_t nms_iou = 0.5;

    void validate() const {
        TS_CHECK(num_proposals > 0, "anchor prompter: zero proposals configured");
        TS_CHECK(tokens_per_instance > 0, "anchor prompter: need tokens per instance");
        TS_CHECK(hidden_fc > 0, "anchor prompter: hidden width");
        TS_CHECK(!anchor_ratios.empty(), "anchor prompter: anchor ratios");
    }
};

// Per-instance outputs produced from one embedding map: class logits over the
// schema classes (background lives only in the internal head), sparse-prompt
// token sequences sized for the mask decoder, and refined boxes.
struct PrompterOutput {
    nn::Var full_logits;              // [N, C+1], background last
    nn::Var class_logits;             // [N, C] foreground slice
    nn::Var box_deltas;               // [N, 4]
    std::vector<nn::Var> tokens;      // per instance [K, E]
    std::vector<Box> proposals;       // image coords, pre-refinement
    std::vector<Box> boxes;           // refined, clipped

    int64_t count() const { return (int64_t)proposals.size(); }
};

// Region-proposal prompter over the frozen image embedding: projection convs,
// an RPN over embedding cells, then per-proposal heads emitting class logits
// and learned prompt tokens.
struct AnchorPrompter : nn::Module {
    AnchorPrompterConfig pcfg;
    int64_t embed_dim = 0, grid = 0, image_size = 0, num_classes = 0, hidden = 0;
    nn::Conv2dLayer proj1, proj2;
    nn::LayerNorm2d proj_norm1, proj_norm2;
    detectors::RpnHead rpn;
    nn::Linear fc1, fc2, cls_head, box_head, token_head;
    std::vector<Box> anchors;

    AnchorPrompter() = default;
    AnchorPrompter(const sam::SamConfig& sam_cfg, int64_t num_classes_,
                   const AnchorPrompterConfig& pcfg_, Rng& rng)
        : pcfg(pcfg_),
          embed_dim(sam_cfg.embed_dim),
          grid(sam_cfg.grid_size()),
          image_size(sam_cfg.image_size),
          num_classes(num_classes_) {
        pcfg.validate();
        TS_CHECK(num_classes >= 1, "anchor prompter: num_classes must be >= 1");
        TS_CHECK(pcfg.token_width == 0 || pcfg.token_width == embed_dim,
                 "anchor prompter: token width incompatible with the mask decoder");
        hidden = pcfg.hidden_channels > 0 ? pcfg.hidden_channels : embed_dim;
        proj1 = nn::Conv2dLayer(embed_dim, hidden, 3, 1, 1, rng);
        proj2 = nn::Conv2dLayer(hidden, hidden, 3, 1, 1, rng);
        proj_norm1 = nn::LayerNorm2d(hidden);
        proj_norm2 = nn::LayerNorm2d(hidden);

        std::vector<real_t> sizes = pcfg.anchor_sizes;
        if (sizes.empty()) {
            const real_t s = (real_t)image_size;
            sizes = {s / 8, s / 4, s / 2};
        }
        const int64_t a = (int64_t)(sizes.size() * pcfg.anchor_ratios.size());
        {
            Rng r = rng.fork(1);
            rpn = detectors::RpnHead(hidden, a, r);
        }
        const real_t stride = (real_t)image_size / (real_t)grid;
        anchors = detectors::make_anchor_grid(grid, grid, stride, sizes,
                                              pcfg.anchor_ratios);

        Rng r = rng.fork(2);
        fc1 = nn::Linear(hidden * 49, pcfg.hidden_fc, r);
        fc2 = nn::Linear(pcfg.hidden_fc, pcfg.hidden_fc, r);
        cls_head = nn::Linear(pcfg.hidden_fc, num_classes + 1, r);
        box_head = nn::Linear(pcfg.hidden_fc, 4, r);
        token_head = nn::Linear(pcfg.hidden_fc, pcfg.tokens_per_instance * embed_dim, r);
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        proj1.collect(nn::join_name(prefix, "proj1"), out);
        proj_norm1.collect(nn::join_name(prefix, "proj_norm1"), out);
        proj2.collect(nn::join_name(prefix, "proj2"), out);
        proj_norm2.collect(nn::join_name(prefix, "proj_norm2"), out);
        rpn.collect(nn::join_name(prefix, "rpn"), out);
        fc1.collect(nn::join_name(prefix, "fc1"), out);
        fc2.collect(nn::join_name(prefix, "fc2"), out);
        cls_head.collect(nn::join_name(prefix, "cls_head"), out);
        box_head.collect(nn::join_name(prefix, "box_head"), out);
        token_head.collect(nn::join_name(prefix, "token_head"), out);
    }

    nn::Var project(const nn::Var& image_emb) const {
        TS_CHECK(image_emb->value.ndim() == 3 && image_emb->value.dim(0) == embed_dim &&
                     image_emb->value.dim(1) == grid && image_emb->value.dim(2) == grid,
                 "anchor prompter: embedding shape mismatch");
        nn::Var y = nn::relu(proj_norm1.forward(proj1.forward(image_emb)));
        return nn::relu(proj_norm2.forward(proj2.forward(y)));
    }

    std::vector<Box> propose(const nn::Tensor& obj, const nn::Tensor& deltas,
                             const std::vector<Box>& extra) const {
        const int64_t n = (int64_t)anchors.size(), hw = grid * grid;
        std::vector<int64_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int64_t a, int64_t b) { return obj[a] > obj[b]; });
        if ((int64_t)order.size() > pcfg.pre_nms) order.resize((size_t)pcfg.pre_nms);

        std::vector<Box> cand;
        std::vector<real_t> scores;
        for (int64_t i : order) {
            const int64_t a = i / hw, cell = i % hw;
            const Box b = detectors::decode_box_deltas(
                anchors[(size_t)i], deltas[(a * 4 + 0) * hw + cell],
                deltas[(a * 4 + 1) * hw + cell], deltas[(a * 4 + 2) * hw + cell],
                deltas[(a * 4 + 3) * hw + cell], (real_t)image_size);
            if (b.width() < 1 || b.height() < 1) continue;
            cand.push_back(b);
            scores.push_back(obj[i]);
        }
        std::vector<Box> out;
        for (int64_t k : detectors::box_nms_indices(cand, scores, pcfg.rpn_nms_iou,
                                                    pcfg.num_proposals))
            out.push_back(cand[(size_t)k]);
        for (const Box& b : extra) out.push_back(b);
        return out;
    }

    PrompterOutput instances_for(const nn::Var& feat,
                                 const std::vector<Box>& proposals) const {
        PrompterOutput out;
        out.proposals = proposals;
        if (proposals.empty()) return out;
        const int64_t n = (int64_t)proposals.size();

        nn::Tensor bt({n, 4});
        for (int64_t i = 0; i < n; ++i) {
            bt[i * 4 + 0] = proposals[(size_t)i].x0;
            bt[i * 4 + 1] = proposals[(size_t)i].y0;
            bt[i * 4 + 2] = proposals[(size_t)i].x1;
            bt[i * 4 + 3] = proposals[(size_t)i].y1;
        }
        const real_t scale = (real_t)grid / (real_t)image_size;
        nn::Var h = nn::reshape(nn::roi_align(feat, bt, 7, scale), {n, hidden * 49});
        h = nn::relu(fc1.forward(h));
        h = nn::relu(fc2.forward(h));

        out.full_logits = cls_head.forward(h);
        out.class_logits = gather_foreground(out.full_logits);
        out.box_deltas = box_head.forward(h);
        const nn::Var tokens = token_head.forward(h);
        for (int64_t i = 0; i < n; ++i)
            out.tokens.push_back(nn::reshape(
                nn::slice_rows(tokens, i, 1), {pcfg.tokens_per_instance, embed_dim}));

        for (int64_t i = 0; i < n; ++i)
            out.boxes.push_back(detectors::decode_box_deltas(
                proposals[(size_t)i], out.box_deltas->value[i * 4 + 0],
                out.box_deltas->value[i * 4 + 1], out.box_deltas->value[i * 4 + 2],
                out.box_deltas->value[i * 4 + 3], (real_t)image_size));
        return out;
    }

    nn::Var gather_foreground(const nn::Var& full) const {
        const int64_t n = full->value.dim(0), w = num_classes + 1;
        std::vector<int64_t> idx;
        idx.reserve((size_t)(n * num_classes));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < num_classes; ++c) idx.push_back(i * w + c);
        return detectors::gather_elements(full, idx, num_classes);
    }
};

}  // namespace treeseg::prompter
