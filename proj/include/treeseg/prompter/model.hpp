#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "treeseg/data/sample.hpp"
#include "treeseg/detection.hpp"
#include "treeseg/dsmtools.hpp"
#include "treeseg/inference/nms.hpp"
#include "treeseg/loss_bundle.hpp"
#include "treeseg/prompter/anchor.hpp"
#include "treeseg/prompter/dsm_encoder.hpp"
#include "treeseg/sam/model.hpp"

namespace treeseg::prompter {

// Prompt-learning variants over a frozen segmenter. rsprompter uses the image
// embedding alone; the balsam family adds a height-channel embedding, wired
// per kind: balsam feeds the prompter from the image embedding and the mask
// decoder from the fused one, variant_a feeds both from the fused embedding,
// variant_b feeds only the prompter from it.
enum class PrompterKind { rsprompter, balsam, balsam_a, balsam_b };

inline bool uses_dsm(PrompterKind k) { return k != PrompterKind::rsprompter; }

inline std::string kind_name(PrompterKind k) {
    switch (k) {
        case PrompterKind::rsprompter: return "rsprompter";
        case PrompterKind::balsam: return "balsam";
        case PrompterKind::balsam_a: return "balsam-a";
        default: return "balsam-b";
    }
}

inline PrompterKind kind_from_name(const std::string& name) {
    if (name == "rsprompter") return PrompterKind::rsprompter;
    if (name == "balsam") return PrompterKind::balsam;
    if (name == "balsam-a") return PrompterKind::balsam_a;
    if (name == "balsam-b") return PrompterKind::balsam_b;
    TS_CHECK(false, "prompter: unknown kind '" + name + "'");
}

// Element-wise sum of two embedding maps; the fusion itself has no weights.
inline nn::Var fuse(const nn::Var& a, const nn::Var& b) {
    TS_CHECK(a->value.shape() == b->value.shape(),
             "fuse: embedding shapes differ (" + nn::shape_str(a->value.shape()) +
                 " vs " + nn::shape_str(b->value.shape()) + ")");
    return nn::add(a, b);
}

struct PrompterModelConfig {
    PrompterKind kind = PrompterKind::rsprompter;
    int64_t num_classes = 1;
    AnchorPrompterConfig anchor;
    DsmPromptEncoderSpec dsm;
    // alternative dense-branch reading: keep the decoder's image input
    // unfused and add the height embedding to the no-mask dense prompt
    bool dense_injection = false;
};

struct PrompterModel : nn::Module {
    const sam::SamModel* sam = nullptr;
    PrompterModelConfig cfg;
    AnchorPrompter anchor;
    DsmPromptEncoder dsm_encoder;

    PrompterModel() = default;
    PrompterModel(const sam::SamModel* sam_, const PrompterModelConfig& cfg_,
                  uint64_t seed = 2917)
        : sam(sam_), cfg(cfg_) {
        TS_CHECK(sam != nullptr, "prompter: needs a segmenter to prompt");
        TS_CHECK(cfg.num_classes >= 1, "prompter: num_classes must be >= 1");
        Rng rng(seed);
        {
            Rng r = rng.fork(0);
            anchor = AnchorPrompter(sam->cfg, cfg.num_classes, cfg.anchor, r);
        }
        if (uses_dsm(cfg.kind)) {
            cfg.dsm.validate();
            TS_CHECK(cfg.dsm.total_stride() == sam->cfg.patch_size,
                     "prompter: DSM encoder stride must match the image-encoder "
                     "patch size");
            TS_CHECK(cfg.dsm.out_channels == sam->cfg.embed_dim,
                     "prompter: DSM encoder channels must match the embedding");
            Rng r = rng.fork(1);
            dsm_encoder = DsmPromptEncoder(cfg.dsm, r);
        }
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        anchor.collect(nn::join_name(prefix, "anchor"), out);
        if (uses_dsm(cfg.kind))
            dsm_encoder.collect(nn::join_name(prefix, "dsm_encoder"), out);
    }

    struct Embeddings {
        nn::Var prompter_emb;  // input to the anchor prompter
        nn::Var decoder_emb;   // image input to the mask decoder
        nn::Var dense;         // dense-prompt override, null = learned default
    };

    Embeddings embeddings_for(const Sample& sample) const {
        sample.validate();
        TS_CHECK(sample.size() == sam->cfg.image_size,
                 "prompter: tile size does not match the segmenter");
        const nn::Var image_emb = sam->encode_image(sample.rgb).feat;

        Embeddings e;
        e.prompter_emb = image_emb;
        e.decoder_emb = image_emb;
        if (!uses_dsm(cfg.kind)) return e;

        TS_CHECK(sample.dsm.has_value(), "prompter: tile has no DSM channel");
        const DsmChannel norm = normalize_dsm(*sample.dsm);
        const int64_t s = sample.size();
        nn::Tensor plane({1, s, s});
        std::copy(norm.values.data(), norm.values.data() + s * s, plane.data());
        const nn::Var dsm_feat = dsm_encoder.forward(nn::make_leaf(std::move(plane)));
        const nn::Var fused = fuse(image_emb, dsm_feat);

        if (cfg.kind == PrompterKind::balsam_a || cfg.kind == PrompterKind::balsam_b)
            e.prompter_emb = fused;
        if (cfg.kind == PrompterKind::balsam || cfg.kind == PrompterKind::balsam_a) {
            if (cfg.dense_injection)
                e.dense = nn::add(sam->prompt_encoder.no_mask_dense(), dsm_feat);
            else
                e.decoder_emb = fused;
        }
        return e;
    }

    struct InstanceMask {
        nn::Var logits;  // [1, S, S]
        nn::Var iou;     // [M], row 0 scores the emitted mask
    };

    // decoder's single-mask output for one instance, upsampled to tile size
    InstanceMask instance_mask(const Embeddings& e, const nn::Var& tokens) const {
        const sam::DecoderOutput out = sam->decode(e.decoder_emb, tokens, e.dense);
        const int64_t m = out.mask_logits->value.dim(1);
        const nn::Var row = nn::reshape(
            nn::slice_rows(
                nn::reshape(out.mask_logits,
                            {out.mask_logits->value.dim(0), m * m}),
                0, 1),
            {1, m, m});
        return {nn::bilinear_resize(row, sam->cfg.image_size, sam->cfg.image_size),
                out.iou_pred};
    }

    LossBundle compute_losses(const Sample& sample) const {
        const Embeddings e = embeddings_for(sample);
        const nn::Var feat = anchor.project(e.prompter_emb);
        const detectors::RpnHead::Out rp = anchor.rpn.forward(feat);
        const int64_t hw = anchor.grid * anchor.grid;

        std::vector<Box> gt_boxes;
        for (const auto& inst : sample.instances) gt_boxes.push_back(inst.box);

        LossBundle bundle;
        const nn::Var zero = nn::make_leaf(nn::Tensor::scalar(0.0));

        const detectors::BoxMatch am =
            detectors::match_boxes(anchor.anchors, gt_boxes, 0.7, 0.3, true);
        std::vector<int64_t> pos_idx, neg_idx;
        for (size_t i = 0; i < anchor.anchors.size(); ++i) {
            if (am.label[i] == 1) pos_idx.push_back((int64_t)i);
            else if (am.label[i] == 0) neg_idx.push_back((int64_t)i);
        }
        nn::Var rpn_obj = zero;
        if (!pos_idx.empty() && !neg_idx.empty()) {
            const nn::Var po = detectors::gather_elements(rp.objectness, pos_idx, 1);
            const nn::Var ng = detectors::gather_elements(rp.objectness, neg_idx, 1);
            rpn_obj = nn::scale(
                nn::add(nn::bce_with_logits_mean(
                            po, nn::Tensor::ones({(int64_t)pos_idx.size(), 1})),
                        nn::bce_with_logits_mean(
                            ng, nn::Tensor::zeros({(int64_t)neg_idx.size(), 1}))),
                0.5);
        } else if (!neg_idx.empty()) {
            rpn_obj = nn::bce_with_logits_mean(
                detectors::gather_elements(rp.objectness, neg_idx, 1),
                nn::Tensor::zeros({(int64_t)neg_idx.size(), 1}));
        }

        nn::Var rpn_box = zero;
        if (!pos_idx.empty()) {
            std::vector<int64_t> didx;
            nn::Tensor targets({(int64_t)pos_idx.size(), 4});
            for (size_t p = 0; p < pos_idx.size(); ++p) {
                const int64_t i = pos_idx[p], a = i / hw, cell = i % hw;
                for (int64_t c = 0; c < 4; ++c) didx.push_back((a * 4 + c) * hw + cell);
                const auto t = detectors::encode_box_deltas(
                    anchor.anchors[(size_t)i],
                    gt_boxes[(size_t)am.gt_index[(size_t)i]]);
                for (int64_t c = 0; c < 4; ++c) targets[(int64_t)p * 4 + c] = t[(size_t)c];
            }
            rpn_box = nn::smooth_l1_mean(
                detectors::gather_elements(rp.deltas, didx, 4), targets, 1.0 / 9.0);
        }

        const std::vector<Box> proposals =
            anchor.propose(rp.objectness->value, rp.deltas->value, gt_boxes);

        nn::Var cls_loss = zero, box_loss = zero, mask_loss = zero;
        if (!proposals.empty()) {
            const detectors::BoxMatch pm =
                detectors::match_boxes(proposals, gt_boxes, 0.5, 0.5, false);
            const PrompterOutput inst = anchor.instances_for(feat, proposals);

            std::vector<int64_t> labels(proposals.size(), cfg.num_classes);
            std::vector<int64_t> fg;
            for (size_t i = 0; i < proposals.size(); ++i)
                if (pm.label[i] == 1) {
                    labels[i] = sample.instances[(size_t)pm.gt_index[i]].class_id;
                    TS_CHECK(labels[i] >= 0 && labels[i] < cfg.num_classes,
                             "prompter: instance class out of range");
                    fg.push_back((int64_t)i);
                }
            cls_loss = nn::cross_entropy_logits(inst.full_logits, labels);

            if (!fg.empty()) {
                std::vector<int64_t> didx;
                nn::Tensor targets({(int64_t)fg.size(), 4});
                for (size_t p = 0; p < fg.size(); ++p) {
                    const int64_t i = fg[p];
                    for (int64_t j = 0; j < 4; ++j) didx.push_back(i * 4 + j);
                    const auto t = detectors::encode_box_deltas(
                        proposals[(size_t)i], gt_boxes[(size_t)pm.gt_index[(size_t)i]]);
                    for (int64_t j = 0; j < 4; ++j)
                        targets[(int64_t)p * 4 + j] = t[(size_t)j];
                }
                box_loss = nn::smooth_l1_mean(
                    detectors::gather_elements(inst.box_deltas, didx, 4), targets);

                const int64_t s = sam->cfg.image_size;
                nn::Var acc = zero;
                for (int64_t i : fg) {
                    const Instance& gt =
                        sample.instances[(size_t)pm.gt_index[(size_t)i]];
                    TS_CHECK(gt.has_mask(), "prompter: mask training needs instance masks");
                    const nn::Var logits = nn::reshape(
                        instance_mask(e, inst.tokens[(size_t)i]).logits, {1, s * s});
                    nn::Tensor target({1, s * s});
                    for (int64_t p = 0; p < s * s; ++p)
                        target[p] = gt.mask.data[(size_t)p] ? 1.0 : 0.0;
                    acc = nn::add(acc, nn::bce_with_logits_mean(logits, target));
                }
                mask_loss = nn::scale(acc, 1.0 / (real_t)fg.size());
            }
        }

        bundle.total = nn::add(nn::add(nn::add(rpn_obj, rpn_box), cls_loss),
                               nn::add(box_loss, mask_loss));
        bundle.parts["rpn_objectness"] = rpn_obj->value[0];
        bundle.parts["rpn_box"] = rpn_box->value[0];
        bundle.parts["classification"] = cls_loss->value[0];
        bundle.parts["box"] = box_loss->value[0];
        bundle.parts["mask"] = mask_loss->value[0];
        return bundle;
    }

    Detections predict(const Sample& sample) const {
        nn::NoGradGuard guard;
        const Embeddings e = embeddings_for(sample);
        const nn::Var feat = anchor.project(e.prompter_emb);
        const detectors::RpnHead::Out rp = anchor.rpn.forward(feat);
        const std::vector<Box> proposals =
            anchor.propose(rp.objectness->value, rp.deltas->value, {});
        if (proposals.empty()) return {};
        const PrompterOutput inst = anchor.instances_for(feat, proposals);

        const nn::Var probs = nn::softmax_rows(inst.full_logits);
        const int64_t w = cfg.num_classes + 1;
        const int64_t s = sam->cfg.image_size;

        Detections dets;
        for (int64_t i = 0; i < inst.count(); ++i) {
            int64_t best = 0;
            real_t best_p = probs->value[i * w];
            for (int64_t c = 1; c < cfg.num_classes; ++c)
                if (probs->value[i * w + c] > best_p) {
                    best = c;
                    best_p = probs->value[i * w + c];
                }
            if (best_p < cfg.anchor.score_threshold) continue;
            const Box b = inst.boxes[(size_t)i];
            if (b.width() < 1 || b.height() < 1) continue;

            const InstanceMask im = instance_mask(e, inst.tokens[(size_t)i]);
            BinaryMask mask(s, s);
            for (int64_t p = 0; p < s * s; ++p)
                if (im.logits->value[p] > 0) mask.data[(size_t)p] = 1;

            Detection d;
            d.box = b;
            d.score = best_p;
            d.class_id = best;
            d.image_id = sample.image_id;
            d.mask = std::move(mask);
            d.mask_score = std::clamp(im.iou->value[0], (real_t)0.0, (real_t)1.0);
            dets.push_back(std::move(d));
        }

        NmsConfig nms_cfg;
        nms_cfg.score_threshold = cfg.anchor.score_threshold;
        nms_cfg.iou_threshold = cfg.anchor.nms_iou;
        nms_cfg.class_agnostic = false;
        nms_cfg.overlap_basis = OverlapBasis::box;
        return nms(dets, nms_cfg);
    }

    uint64_t checksum() const { return nn::params_checksum(named_params()); }
    uint64_t prompter_checksum() const {
        nn::NamedParams p;
        anchor.collect("anchor", p);
        return nn::params_checksum(p);
    }
    uint64_t dsm_checksum() const {
        nn::NamedParams p;
        dsm_encoder.collect("dsm_encoder", p);
        return nn::params_checksum(p);
    }
    uint64_t sam_checksum() const { return sam->checksum(); }

    nlohmann::ordered_json config_json() const {
        nlohmann::ordered_json j;
        j["kind"] = kind_name(cfg.kind);
        j["num_classes"] = cfg.num_classes;
        j["dense_injection"] = cfg.dense_injection;
        j["num_proposals"] = cfg.anchor.num_proposals;
        j["tokens_per_instance"] = cfg.anchor.tokens_per_instance;
        if (uses_dsm(cfg.kind)) {
            j["dsm"] = {{"k1", cfg.dsm.k1}, {"c1", cfg.dsm.c1},
                        {"k2", cfg.dsm.k2}, {"c2", cfg.dsm.c2},
                        {"out_channels", cfg.dsm.out_channels}};
        }
        return j;
    }

    void save(const std::string& path) const {
        nlohmann::ordered_json meta;
        meta["kind"] = "prompter";
        meta["config"] = config_json();
        meta["sam_checksum"] = sam_checksum();
        nn::save_params(path, named_params(), std::move(meta));
    }

    void load(const std::string& path) {
        const nn::Checkpoint ck = nn::Checkpoint::load(path);
        if (ck.meta.contains("sam_checksum"))
            TS_CHECK(ck.meta["sam_checksum"].get<uint64_t>() == sam_checksum(),
                     "prompter checkpoint: trained against different frozen "
                     "segmenter weights");
        nn::load_params(ck, named_params());
    }
};

}  // namespace treeseg::prompter
