#pragma once

#include <map>
#include <string>
#include <vector>

#include "treeseg/data/sample.hpp"
#include "treeseg/detection.hpp"
#include "treeseg/detectors/backbone.hpp"
#include "treeseg/detectors/boxes.hpp"
#include "treeseg/detectors/dsm_stack.hpp"
#include "treeseg/detectors/rpn.hpp"
#include "treeseg/inference/nms.hpp"
#include "treeseg/loss_bundle.hpp"
#include "treeseg/nn/serialize.hpp"

namespace treeseg::detectors {

struct DetectorModel : nn::Module {
    DetectorConfig cfg;
    Backbone backbone;
    DsmEncoderStack dsm_stack;
    RpnHead rpn;
    nn::Linear fc1, fc2, fc_extra, cls_head, box_head;
    nn::Conv2dLayer mask_conv1, mask_conv2, mask_pred;
    nn::GroupNormLayer mask_norm1, mask_norm2;
    nn::ConvTranspose2dLayer mask_up;
    std::vector<Box> anchors;

    DetectorModel() = default;
    explicit DetectorModel(const DetectorConfig& cfg_, uint64_t seed = 4021)
        : cfg(cfg_) {
        cfg.validate();
        Rng rng(seed);
        backbone = Backbone(cfg, rng);
        if (cfg.dsm_mode == DsmInputMode::encoder) {
            Rng r = rng.fork(100);
            dsm_stack = DsmEncoderStack(cfg.dsm_stack_c1, cfg.dsm_stack_c2, r);
        }
        const int64_t f = cfg.feature_channels();
        const int64_t a = (int64_t)(cfg.anchor_sizes.size() * cfg.anchor_ratios.size());
        {
            Rng r = rng.fork(101);
            rpn = RpnHead(f, a, r);
        }
        {
            Rng r = rng.fork(102);
            fc1 = nn::Linear(f * 49, cfg.head_width, r);
            fc2 = nn::Linear(cfg.head_width, cfg.head_width, r);
            if (cfg.extra_head_capacity)
                fc_extra = nn::Linear(cfg.head_width, cfg.head_width, r);
            cls_head = nn::Linear(cfg.head_width, cfg.num_classes + 1, r);
            box_head = nn::Linear(cfg.head_width, 4 * (cfg.num_classes + 1), r);
        }
        if (cfg.kind == DetectorKind::mask) {
            Rng r = rng.fork(103);
            mask_conv1 = nn::Conv2dLayer(f, f, 3, 1, 1, r);
            mask_conv2 = nn::Conv2dLayer(f, f, 3, 1, 1, r);
            mask_norm1 = nn::GroupNormLayer(f, BackboneStage::groups_for(f));
            mask_norm2 = nn::GroupNormLayer(f, BackboneStage::groups_for(f));
            mask_up = nn::ConvTranspose2dLayer(f, f, 2, 2, r);
            mask_pred = nn::Conv2dLayer(f, cfg.num_classes, 1, 1, 0, r);
        }
        const int64_t fh = cfg.image_size / cfg.stride();
        anchors = make_anchor_grid(fh, fh, (real_t)cfg.stride(), cfg.anchor_sizes,
                                   cfg.anchor_ratios);
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        backbone.collect(nn::join_name(prefix, "backbone"), out);
        if (cfg.dsm_mode == DsmInputMode::encoder)
            dsm_stack.collect(nn::join_name(prefix, "dsm_stack"), out);
        rpn.collect(nn::join_name(prefix, "rpn"), out);
        fc1.collect(nn::join_name(prefix, "fc1"), out);
        fc2.collect(nn::join_name(prefix, "fc2"), out);
        if (cfg.extra_head_capacity)
            fc_extra.collect(nn::join_name(prefix, "fc_extra"), out);
        cls_head.collect(nn::join_name(prefix, "cls_head"), out);
        box_head.collect(nn::join_name(prefix, "box_head"), out);
        if (cfg.kind == DetectorKind::mask) {
            mask_conv1.collect(nn::join_name(prefix, "mask_conv1"), out);
            mask_norm1.collect(nn::join_name(prefix, "mask_norm1"), out);
            mask_conv2.collect(nn::join_name(prefix, "mask_conv2"), out);
            mask_norm2.collect(nn::join_name(prefix, "mask_norm2"), out);
            mask_up.collect(nn::join_name(prefix, "mask_up"), out);
            mask_pred.collect(nn::join_name(prefix, "mask_pred"), out);
        }
    }

    // Static channels become a leaf; the encoder-mode channel keeps its graph.
    nn::Var assemble_input(const Sample& sample) const {
        TS_CHECK(sample.size() == cfg.image_size,
                 "detector: tile size does not match the model");
        const nn::Tensor base =
            stack_detector_input(sample, cfg.dsm_mode, cfg.gradient_clamp_percentile);
        TS_CHECK(base.dim(0) + (cfg.dsm_mode == DsmInputMode::encoder ? 1 : 0) ==
                     cfg.in_channels,
                 "detector: tile channels do not match the model");
        nn::Var x = nn::make_leaf(base);
        if (cfg.dsm_mode != DsmInputMode::encoder) return x;

        TS_CHECK(sample.dsm.has_value(), "detector input: DSM channel required");
        const DsmChannel norm = normalize_dsm(*sample.dsm);
        nn::Tensor d({1, cfg.image_size, cfg.image_size});
        for (int64_t i = 0; i < norm.values.numel(); ++i) d[i] = norm.values[i];
        const nn::Var enc = dsm_stack.forward(nn::make_leaf(std::move(d)));
        const int64_t hw = cfg.image_size * cfg.image_size;
        return nn::reshape(nn::concat_rows({nn::reshape(x, {3, hw}),
                                            nn::reshape(enc, {1, hw})}),
                           {4, cfg.image_size, cfg.image_size});
    }

    nn::Var features(const nn::Var& input) const { return backbone.forward(input); }

    struct RoiOut {
        nn::Var cls_logits;  // [N, C+1]
        nn::Var box_deltas;  // [N, 4(C+1)]
    };

    RoiOut roi_forward(const nn::Var& feat, const std::vector<Box>& boxes) const {
        nn::Tensor bt({(int64_t)boxes.size(), 4});
        for (size_t i = 0; i < boxes.size(); ++i) {
            bt[(int64_t)i * 4 + 0] = boxes[i].x0;
            bt[(int64_t)i * 4 + 1] = boxes[i].y0;
            bt[(int64_t)i * 4 + 2] = boxes[i].x1;
            bt[(int64_t)i * 4 + 3] = boxes[i].y1;
        }
        const real_t scale = 1.0 / (real_t)cfg.stride();
        nn::Var pooled = nn::roi_align(feat, bt, 7, scale);
        nn::Var h = nn::reshape(pooled,
                                {(int64_t)boxes.size(), cfg.feature_channels() * 49});
        h = nn::relu(fc1.forward(h));
        h = nn::relu(fc2.forward(h));
        if (cfg.extra_head_capacity) h = nn::relu(fc_extra.forward(h));
        return {cls_head.forward(h), box_head.forward(h)};
    }

    // [C,28,28] mask logits for one proposal
    nn::Var mask_forward(const nn::Var& feat, const Box& box) const {
        TS_CHECK(cfg.kind == DetectorKind::mask, "mask head on a faster-rcnn model");
        nn::Tensor bt({1, 4});
        bt[0] = box.x0;
        bt[1] = box.y0;
        bt[2] = box.x1;
        bt[3] = box.y1;
        const real_t scale = 1.0 / (real_t)cfg.stride();
        nn::Var x = nn::reshape(nn::roi_align(feat, bt, 14, scale),
                                {cfg.feature_channels(), 14, 14});
        x = nn::relu(mask_norm1.forward(mask_conv1.forward(x)));
        x = nn::relu(mask_norm2.forward(mask_conv2.forward(x)));
        x = nn::relu(mask_up.forward(x));
        return mask_pred.forward(x);
    }

    std::vector<Box> propose(const nn::Tensor& obj, const nn::Tensor& deltas,
                             int64_t post_nms) const {
        const int64_t n = (int64_t)anchors.size();
        const int64_t hw = (cfg.image_size / cfg.stride()) * (cfg.image_size / cfg.stride());
        std::vector<int64_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int64_t a, int64_t b) { return obj[a] > obj[b]; });
        if ((int64_t)order.size() > cfg.rpn_pre_nms) order.resize((size_t)cfg.rpn_pre_nms);

        std::vector<Box> cand;
        std::vector<real_t> cand_scores;
        for (int64_t i : order) {
            const int64_t a = i / hw, cell = i % hw;
            const Box b = decode_box_deltas(
                anchors[(size_t)i], deltas[(a * 4 + 0) * hw + cell],
                deltas[(a * 4 + 1) * hw + cell], deltas[(a * 4 + 2) * hw + cell],
                deltas[(a * 4 + 3) * hw + cell], (real_t)cfg.image_size);
            if (b.width() < 1 || b.height() < 1) continue;
            cand.push_back(b);
            cand_scores.push_back(obj[i]);
        }
        std::vector<Box> out;
        for (int64_t k : box_nms_indices(cand, cand_scores, cfg.rpn_nms_iou, post_nms))
            out.push_back(cand[(size_t)k]);
        return out;
    }

    LossBundle compute_losses(const Sample& sample) const {
        sample.validate();
        const nn::Var input = assemble_input(sample);
        const nn::Var feat = features(input);
        const RpnHead::Out rp = rpn.forward(feat);
        const int64_t hw = feat->value.dim(1) * feat->value.dim(2);

        std::vector<Box> gt_boxes;
        for (const auto& inst : sample.instances) gt_boxes.push_back(inst.box);

        LossBundle bundle;
        const nn::Var zero = nn::make_leaf(nn::Tensor::scalar(0.0));

        // region-proposal objectness and regression
        const BoxMatch am = match_boxes(anchors, gt_boxes, 0.7, 0.3, true);
        std::vector<int64_t> pos_idx, neg_idx;
        for (size_t i = 0; i < anchors.size(); ++i) {
            if (am.label[i] == 1) pos_idx.push_back((int64_t)i);
            else if (am.label[i] == 0) neg_idx.push_back((int64_t)i);
        }
        nn::Var rpn_obj = zero;
        if (!pos_idx.empty() && !neg_idx.empty()) {
            const nn::Var po = gather_elements(rp.objectness, pos_idx, 1);
            const nn::Var ng = gather_elements(rp.objectness, neg_idx, 1);
            rpn_obj = nn::scale(
                nn::add(nn::bce_with_logits_mean(
                            po, nn::Tensor::ones({(int64_t)pos_idx.size(), 1})),
                        nn::bce_with_logits_mean(
                            ng, nn::Tensor::zeros({(int64_t)neg_idx.size(), 1}))),
                0.5);
        } else if (!neg_idx.empty()) {
            rpn_obj = nn::bce_with_logits_mean(
                gather_elements(rp.objectness, neg_idx, 1),
                nn::Tensor::zeros({(int64_t)neg_idx.size(), 1}));
        }

        nn::Var rpn_box = zero;
        if (!pos_idx.empty()) {
            std::vector<int64_t> didx;
            nn::Tensor targets({(int64_t)pos_idx.size(), 4});
            for (size_t p = 0; p < pos_idx.size(); ++p) {
                const int64_t i = pos_idx[p], a = i / hw, cell = i % hw;
                for (int64_t c = 0; c < 4; ++c) didx.push_back((a * 4 + c) * hw + cell);
                const auto t = encode_box_deltas(
                    anchors[(size_t)i], gt_boxes[(size_t)am.gt_index[(size_t)i]]);
                for (int64_t c = 0; c < 4; ++c) targets[(int64_t)p * 4 + c] = t[(size_t)c];
            }
            rpn_box = nn::smooth_l1_mean(gather_elements(rp.deltas, didx, 4), targets,
                                         1.0 / 9.0);
        }

        // proposals for the second stage; annotated boxes ride along so the
        // heads always see positives early in training
        std::vector<Box> proposals =
            propose(rp.objectness->value, rp.deltas->value, cfg.rpn_post_nms_train);
        for (const Box& g : gt_boxes) proposals.push_back(g);

        nn::Var cls_loss = zero, box_loss = zero, mask_loss = zero;
        if (!proposals.empty()) {
            const BoxMatch pm = match_boxes(proposals, gt_boxes, 0.5, 0.5, false);
            const RoiOut roi = roi_forward(feat, proposals);

            std::vector<int64_t> labels(proposals.size(), cfg.num_classes);
            std::vector<int64_t> fg;
            for (size_t i = 0; i < proposals.size(); ++i)
                if (pm.label[i] == 1) {
                    labels[i] =
                        sample.instances[(size_t)pm.gt_index[i]].class_id;
                    TS_CHECK(labels[i] >= 0 && labels[i] < cfg.num_classes,
                             "detector: instance class out of range");
                    fg.push_back((int64_t)i);
                }
            cls_loss = nn::cross_entropy_logits(roi.cls_logits, labels);

            if (!fg.empty()) {
                const int64_t width = 4 * (cfg.num_classes + 1);
                std::vector<int64_t> didx;
                nn::Tensor targets({(int64_t)fg.size(), 4});
                for (size_t p = 0; p < fg.size(); ++p) {
                    const int64_t i = fg[p];
                    const int64_t c = labels[(size_t)i];
                    for (int64_t j = 0; j < 4; ++j)
                        didx.push_back(i * width + 4 * c + j);
                    const auto t = encode_box_deltas(
                        proposals[(size_t)i],
                        gt_boxes[(size_t)pm.gt_index[(size_t)i]]);
                    for (int64_t j = 0; j < 4; ++j)
                        targets[(int64_t)p * 4 + j] = t[(size_t)j];
                }
                box_loss =
                    nn::smooth_l1_mean(gather_elements(roi.box_deltas, didx, 4), targets);

                if (cfg.kind == DetectorKind::mask) {
                    nn::Var acc = zero;
                    for (int64_t i : fg) {
                        const Instance& inst =
                            sample.instances[(size_t)pm.gt_index[(size_t)i]];
                        TS_CHECK(inst.has_mask(),
                                 "detector: mask training needs instance masks");
                        const nn::Var logits = mask_forward(feat, proposals[(size_t)i]);
                        const nn::Var row = nn::slice_rows(
                            nn::reshape(logits, {cfg.num_classes, 28 * 28}),
                            labels[(size_t)i], 1);
                        acc = nn::add(acc, nn::bce_with_logits_mean(
                                               row, mask_target(inst.mask,
                                                                proposals[(size_t)i])));
                    }
                    mask_loss = nn::scale(acc, 1.0 / (real_t)fg.size());
                }
            }
        }

        bundle.total = nn::add(nn::add(nn::add(rpn_obj, rpn_box), cls_loss),
                               nn::add(box_loss, mask_loss));
        bundle.parts["rpn_objectness"] = rpn_obj->value[0];
        bundle.parts["rpn_box"] = rpn_box->value[0];
        bundle.parts["classification"] = cls_loss->value[0];
        bundle.parts["box"] = box_loss->value[0];
        if (cfg.kind == DetectorKind::mask) bundle.parts["mask"] = mask_loss->value[0];
        return bundle;
    }

    static nn::Tensor mask_target(const BinaryMask& gt, const Box& box) {
        nn::Tensor t({1, 28 * 28});
        for (int64_t j = 0; j < 28; ++j)
            for (int64_t i = 0; i < 28; ++i) {
                const real_t y = box.y0 + ((real_t)j + 0.5) / 28.0 * box.height();
                const real_t x = box.x0 + ((real_t)i + 0.5) / 28.0 * box.width();
                const int64_t yy =
                    std::clamp((int64_t)y, (int64_t)0, gt.height - 1);
                const int64_t xx = std::clamp((int64_t)x, (int64_t)0, gt.width - 1);
                t[j * 28 + i] = gt.at(yy, xx) ? 1.0 : 0.0;
            }
        return t;
    }

    Detections predict(const Sample& sample) const {
        nn::NoGradGuard guard;
        const nn::Var input = assemble_input(sample);
        const nn::Var feat = features(input);
        const RpnHead::Out rp = rpn.forward(feat);
        const std::vector<Box> proposals =
            propose(rp.objectness->value, rp.deltas->value, cfg.rpn_post_nms_eval);
        if (proposals.empty()) return {};

        const RoiOut roi = roi_forward(feat, proposals);
        const nn::Var probs = nn::softmax_rows(roi.cls_logits);
        const int64_t width = 4 * (cfg.num_classes + 1);

        Detections dets;
        for (size_t i = 0; i < proposals.size(); ++i) {
            int64_t best = 0;
            real_t best_p = probs->value[(int64_t)i * (cfg.num_classes + 1)];
            for (int64_t c = 1; c < cfg.num_classes; ++c) {
                const real_t p = probs->value[(int64_t)i * (cfg.num_classes + 1) + c];
                if (p > best_p) {
                    best = c;
                    best_p = p;
                }
            }
            if (best_p < cfg.score_threshold) continue;
            const int64_t off = (int64_t)i * width + 4 * best;
            const Box b = decode_box_deltas(
                proposals[i], roi.box_deltas->value[off + 0],
                roi.box_deltas->value[off + 1], roi.box_deltas->value[off + 2],
                roi.box_deltas->value[off + 3], (real_t)cfg.image_size);
            if (b.width() < 1 || b.height() < 1) continue;
            Detection d;
            d.box = b;
            d.score = best_p;
            d.class_id = best;
            d.image_id = sample.image_id;
            dets.push_back(std::move(d));
        }

        NmsConfig nms_cfg;
        nms_cfg.score_threshold = cfg.score_threshold;
        nms_cfg.iou_threshold = cfg.nms_iou;
        nms_cfg.class_agnostic = false;
        nms_cfg.overlap_basis = OverlapBasis::box;
        Detections kept = nms(dets, nms_cfg);

        if (cfg.kind == DetectorKind::mask)
            for (auto& d : kept) d.mask = paste_mask(feat, d);
        return kept;
    }

    BinaryMask paste_mask(const nn::Var& feat, const Detection& d) const {
        const nn::Var logits = mask_forward(feat, d.box);
        BinaryMask m(cfg.image_size, cfg.image_size);
        const int64_t y0 = std::max<int64_t>(0, (int64_t)d.box.y0);
        const int64_t x0 = std::max<int64_t>(0, (int64_t)d.box.x0);
        const int64_t y1 = std::min<int64_t>(cfg.image_size, (int64_t)std::ceil(d.box.y1));
        const int64_t x1 = std::min<int64_t>(cfg.image_size, (int64_t)std::ceil(d.box.x1));
        for (int64_t y = y0; y < y1; ++y)
            for (int64_t x = x0; x < x1; ++x) {
                const int64_t j = std::clamp(
                    (int64_t)(((real_t)y + 0.5 - d.box.y0) / d.box.height() * 28.0),
                    (int64_t)0, (int64_t)27);
                const int64_t i = std::clamp(
                    (int64_t)(((real_t)x + 0.5 - d.box.x0) / d.box.width() * 28.0),
                    (int64_t)0, (int64_t)27);
                const real_t logit =
                    logits->value[(d.class_id * 28 + j) * 28 + i];
                if (logit > 0) m.at(y, x) = 1;
            }
        return m;
    }

    uint64_t checksum() const { return nn::params_checksum(named_params()); }

    nlohmann::ordered_json config_json() const {
        nlohmann::ordered_json j;
        j["kind"] = cfg.kind == DetectorKind::mask ? "mask" : "faster";
        j["in_channels"] = cfg.in_channels;
        j["num_classes"] = cfg.num_classes;
        j["pretrained_backbone"] = cfg.pretrained_backbone;
        j["extra_head_capacity"] = cfg.extra_head_capacity;
        j["dsm_encoder_stack"] = cfg.dsm_encoder_stack;
        j["dsm_mode"] = cfg.dsm_mode == DsmInputMode::none        ? "none"
                        : cfg.dsm_mode == DsmInputMode::stack     ? "stack"
                        : cfg.dsm_mode == DsmInputMode::gradients ? "gradients"
                                                                  : "encoder";
        j["image_size"] = cfg.image_size;
        j["backbone_base"] = cfg.backbone_base;
        j["backbone_stages"] = cfg.backbone_stages;
        j["head_width"] = cfg.head_width;
        return j;
    }

    void save(const std::string& path) const {
        nlohmann::ordered_json meta;
        meta["kind"] = "detector";
        meta["config"] = config_json();
        nn::save_params(path, named_params(), meta);
        std::ofstream sidecar(path + ".json");
        TS_CHECK(sidecar.good(), "detector save: cannot write sidecar");
        sidecar << config_json().dump(2) << "\n";
    }

    void load(const std::string& path) { nn::load_params(path, named_params()); }
};

}  // namespace treeseg::detectors
