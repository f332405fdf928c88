#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "treeseg/detection.hpp"
#include "treeseg/dsmtools.hpp"
#include "treeseg/inference/nms.hpp"
#include "treeseg/sam/model.hpp"

namespace treeseg::sam {

struct PointPrompt {
    Point p;
    bool positive = true;
};

// Prompts for one tile. Each point and each box is an independent prompt
// instance; the optional mask applies to every prompt in the set (it rides
// the dense branch). Boxes are validated eagerly, coordinates lazily against
// the tile bound in validate().
struct PromptSet {
    std::vector<PointPrompt> points;
    std::vector<Box> boxes;
    std::optional<BinaryMask> dense_mask;

    void add_point(Point p, bool positive = true) { points.push_back({p, positive}); }

    void add_box(const Box& b) {
        TS_CHECK(b.area() > 0, "prompt set: box must have positive area");
        boxes.push_back(b);
    }

    int64_t prompt_count() const {
        return (int64_t)points.size() + (int64_t)boxes.size();
    }

    void validate(int64_t image_size) const {
        const real_t s = (real_t)image_size;
        for (const auto& pp : points)
            TS_CHECK(pp.p.x >= 0 && pp.p.x <= s && pp.p.y >= 0 && pp.p.y <= s,
                     "prompt set: point outside the tile");
        for (const auto& b : boxes)
            TS_CHECK(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= s && b.y1 <= s,
                     "prompt set: box outside the tile");
        if (dense_mask)
            TS_CHECK(dense_mask->height > 0 && dense_mask->width > 0,
                     "prompt set: empty dense mask");
    }
};

struct MaskPrediction {
    BinaryMask mask;
    real_t predicted_iou = 0;  // clamped to [0,1]
};

// Uniform pps x pps grid of foreground points at cell centers.
inline PromptSet automatic_grid_prompts(int64_t pps, int64_t image_size) {
    TS_CHECK(pps >= 1, "grid prompts: pps must be >= 1");
    PromptSet ps;
    for (int64_t i = 0; i < pps; ++i)
        for (int64_t j = 0; j < pps; ++j)
            ps.add_point({((real_t)j + 0.5) / (real_t)pps * (real_t)image_size,
                          ((real_t)i + 0.5) / (real_t)pps * (real_t)image_size});
    return ps;
}

// Common contract over the real segmenter and the deterministic test double.
// segment() returns at most one prediction per prompt, in prompt order
// (points first, then boxes); predictions whose mask thresholds to empty are
// dropped.
struct Segmenter {
    virtual ~Segmenter() = default;
    virtual int64_t tile_size() const = 0;
    virtual std::vector<MaskPrediction> segment(const nn::Tensor& rgb,
                                                const PromptSet& prompts) = 0;
};

struct SamSegmenter : Segmenter {
    const SamModel* model;
    int64_t prompt_batch = 64;  // prompts decoded per embedding reuse chunk

    explicit SamSegmenter(const SamModel& m, int64_t prompt_batch_ = 64)
        : model(&m), prompt_batch(prompt_batch_) {
        TS_CHECK(prompt_batch >= 1, "sam adapter: prompt batch must be >= 1");
    }

    int64_t tile_size() const override { return model->cfg.image_size; }

    std::vector<MaskPrediction> segment(const nn::Tensor& rgb,
                                        const PromptSet& prompts) override {
        TS_CHECK(prompts.prompt_count() > 0, "segment: empty prompt set");
        prompts.validate(model->cfg.image_size);
        const EmbeddingMap emb = model->encode_image(rgb);
        nn::NoGradGuard g;

        nn::Var dense = nullptr;
        if (prompts.dense_mask) dense = encode_dense(*prompts.dense_mask);

        std::vector<MaskPrediction> out;
        for (const auto& pp : prompts.points)
            decode_one(emb, model->prompt_encoder.encode_points(
                                {pp.p}, {pp.positive}, /*pad=*/true),
                       dense, out);
        for (const auto& b : prompts.boxes)
            decode_one(emb, model->prompt_encoder.encode_box(b), dense, out);
        return out;
    }

    nn::Var encode_dense(const BinaryMask& m) const {
        const int64_t s = model->cfg.mask_input_size();
        nn::Tensor t({1, s, s});
        for (int64_t y = 0; y < s; ++y)
            for (int64_t x = 0; x < s; ++x) {
                const int64_t sy = std::min<int64_t>(m.height - 1, y * m.height / s);
                const int64_t sx = std::min<int64_t>(m.width - 1, x * m.width / s);
                t[y * s + x] = m.at(sy, sx) ? 1.0 : 0.0;
            }
        return model->prompt_encoder.encode_mask(nn::make_leaf(std::move(t)));
    }

    // multimask decode reduced to the highest-predicted-iou output
    void decode_one(const EmbeddingMap& emb, const nn::Var& sparse, const nn::Var& dense,
                    std::vector<MaskPrediction>& out) const {
        const DecoderOutput dec = model->decode(emb.feat, sparse, dense);
        const int64_t m = model->decoder.num_mask_tokens();
        int64_t best = 1;
        for (int64_t i = 2; i < m; ++i)
            if (dec.iou_pred->value[i] > dec.iou_pred->value[best]) best = i;

        const int64_t s = model->cfg.image_size, lg = 4 * model->cfg.grid_size();
        nn::Var logits = nn::reshape(nn::slice_rows(
            nn::reshape(dec.mask_logits, {m, lg * lg}), best, 1), {1, lg, lg});
        nn::Var up = nn::bilinear_resize(logits, s, s);
        BinaryMask mask(s, s);
        for (int64_t i = 0; i < s * s; ++i) mask.data[(size_t)i] = up->value[i] > 0;
        if (mask.count() == 0) return;
        out.push_back(
            {std::move(mask), std::clamp<real_t>(dec.iou_pred->value[best], 0.0, 1.0)});
    }
};

// Deterministic analytic stand-in: points become fixed-radius disks, boxes
// become their filled rectangles, and predicted IoU is a hash of the prompt
// coordinates. Lets pipeline plumbing run without model weights.
struct MockSegmenter : Segmenter {
    int64_t size;
    real_t radius_frac;

    explicit MockSegmenter(int64_t tile, real_t radius_frac_ = 0.12)
        : size(tile), radius_frac(radius_frac_) {}

    int64_t tile_size() const override { return size; }

    static real_t coord_hash(real_t a, real_t b, real_t c, real_t d) {
        int64_t q[4] = {(int64_t)std::llround(a * 1000), (int64_t)std::llround(b * 1000),
                        (int64_t)std::llround(c * 1000), (int64_t)std::llround(d * 1000)};
        const uint64_t h = nn::fnv1a64(q, sizeof(q));
        return 0.55 + 0.4 * (real_t)(h % 10000) / 9999.0;
    }

    std::vector<MaskPrediction> segment(const nn::Tensor& rgb,
                                        const PromptSet& prompts) override {
        (void)rgb;
        TS_CHECK(prompts.prompt_count() > 0, "segment: empty prompt set");
        prompts.validate(size);
        std::vector<MaskPrediction> out;
        const real_t r = radius_frac * (real_t)size;
        for (const auto& pp : prompts.points) {
            BinaryMask m(size, size);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x) {
                    const real_t dx = (real_t)x + 0.5 - pp.p.x;
                    const real_t dy = (real_t)y + 0.5 - pp.p.y;
                    if (dx * dx + dy * dy <= r * r) m.at(y, x) = 1;
                }
            if (m.count() == 0) continue;
            out.push_back({std::move(m), coord_hash(pp.p.x, pp.p.y, -1, -1)});
        }
        for (const auto& b : prompts.boxes) {
            BinaryMask m(size, size);
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x)
                    if ((real_t)x + 0.5 >= b.x0 && (real_t)x + 0.5 < b.x1 &&
                        (real_t)y + 0.5 >= b.y0 && (real_t)y + 0.5 < b.y1)
                        m.at(y, x) = 1;
            if (m.count() == 0) continue;
            out.push_back({std::move(m), coord_hash(b.x0, b.y0, b.x1, b.y1)});
        }
        return out;
    }
};

inline Detection detection_from_prediction(MaskPrediction&& p, int64_t class_id,
                                           real_t score) {
    Detection d;
    d.box = mask_bounds(p.mask);
    d.mask_score = p.predicted_iou;
    d.mask = std::move(p.mask);
    d.score = score;
    d.class_id = class_id;
    return d;
}

inline NmsConfig sam_pipeline_nms() {
    NmsConfig cfg;
    cfg.score_threshold = 0.5;
    cfg.iou_threshold = 0.5;
    cfg.class_agnostic = false;
    cfg.overlap_basis = OverlapBasis::mask;
    return cfg;
}

// Automatic mask generation: a pps x pps point grid, one pseudo-class.
inline Detections run_sam_automatic(Segmenter& seg, const nn::Tensor& rgb, int64_t pps,
                                    const NmsConfig& nms_cfg = sam_pipeline_nms()) {
    const PromptSet prompts = automatic_grid_prompts(pps, seg.tile_size());
    auto preds = seg.segment(rgb, prompts);
    Detections dets;
    for (auto& p : preds) {
        const real_t score = p.predicted_iou;
        dets.push_back(detection_from_prediction(std::move(p), 0, score));
    }
    return nms(dets, nms_cfg);
}

// Treetop candidates from DSM local maxima become point prompts.
inline Detections run_sam_dsm_prompts(Segmenter& seg, const nn::Tensor& rgb,
                                      const DsmChannel* dsm, const PeakConfig& peak_cfg,
                                      const NmsConfig& nms_cfg = sam_pipeline_nms()) {
    TS_CHECK(dsm != nullptr, "sam dsm prompts: tile has no DSM channel");
    const DsmChannel norm = normalize_dsm(*dsm);
    const auto peaks = peak_prompts(norm, peak_cfg);
    if (peaks.empty()) return {};
    PromptSet prompts;
    for (const auto& pk : peaks)
        prompts.add_point({(real_t)pk.x + 0.5, (real_t)pk.y + 0.5});
    auto preds = seg.segment(rgb, prompts);
    Detections dets;
    for (auto& p : preds) {
        const real_t score = p.predicted_iou;
        dets.push_back(detection_from_prediction(std::move(p), 0, score));
    }
    return nms(dets, nms_cfg);
}

enum class DetPromptMode { boxes, boxes_masks };
enum class DetScoreMode { box, box_mask_average };

// Re-segment detector outputs through the promptable model. Classes pass
// through unchanged and instances map one-to-one onto the inputs; when the
// model returns an empty mask for a prompt the input instance is kept as-is
// (with predicted IoU 0 in averaged scoring) so nothing is dropped silently.
inline Detections run_detector_prompted(Segmenter& seg, const nn::Tensor& rgb,
                                        const Detections& detections_in,
                                        DetPromptMode mode, DetScoreMode score_mode) {
    Detections out;
    for (const Detection& din : detections_in) {
        TS_CHECK(din.box.area() > 0, "detector prompted: detection without a box");
        PromptSet prompts;
        prompts.add_box(din.box);
        if (mode == DetPromptMode::boxes_masks) {
            TS_CHECK(din.has_mask(),
                     "detector prompted: boxes+masks mode needs detection masks");
            prompts.dense_mask = din.mask;
        }
        auto preds = seg.segment(rgb, prompts);

        Detection d;
        d.class_id = din.class_id;
        d.image_id = din.image_id;
        real_t predicted_iou = 0;
        if (!preds.empty()) {
            predicted_iou = preds[0].predicted_iou;
            d.mask_score = predicted_iou;
            d.box = mask_bounds(preds[0].mask);
            d.mask = std::move(preds[0].mask);
        } else {
            d.box = din.box;
            d.mask = din.mask;
        }
        d.score = score_mode == DetScoreMode::box
                      ? din.score
                      : 0.5 * (din.score + predicted_iou);
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace treeseg::sam
