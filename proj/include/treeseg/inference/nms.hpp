#pragma once

#include <algorithm>
#include <numeric>

#include "treeseg/detection.hpp"

namespace treeseg {

enum class OverlapBasis { box, mask };

struct NmsConfig {
    real_t score_threshold = 0.5;
    real_t iou_threshold = 0.5;
    bool class_agnostic = false;
    OverlapBasis overlap_basis = OverlapBasis::box;
};

// Greedy NMS: drop detections below the score threshold, then walk the rest
// in descending score (ties by input order) and suppress anything whose IoU
// with an already-kept detection exceeds iou_threshold. Suppression only
// applies within a class unless class_agnostic.
inline Detections nms(const Detections& dets, const NmsConfig& cfg) {
    TS_CHECK(cfg.score_threshold >= 0 && cfg.score_threshold <= 1, "nms: score threshold range");
    TS_CHECK(cfg.iou_threshold >= 0 && cfg.iou_threshold <= 1, "nms: iou threshold range");
    std::vector<size_t> order;
    for (size_t i = 0; i < dets.size(); ++i)
        if (dets[i].score >= cfg.score_threshold) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });

    const bool mask_basis = cfg.overlap_basis == OverlapBasis::mask;
    Detections kept;
    for (size_t i : order) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (!cfg.class_agnostic && k.class_id != dets[i].class_id) continue;
            if (detection_iou(dets[i], k, mask_basis) > cfg.iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(dets[i]);
    }
    return kept;
}

}  // namespace treeseg
