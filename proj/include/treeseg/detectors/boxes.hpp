#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "treeseg/geometry.hpp"
#include "treeseg/nn/ops.hpp"

namespace treeseg::detectors {

// Anchors laid out anchor-major: index = a * (h*w) + y*w + x, matching the
// channel layout of the RPN conv outputs.
inline std::vector<Box> make_anchor_grid(int64_t feat_h, int64_t feat_w, real_t stride,
                                         const std::vector<real_t>& sizes,
                                         const std::vector<real_t>& ratios) {
    TS_CHECK(!sizes.empty() && !ratios.empty(), "anchors: need sizes and ratios");
    std::vector<Box> anchors;
    anchors.reserve((size_t)(feat_h * feat_w) * sizes.size() * ratios.size());
    for (real_t size : sizes)
        for (real_t ratio : ratios) {
            const real_t w = size / std::sqrt(ratio), h = size * std::sqrt(ratio);
            for (int64_t y = 0; y < feat_h; ++y)
                for (int64_t x = 0; x < feat_w; ++x) {
                    const real_t cx = ((real_t)x + 0.5) * stride;
                    const real_t cy = ((real_t)y + 0.5) * stride;
                    anchors.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
                }
        }
    return anchors;
}

// (dx, dy, dw, dh) parameterization relative to the anchor box.
inline std::array<real_t, 4> encode_box_deltas(const Box& anchor, const Box& target) {
    const real_t aw = anchor.width(), ah = anchor.height();
    TS_CHECK(aw > 0 && ah > 0, "box deltas: degenerate anchor");
    TS_CHECK(target.width() > 0 && target.height() > 0, "box deltas: degenerate target");
    const real_t acx = anchor.x0 + aw / 2, acy = anchor.y0 + ah / 2;
    const real_t tcx = target.x0 + target.width() / 2;
    const real_t tcy = target.y0 + target.height() / 2;
    return {(tcx - acx) / aw, (tcy - acy) / ah, std::log(target.width() / aw),
            std::log(target.height() / ah)};
}

inline Box decode_box_deltas(const Box& anchor, real_t dx, real_t dy, real_t dw,
                             real_t dh, real_t image_size) {
    const real_t aw = anchor.width(), ah = anchor.height();
    const real_t acx = anchor.x0 + aw / 2, acy = anchor.y0 + ah / 2;
    const real_t cx = acx + dx * aw, cy = acy + dy * ah;
    const real_t w = aw * std::exp(std::min(dw, (real_t)4.0));
    const real_t h = ah * std::exp(std::min(dh, (real_t)4.0));
    Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    b.x0 = std::clamp(b.x0, (real_t)0.0, image_size);
    b.y0 = std::clamp(b.y0, (real_t)0.0, image_size);
    b.x1 = std::clamp(b.x1, (real_t)0.0, image_size);
    b.y1 = std::clamp(b.y1, (real_t)0.0, image_size);
    return b;
}

struct BoxMatch {
    std::vector<int> label;          // 1 positive, 0 negative, -1 ignore
    std::vector<int64_t> gt_index;   // valid where label == 1
};

// IoU matcher with the usual low/high bands plus forced best-anchor-per-target
// assignment so every annotated instance gets at least one positive.
inline BoxMatch match_boxes(const std::vector<Box>& candidates,
                            const std::vector<Box>& targets, real_t pos_iou,
                            real_t neg_iou, bool force_best_per_target) {
    BoxMatch m;
    m.label.assign(candidates.size(), 0);
    m.gt_index.assign(candidates.size(), -1);
    if (targets.empty()) return m;

    std::vector<real_t> best_iou(candidates.size(), 0);
    std::vector<real_t> best_for_target(targets.size(), 0);
    for (size_t i = 0; i < candidates.size(); ++i)
        for (size_t t = 0; t < targets.size(); ++t) {
            const real_t iou = box_iou(candidates[i], targets[t]);
            if (iou > best_iou[i]) {
                best_iou[i] = iou;
                m.gt_index[i] = (int64_t)t;
            }
            best_for_target[t] = std::max(best_for_target[t], iou);
        }

    for (size_t i = 0; i < candidates.size(); ++i) {
        if (best_iou[i] >= pos_iou) {
            m.label[i] = 1;
        } else if (best_iou[i] >= neg_iou) {
            m.label[i] = -1;
            m.gt_index[i] = -1;
        } else {
            m.gt_index[i] = -1;
        }
    }

    if (force_best_per_target)
        for (size_t t = 0; t < targets.size(); ++t) {
            if (best_for_target[t] <= 0) continue;
            for (size_t i = 0; i < candidates.size(); ++i)
                if (box_iou(candidates[i], targets[t]) == best_for_target[t]) {
                    m.label[i] = 1;
                    m.gt_index[i] = (int64_t)t;
                }
        }
    return m;
}

// Greedy box NMS over (box, score) pairs; returns kept indices in descending
// score order, ties broken by input order.
inline std::vector<int64_t> box_nms_indices(const std::vector<Box>& boxes,
                                            const std::vector<real_t>& scores,
                                            real_t iou_threshold, int64_t max_keep) {
    TS_CHECK(boxes.size() == scores.size(), "box nms: size mismatch");
    std::vector<int64_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return scores[(size_t)a] > scores[(size_t)b];
    });
    std::vector<int64_t> keep;
    for (int64_t i : order) {
        if ((int64_t)keep.size() >= max_keep) break;
        bool ok = true;
        for (int64_t k : keep)
            if (box_iou(boxes[(size_t)i], boxes[(size_t)k]) > iou_threshold) {
                ok = false;
                break;
            }
        if (ok) keep.push_back(i);
    }
    return keep;
}

// Gathers arbitrary scalar positions of a Var into an [n/k, k] matrix while
// keeping the tape connected, via single-column row indexing.
inline nn::Var gather_elements(const nn::Var& x, const std::vector<int64_t>& idx,
                               int64_t cols) {
    TS_CHECK(cols > 0 && (int64_t)idx.size() % cols == 0, "gather: bad column count");
    nn::Var flat = nn::reshape(x, {x->value.numel(), 1});
    return nn::reshape(nn::index_rows(flat, idx), {(int64_t)idx.size() / cols, cols});
}

}  // namespace treeseg::detectors
