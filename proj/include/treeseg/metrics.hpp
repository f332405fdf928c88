#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <vector>

#include "treeseg/detection.hpp"

// Evaluation: per-class average precision with greedy score-ordered matching
// and 101-point interpolation, mAP/wmAP aggregation, single-class collapse,
// and the per-ground-truth best-IoU mean (insensitive to false positives).

namespace treeseg {

inline std::vector<real_t> coco_iou_thresholds() {
    std::vector<real_t> t;
    for (int i = 0; i <= 9; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

inline std::vector<real_t> single_iou_threshold() { return {0.5}; }

struct ApOptions {
    std::vector<real_t> thresholds = coco_iou_thresholds();
    bool mask_basis = true;
};

namespace detail {

// Precision from cumulative TP/FP flags, integrated over 101 recall points
// with right-to-left max interpolation.
inline real_t interpolated_ap(const std::vector<bool>& tp_flags, int64_t n_gt) {
    if (n_gt <= 0) return 0.0;
    std::vector<real_t> precision, recall;
    int64_t tp = 0, fp = 0;
    for (bool t : tp_flags) {
        t ? ++tp : ++fp;
        precision.push_back((real_t)tp / (real_t)(tp + fp));
        recall.push_back((real_t)tp / (real_t)n_gt);
    }
    real_t ap = 0;
    for (int i = 0; i <= 100; ++i) {
        const real_t r = (real_t)i / 100.0;
        real_t best = 0;
        for (size_t k = 0; k < recall.size(); ++k)
            if (recall[k] >= r) best = std::max(best, precision[k]);
        ap += best;
    }
    return ap / 101.0;
}

// Stable score ordering: descending score, ties by input position.
inline std::vector<size_t> score_order(const Detections& dets,
                                       const std::vector<size_t>& subset) {
    std::vector<size_t> order = subset;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    return order;
}

}  // namespace detail

// AP for one class. Returns nullopt when the class has no ground truth
// (undefined, excluded from mAP by the caller).
inline std::optional<real_t> average_precision(const Detections& preds,
                                               const Detections& gts, int64_t class_id,
                                               const ApOptions& opt = {}) {
    std::vector<size_t> gt_idx, pred_idx;
    for (size_t i = 0; i < gts.size(); ++i)
        if (gts[i].class_id == class_id) gt_idx.push_back(i);
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i].class_id == class_id) pred_idx.push_back(i);
    if (gt_idx.empty()) return std::nullopt;

    const std::vector<size_t> order = detail::score_order(preds, pred_idx);

    real_t ap_sum = 0;
    for (real_t thr : opt.thresholds) {
        std::vector<bool> gt_matched(gt_idx.size(), false);
        std::vector<bool> tp_flags;
        tp_flags.reserve(order.size());
        for (size_t pi : order) {
            const Detection& p = preds[pi];
            real_t best_iou = 0;
            size_t best_g = gt_idx.size();
            for (size_t g = 0; g < gt_idx.size(); ++g) {
                if (gt_matched[g]) continue;
                const Detection& gt = gts[gt_idx[g]];
                if (gt.image_id != p.image_id) continue;
                const real_t iou = detection_iou(p, gt, opt.mask_basis);
                if (iou > best_iou) {
                    best_iou = iou;
                    best_g = g;
                }
            }
            if (best_g < gt_idx.size() && best_iou >= thr) {
                gt_matched[best_g] = true;
                tp_flags.push_back(true);
            } else {
                tp_flags.push_back(false);
            }
        }
        ap_sum += detail::interpolated_ap(tp_flags, (int64_t)gt_idx.size());
    }
    return ap_sum / (real_t)opt.thresholds.size();
}

// Unweighted mean when weights are absent, else the weighted sum. Weights
// must cover every evaluated class exactly.
inline real_t aggregate_ap(const std::map<int64_t, real_t>& per_class_ap,
                           const std::map<int64_t, real_t>* weights = nullptr) {
    TS_CHECK(!per_class_ap.empty(), "aggregate: no per-class AP values");
    if (!weights) {
        real_t s = 0;
        for (const auto& [c, ap] : per_class_ap) s += ap;
        return s / (real_t)per_class_ap.size();
    }
    real_t s = 0;
    for (const auto& [c, ap] : per_class_ap) {
        auto it = weights->find(c);
        TS_CHECK(it != weights->end(), "aggregate: missing weight for class " +
                                           std::to_string(c));
        s += it->second * ap;
    }
    return s;
}

// Per-ground-truth best IoU over all predictions in the same image, no
// exclusivity, scores ignored; mean over all ground truths.
inline real_t mean_iou(const Detections& preds, const Detections& gts,
                       bool mask_basis = true) {
    TS_CHECK(!gts.empty(), "mean_iou: no ground truth");
    real_t total = 0;
    for (const Detection& gt : gts) {
        real_t best = 0;
        for (const Detection& p : preds) {
            if (p.image_id != gt.image_id) continue;
            best = std::max(best, detection_iou(p, gt, mask_basis));
        }
        total += best;
    }
    return total / (real_t)gts.size();
}

inline Detections collapse_classes(const Detections& dets) {
    Detections out = dets;
    for (Detection& d : out) d.class_id = 0;
    return out;
}

// Everything relabeled to one class, then AP and mean IoU on the collapsed
// sets.
inline std::pair<real_t, real_t> single_class_collapse(const Detections& preds,
                                                       const Detections& gts,
                                                       const ApOptions& opt = {}) {
    if (gts.empty()) return {0.0, 0.0};
    const Detections cp = collapse_classes(preds);
    const Detections cg = collapse_classes(gts);
    const auto ap = average_precision(cp, cg, 0, opt);
    return {ap.value_or(0.0), mean_iou(cp, cg, opt.mask_basis)};
}

struct MetricsReport {
    std::map<int64_t, real_t> per_class_ap;  // classes present in GT only
    std::vector<int64_t> undefined_classes;  // requested but absent from GT
    real_t map = 0;
    std::optional<real_t> wmap;
    real_t single_class_map = 0;
    real_t miou = 0;
};

inline MetricsReport evaluate(const Detections& preds, const Detections& gts,
                              const std::vector<int64_t>& class_ids,
                              const std::map<int64_t, real_t>* test_weights = nullptr,
                              const ApOptions& opt = {}) {
    MetricsReport r;
    for (int64_t c : class_ids) {
        const auto ap = average_precision(preds, gts, c, opt);
        if (ap)
            r.per_class_ap[c] = *ap;
        else
            r.undefined_classes.push_back(c);
    }
    if (!r.per_class_ap.empty()) r.map = aggregate_ap(r.per_class_ap);
    if (test_weights && !r.per_class_ap.empty())
        r.wmap = aggregate_ap(r.per_class_ap, test_weights);
    const auto [sc_map, sc_miou] = single_class_collapse(preds, gts, opt);
    r.single_class_map = sc_map;
    r.miou = sc_miou;
    return r;
}

// Mean and standard error of the mean over repeated runs.
struct SeedStats {
    real_t mean = 0, stderr_mean = 0;
};

inline SeedStats seed_stats(const std::vector<real_t>& values) {
    TS_CHECK(!values.empty(), "seed_stats: no values");
    SeedStats s;
    for (real_t v : values) s.mean += v;
    s.mean /= (real_t)values.size();
    if (values.size() > 1) {
        real_t var = 0;
        for (real_t v : values) var += (v - s.mean) * (v - s.mean);
        var /= (real_t)(values.size() - 1);
        s.stderr_mean = std::sqrt(var / (real_t)values.size());
    }
    return s;
}

}  // namespace treeseg
