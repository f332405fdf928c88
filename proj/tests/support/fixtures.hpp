#pragma once

#include "treeseg/detection.hpp"

namespace treeseg::testing {

// Blob-ish random mask: a filled rectangle with per-pixel noise flips.
inline BinaryMask random_mask(int64_t h, int64_t w, Rng& rng, real_t flip_p = 0.05) {
    BinaryMask m(h, w);
    const int64_t x0 = rng.uniform_int(0, w - 2), y0 = rng.uniform_int(0, h - 2);
    const int64_t x1 = rng.uniform_int(x0 + 1, w - 1), y1 = rng.uniform_int(y0 + 1, h - 1);
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) m.at(y, x) = 1;
    for (int64_t i = 0; i < h * w; ++i)
        if (rng.bernoulli(flip_p)) m.data[(size_t)i] ^= 1;
    return m;
}

// Copy of a mask with pixels toggled near the boundary, for plausible
// partial-overlap predictions.
inline BinaryMask perturb_mask(const BinaryMask& src, Rng& rng, real_t flip_p = 0.15) {
    BinaryMask m = src;
    for (int64_t i = 0; i < m.height * m.width; ++i)
        if (rng.bernoulli(flip_p)) m.data[(size_t)i] ^= 1;
    return m;
}

inline Detection make_det(BinaryMask mask, real_t score, int64_t class_id,
                          int64_t image_id) {
    Detection d;
    d.mask = std::move(mask);
    d.box = mask_bounds(d.mask);
    d.score = score;
    d.class_id = class_id;
    d.image_id = image_id;
    return d;
}

struct ApFixture {
    Detections preds, gts;
};

// Up to max_gt ground truths on one or two images, predictions derived from
// them plus unrelated false positives. Some scores collide to exercise
// tie-breaking.
inline ApFixture random_ap_fixture(Rng& rng, int64_t max_gt = 5, int64_t max_pred = 5,
                                   int64_t n_classes = 2, int64_t mask_size = 16) {
    ApFixture f;
    const int64_t n_gt = rng.uniform_int(1, max_gt);
    const int64_t n_pred = rng.uniform_int(0, max_pred);
    for (int64_t i = 0; i < n_gt; ++i) {
        BinaryMask m = random_mask(mask_size, mask_size, rng);
        if (m.count() == 0) m.at(0, 0) = 1;
        f.gts.push_back(make_det(std::move(m), 1.0, rng.uniform_int(0, n_classes - 1),
                                 rng.uniform_int(0, 1)));
    }
    for (int64_t i = 0; i < n_pred; ++i) {
        const real_t score = rng.bernoulli(0.3) ? 0.5 : rng.uniform(0.05, 1.0);
        const int64_t cls = rng.uniform_int(0, n_classes - 1);
        if (!f.gts.empty() && rng.bernoulli(0.7)) {
            const auto& gt = f.gts[(size_t)rng.uniform_int(0, n_gt - 1)];
            f.preds.push_back(make_det(perturb_mask(gt.mask, rng), score,
                                       rng.bernoulli(0.8) ? gt.class_id : cls,
                                       gt.image_id));
        } else {
            f.preds.push_back(make_det(random_mask(mask_size, mask_size, rng), score, cls,
                                       rng.uniform_int(0, 1)));
        }
    }
    return f;
}

}  // namespace treeseg::testing
