#pragma once

#include <optional>
#include <string>
#include <vector>

#include "treeseg/geometry.hpp"

namespace treeseg {

// One predicted or ground-truth instance. Masks are full-tile binary maps;
// the box is kept in sync (derived from the mask when the mask is primary).
struct Detection {
    Box box;
    real_t score = 1.0;
    int64_t class_id = 0;
    BinaryMask mask;  // may be empty when only boxes are in play
    int64_t image_id = 0;
    std::optional<real_t> mask_score;  // model's own mask quality estimate

    bool has_mask() const { return mask.height > 0 && mask.width > 0; }
};

using Detections = std::vector<Detection>;

inline real_t detection_iou(const Detection& a, const Detection& b, bool mask_basis) {
    if (mask_basis) {
        TS_CHECK(a.has_mask() && b.has_mask(), "detection_iou: mask basis needs masks");
        return mask_iou(a.mask, b.mask);
    }
    return box_iou(a.box, b.box);
}

}  // namespace treeseg
