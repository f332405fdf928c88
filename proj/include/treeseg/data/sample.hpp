#pragma once

#include <optional>
#include <vector>

#include "treeseg/dsmtools.hpp"
#include "treeseg/geometry.hpp"
#include "treeseg/nn/tensor.hpp"

namespace treeseg {

// One annotated instance on a tile, in tile pixel coordinates.
struct Instance {
    Box box;
    int64_t class_id = 0;
    BinaryMask mask;  // empty for box-only annotations

    bool has_mask() const { return mask.height > 0 && mask.width > 0; }
};

// One training/eval tile: RGB in 0..255, optional height channel, annotations.
struct Sample {
    nn::Tensor rgb;  // [3,S,S]
    std::optional<DsmChannel> dsm;
    std::vector<Instance> instances;
    int64_t image_id = 0;

    int64_t size() const { return rgb.ndim() == 3 ? rgb.dim(1) : 0; }

    void validate() const {
        TS_CHECK(rgb.ndim() == 3 && rgb.dim(0) == 3 && rgb.dim(1) == rgb.dim(2),
                 "sample: rgb must be [3,S,S]");
        if (dsm)
            TS_CHECK(dsm->height() == rgb.dim(1) && dsm->width() == rgb.dim(2),
                     "sample: DSM size must match rgb");
        for (const auto& inst : instances) {
            TS_CHECK(inst.box.area() > 0, "sample: instance box must have area");
            if (inst.has_mask())
                TS_CHECK(inst.mask.height == rgb.dim(1) && inst.mask.width == rgb.dim(2),
                         "sample: instance mask size must match rgb");
        }
    }
};

}  // namespace treeseg
