#pragma once

#include <optional>
#include <string>
#include <vector>

#include "treeseg/geometry.hpp"
#include "treeseg/nn/tensor.hpp"

// Georeferenced rasters, crown annotations, AOIs, and tiles. World<->pixel
// mapping uses the six-coefficient affine convention: world = origin +
// col*step_x + row*step_y.

namespace treeseg {

struct Geotransform {
    // world_x = c[0] + px*c[1] + py*c[2]; world_y = c[3] + px*c[4] + py*c[5]
    real_t c[6] = {0, 1, 0, 0, 0, 1};

    Point to_world(const Point& pixel) const {
        return {c[0] + pixel.x * c[1] + pixel.y * c[2],
                c[3] + pixel.x * c[4] + pixel.y * c[5]};
    }

    Point to_pixel(const Point& world) const {
        const real_t det = c[1] * c[5] - c[2] * c[4];
        TS_CHECK(det != 0, "geotransform: singular pixel->world map");
        const real_t dx = world.x - c[0], dy = world.y - c[3];
        return {(dx * c[5] - dy * c[2]) / det, (dy * c[1] - dx * c[4]) / det};
    }

    bool is_identity() const {
        return c[0] == 0 && c[1] == 1 && c[2] == 0 && c[3] == 0 && c[4] == 0 && c[5] == 1;
    }
};

inline Ring ring_to_pixel(const Ring& world, const Geotransform& gt) {
    Ring out;
    out.reserve(world.size());
    for (const Point& p : world) out.push_back(gt.to_pixel(p));
    return out;
}

struct Orthomosaic {
    std::string raster_id;
    std::vector<nn::Tensor> bands;  // 3 = RGB, 4 = RGB + DSM, each [H,W]
    real_t pixel_resolution = 1.0;  // meters per pixel
    real_t nodata_value = 0.0;
    Geotransform geotransform;

    int64_t height() const { return bands.empty() ? 0 : bands[0].dim(0); }
    int64_t width() const { return bands.empty() ? 0 : bands[0].dim(1); }
    bool has_dsm() const { return bands.size() == 4; }

    void validate() const {
        TS_CHECK(bands.size() == 3 || bands.size() == 4,
                 "orthomosaic: band count must be 3 or 4");
        TS_CHECK(pixel_resolution > 0, "orthomosaic: pixel_resolution must be > 0");
        for (const auto& b : bands) {
            TS_CHECK(b.ndim() == 2, "orthomosaic: bands must be [H,W]");
            TS_CHECK(b.dim(0) == height() && b.dim(1) == width(),
                     "orthomosaic: band dimensions differ");
        }
    }
};

struct CrownAnnotation {
    int64_t instance_id = 0;
    std::string class_label;
    Ring polygon;  // world coordinates

    void validate() const {
        TS_CHECK(polygon.size() >= 3, "annotation: polygon needs >= 3 vertices");
        TS_CHECK(polygon_area(polygon) > 0, "annotation: polygon area must be positive");
        TS_CHECK(is_simple_polygon(polygon), "annotation: polygon self-intersects");
    }
};

enum class AoiPurpose { include, exclude_mask };

struct Aoi {
    std::vector<Ring> polygons;  // world coordinates
    AoiPurpose purpose = AoiPurpose::include;

    void validate() const {
        TS_CHECK(!polygons.empty(), "aoi: empty multipolygon");
        for (const Ring& r : polygons) {
            TS_CHECK(r.size() >= 3, "aoi: degenerate polygon");
            TS_CHECK(polygon_area(r) > 0, "aoi: zero-area polygon");
        }
    }
};

enum class Split { train, val, test, unassigned };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        default: return "unassigned";
    }
}

inline Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    if (name == "unassigned") return Split::unassigned;
    TS_CHECK(false, "unknown split name: " + name);
    return Split::unassigned;
}

struct TileAnnotation {
    int64_t instance_id = 0;
    std::string class_label;
    Ring polygon;  // tile pixel coordinates
    real_t visibility_fraction = 1.0;

    BinaryMask mask(int64_t tile_size) const {
        return rasterize_polygon(polygon, tile_size, tile_size);
    }
};

struct Tile {
    std::string tile_id;
    int64_t origin_x = 0, origin_y = 0;
    int64_t size = 0;
    nn::Tensor image;               // [3,S,S]
    std::optional<nn::Tensor> dsm;  // [S,S]
    std::vector<uint8_t> valid;     // per pixel: 0 = nodata/AOI-masked black
    std::vector<TileAnnotation> annotations;
    Split split = Split::unassigned;
    real_t black_fraction = 0.0;
};

struct TileSet {
    std::vector<Tile> tiles;
    int64_t tile_size = 0;
    std::string raster_id;
};

}  // namespace treeseg
