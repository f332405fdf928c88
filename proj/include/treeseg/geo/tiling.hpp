#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "treeseg/geo/raster.hpp"

// Sliding-window tiling with overlap, AOI masking, annotation clipping, tile
// filtering, and spatial split assignment.

namespace treeseg {

// Window starts along one axis: stride = tile_size*(1-overlap), final start
// snapped to the edge so the last window stays in bounds, duplicates removed.
inline std::vector<int64_t> tile_origins(int64_t extent, int64_t tile_size,
                                         real_t overlap) {
    TS_CHECK(tile_size >= 1, "tiling: tile_size must be >= 1");
    TS_CHECK(overlap >= 0 && overlap < 1, "tiling: overlap must be in [0,1)");
    TS_CHECK(extent >= tile_size, "tiling: raster too small");
    const int64_t stride =
        std::max<int64_t>(1, (int64_t)std::llround((real_t)tile_size * (1.0 - overlap)));
    std::vector<int64_t> origins;
    for (int64_t o = 0;; o += stride) {
        if (o + tile_size >= extent) {
            origins.push_back(extent - tile_size);
            break;
        }
        origins.push_back(o);
    }
    origins.erase(std::unique(origins.begin(), origins.end()), origins.end());
    return origins;
}

namespace detail {

// Union of rings rasterized over the full raster grid in pixel space.
inline BinaryMask rasterize_rings(const std::vector<Ring>& world_rings,
                                  const Geotransform& gt, int64_t height,
                                  int64_t width) {
    BinaryMask acc(height, width);
    for (const Ring& r : world_rings) {
        const BinaryMask m = rasterize_polygon(ring_to_pixel(r, gt), height, width);
        for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] |= m.data[i];
    }
    return acc;
}

}  // namespace detail

inline std::string make_tile_id(const std::string& raster_id, int64_t x, int64_t y) {
    return raster_id + "_" + std::to_string(x) + "_" + std::to_string(y);
}

// Cut overlapping windows out of the raster. Pixels outside an include-AOI
// (or inside an exclude one) are blacked out first; black_fraction counts
// pixels whose bands all equal the nodata value after masking.
inline TileSet tile_orthomosaic(const Orthomosaic& raster, const Aoi* aoi,
                                int64_t tile_size, real_t overlap) {
    raster.validate();
    const int64_t h = raster.height(), w = raster.width();
    const std::vector<int64_t> xs = tile_origins(w, tile_size, overlap);
    const std::vector<int64_t> ys = tile_origins(h, tile_size, overlap);

    BinaryMask keep(0, 0);
    if (aoi) {
        aoi->validate();
        keep = detail::rasterize_rings(aoi->polygons, raster.geotransform, h, w);
        if (aoi->purpose == AoiPurpose::exclude_mask)
            for (auto& v : keep.data) v = v ? 0 : 1;
    }

    TileSet set;
    set.tile_size = tile_size;
    set.raster_id = raster.raster_id;
    const int64_t px = tile_size * tile_size;
    for (int64_t oy : ys)
        for (int64_t ox : xs) {
            Tile t;
            t.tile_id = make_tile_id(raster.raster_id, ox, oy);
            t.origin_x = ox;
            t.origin_y = oy;
            t.size = tile_size;
            t.image = nn::Tensor::zeros({3, tile_size, tile_size});
            if (raster.has_dsm()) t.dsm = nn::Tensor::zeros({tile_size, tile_size});
            t.valid.assign((size_t)px, 0);

            int64_t black = 0;
            for (int64_t y = 0; y < tile_size; ++y)
                for (int64_t x = 0; x < tile_size; ++x) {
                    const int64_t ry = oy + y, rx = ox + x;
                    const bool masked = aoi && !keep.at(ry, rx);
                    const int64_t i = y * tile_size + x;
                    bool all_nodata = true;
                    for (size_t b = 0; b < raster.bands.size(); ++b) {
                        const real_t v =
                            masked ? 0.0 : raster.bands[b][ry * w + rx];
                        if (b < 3) t.image[(int64_t)b * px + i] = v;
                        else (*t.dsm)[i] = v;
                        if (v != raster.nodata_value) all_nodata = false;
                    }
                    if (masked) all_nodata = true;
                    if (all_nodata) ++black;
                    else t.valid[(size_t)i] = 1;
                }
            t.black_fraction = (real_t)black / (real_t)px;
            set.tiles.push_back(std::move(t));
        }
    return set;
}

struct ClipDiagnostics {
    int64_t dropped_low_visibility = 0;
    int64_t dropped_degenerate = 0;
};

// Intersect world-coordinate annotations with one tile window. Survivors are
// re-expressed in tile pixel coordinates with their visible-area fraction;
// polygons clipped to nothing (or below min_visibility) are dropped.
inline void clip_annotations_to_tile(Tile& tile,
                                     const std::vector<CrownAnnotation>& annotations,
                                     const Geotransform& gt, real_t min_visibility,
                                     ClipDiagnostics* diag = nullptr) {
    TS_CHECK(min_visibility > 0 && min_visibility <= 1,
             "clip: min_visibility must be in (0,1]");
    const Box window{(real_t)tile.origin_x, (real_t)tile.origin_y,
                     (real_t)(tile.origin_x + tile.size),
                     (real_t)(tile.origin_y + tile.size)};
    for (const CrownAnnotation& ann : annotations) {
        ann.validate();
        const Ring pixel_ring = ring_to_pixel(ann.polygon, gt);
        const real_t full = polygon_area(pixel_ring);
        const Ring clipped = clip_polygon_rect(pixel_ring, window);
        const real_t part = polygon_area(clipped);
        if (clipped.size() < 3 || part <= 0) {
            if (diag) ++diag->dropped_degenerate;
            continue;
        }
        const real_t visibility = part / full;
        if (visibility < min_visibility) {
            if (diag) ++diag->dropped_low_visibility;
            continue;
        }
        TileAnnotation ta;
        ta.instance_id = ann.instance_id;
        ta.class_label = ann.class_label;
        ta.visibility_fraction = std::min(visibility, (real_t)1.0);
        ta.polygon.reserve(clipped.size());
        for (const Point& p : clipped)
            ta.polygon.push_back({p.x - (real_t)tile.origin_x,
                                  p.y - (real_t)tile.origin_y});
        tile.annotations.push_back(std::move(ta));
    }
}

inline void clip_annotations(TileSet& set, const std::vector<CrownAnnotation>& annotations,
                             const Geotransform& gt, real_t min_visibility,
                             ClipDiagnostics* diag = nullptr) {
    for (Tile& t : set.tiles)
        clip_annotations_to_tile(t, annotations, gt, min_visibility, diag);
}

// Drop tiles that are mostly black and, optionally, tiles with no surviving
// annotations. Order is preserved.
inline TileSet filter_tiles(const TileSet& set, real_t max_black_fraction,
                            bool require_labels) {
    TS_CHECK(max_black_fraction >= 0 && max_black_fraction <= 1,
             "filter_tiles: max_black_fraction must be in [0,1]");
    TileSet out;
    out.tile_size = set.tile_size;
    out.raster_id = set.raster_id;
    for (const Tile& t : set.tiles) {
        if (t.black_fraction > max_black_fraction) continue;
        if (require_labels && t.annotations.empty()) continue;
        out.tiles.push_back(t);
    }
    return out;
}

// Assign each tile to the split whose polygon contains the tile center; a
// center inside two split regions is a configuration error.
inline void assign_splits(TileSet& set,
                          const std::map<Split, std::vector<Ring>>& split_polygons,
                          const Geotransform& gt) {
    for (Tile& t : set.tiles) {
        const Point center_px{(real_t)t.origin_x + (real_t)t.size / 2,
                              (real_t)t.origin_y + (real_t)t.size / 2};
        const Point center = gt.to_world(center_px);
        Split assigned = Split::unassigned;
        for (const auto& [split, rings] : split_polygons)
            for (const Ring& r : rings)
                if (point_in_polygon(center, r)) {
                    TS_CHECK(assigned == Split::unassigned || assigned == split,
                             "assign_splits: ambiguous split for tile " + t.tile_id);
                    assigned = split;
                }
        t.split = assigned;
    }
}

}  // namespace treeseg
