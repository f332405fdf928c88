#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "treeseg/detection.hpp"
#include "treeseg/geo/raster.hpp"
#include "treeseg/taxonomy.hpp"

// COCO-style dataset and results JSON. Category ids are 1-based schema
// indices; image ids are 1-based tile order. Prediction masks travel as
// row-major run-length counts (leading zero-run first), ground truth as
// polygon rings.

namespace treeseg {

inline std::vector<int64_t> rle_encode(const BinaryMask& m) {
    std::vector<int64_t> counts;
    int64_t run = 0;
    uint8_t cur = 0;
    for (size_t i = 0; i < m.data.size(); ++i) {
        const uint8_t v = m.data[i] ? 1 : 0;
        if (v == cur) {
            ++run;
        } else {
            counts.push_back(run);
            cur = v;
            run = 1;
        }
    }
    counts.push_back(run);
    return counts;
}

inline BinaryMask rle_decode(const std::vector<int64_t>& counts, int64_t height,
                             int64_t width) {
    BinaryMask m(height, width);
    size_t i = 0;
    uint8_t cur = 0;
    for (int64_t run : counts) {
        TS_CHECK(run >= 0, "rle: negative run");
        for (int64_t k = 0; k < run; ++k) {
            TS_CHECK(i < m.data.size(), "rle: counts exceed mask size");
            m.data[i++] = cur;
        }
        cur = cur ? 0 : 1;
    }
    TS_CHECK(i == m.data.size(), "rle: counts do not cover mask");
    return m;
}

inline nlohmann::ordered_json coco_ground_truth(const TileSet& set,
                                                const ClassSchema& schema) {
    nlohmann::ordered_json j;
    j["images"] = nlohmann::ordered_json::array();
    j["annotations"] = nlohmann::ordered_json::array();
    j["categories"] = nlohmann::ordered_json::array();
    for (size_t c = 0; c < schema.classes.size(); ++c)
        j["categories"].push_back(
            {{"id", (int64_t)c + 1}, {"name", schema.classes[c]}});

    int64_t ann_id = 1;
    for (size_t i = 0; i < set.tiles.size(); ++i) {
        const Tile& t = set.tiles[i];
        const int64_t image_id = (int64_t)i + 1;
        j["images"].push_back({{"id", image_id},
                               {"file_name", t.tile_id + ".png"},
                               {"width", t.size},
                               {"height", t.size},
                               {"split", split_name(t.split)}});
        for (const TileAnnotation& a : t.annotations) {
            std::vector<real_t> flat;
            flat.reserve(a.polygon.size() * 2);
            for (const Point& p : a.polygon) {
                flat.push_back(p.x);
                flat.push_back(p.y);
            }
            const Box b = polygon_bounds(a.polygon);
            nlohmann::ordered_json ann;
            ann["id"] = ann_id++;
            ann["image_id"] = image_id;
            ann["category_id"] = schema.id_of(schema.map_raw(a.class_label)) + 1;
            ann["segmentation"] = nlohmann::ordered_json::array({flat});
            ann["bbox"] = {b.x0, b.y0, b.width(), b.height()};
            ann["area"] = polygon_area(a.polygon);
            ann["iscrowd"] = 0;
            ann["visibility"] = a.visibility_fraction;
            j["annotations"].push_back(std::move(ann));
        }
    }
    return j;
}

struct CocoDataset {
    Detections ground_truth;                     // class_id = category_id - 1
    std::map<int64_t, std::string> image_names;  // image_id -> file_name
    std::map<int64_t, int64_t> image_sizes;      // image_id -> side length
    std::map<int64_t, Split> image_splits;
    std::vector<std::string> categories;         // index = category_id - 1
};

inline CocoDataset load_coco_ground_truth(const nlohmann::json& j) {
    CocoDataset ds;
    std::map<int64_t, std::string> cat_names;
    for (const auto& c : j.at("categories"))
        cat_names[c.at("id").get<int64_t>()] = c.at("name").get<std::string>();
    for (const auto& [id, name] : cat_names) {
        TS_CHECK(id == (int64_t)ds.categories.size() + 1,
                 "coco: category ids must be 1..N");
        ds.categories.push_back(name);
    }
    for (const auto& im : j.at("images")) {
        const int64_t id = im.at("id").get<int64_t>();
        ds.image_names[id] = im.at("file_name").get<std::string>();
        const int64_t w = im.at("width").get<int64_t>();
        TS_CHECK(w == im.at("height").get<int64_t>(), "coco: tiles must be square");
        ds.image_sizes[id] = w;
        ds.image_splits[id] =
            im.contains("split") ? split_from_name(im.at("split").get<std::string>())
                                 : Split::unassigned;
    }
    for (const auto& ann : j.at("annotations")) {
        Detection d;
        d.image_id = ann.at("image_id").get<int64_t>();
        d.class_id = ann.at("category_id").get<int64_t>() - 1;
        d.score = 1.0;
        const auto& seg = ann.at("segmentation").at(0);
        Ring ring;
        for (size_t k = 0; k + 1 < seg.size(); k += 2)
            ring.push_back({seg[k].get<real_t>(), seg[k + 1].get<real_t>()});
        const int64_t side = ds.image_sizes.at(d.image_id);
        d.mask = rasterize_polygon(ring, side, side);
        d.box = polygon_bounds(ring);
        ds.ground_truth.push_back(std::move(d));
    }
    return ds;
}

inline nlohmann::ordered_json coco_results(const Detections& dets) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const Detection& d : dets) {
        nlohmann::ordered_json r;
        r["image_id"] = d.image_id;
        r["category_id"] = d.class_id + 1;
        r["score"] = d.score;
        r["bbox"] = {d.box.x0, d.box.y0, d.box.width(), d.box.height()};
        if (d.has_mask()) {
            r["segmentation"] = {{"size", {d.mask.height, d.mask.width}},
                                 {"counts", rle_encode(d.mask)}};
        }
        arr.push_back(std::move(r));
    }
    return arr;
}

inline Detections load_coco_results(const nlohmann::json& j) {
    Detections out;
    for (const auto& r : j) {
        Detection d;
        d.image_id = r.at("image_id").get<int64_t>();
        d.class_id = r.at("category_id").get<int64_t>() - 1;
        d.score = r.at("score").get<real_t>();
        const auto& bb = r.at("bbox");
        d.box = {bb[0].get<real_t>(), bb[1].get<real_t>(),
                 bb[0].get<real_t>() + bb[2].get<real_t>(),
                 bb[1].get<real_t>() + bb[3].get<real_t>()};
        if (r.contains("segmentation")) {
            const auto& seg = r.at("segmentation");
            d.mask = rle_decode(seg.at("counts").get<std::vector<int64_t>>(),
                                seg.at("size")[0].get<int64_t>(),
                                seg.at("size")[1].get<int64_t>());
        }
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace treeseg
