#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "treeseg/geo/raster.hpp"

// GeoJSON polygon layers: crown annotations (with a Label property), AOIs,
// and split regions (with a split property). Only the exterior ring of each
// polygon is used; MultiPolygons contribute one ring per part.

namespace treeseg {

namespace detail {

inline Ring ring_from_coords(const nlohmann::json& coords) {
    Ring r;
    for (const auto& pt : coords) {
        TS_CHECK(pt.is_array() && pt.size() >= 2, "geojson: bad coordinate");
        r.push_back({pt[0].get<real_t>(), pt[1].get<real_t>()});
    }
    // GeoJSON rings repeat the first vertex at the end; ours are open
    if (r.size() >= 2 && r.front().x == r.back().x && r.front().y == r.back().y)
        r.pop_back();
    return r;
}

inline std::vector<Ring> rings_from_geometry(const nlohmann::json& geom) {
    const std::string type = geom.at("type").get<std::string>();
    std::vector<Ring> out;
    if (type == "Polygon") {
        out.push_back(ring_from_coords(geom.at("coordinates").at(0)));
    } else if (type == "MultiPolygon") {
        for (const auto& poly : geom.at("coordinates"))
            out.push_back(ring_from_coords(poly.at(0)));
    } else {
        TS_CHECK(false, "geojson: unsupported geometry type " + type);
    }
    return out;
}

inline nlohmann::json load_feature_collection(const std::string& path) {
    std::ifstream f(path);
    TS_CHECK(f.good(), "geojson: cannot open " + path);
    nlohmann::json j;
    f >> j;
    TS_CHECK(j.value("type", std::string()) == "FeatureCollection",
             "geojson: expected a FeatureCollection in " + path);
    return j;
}

}  // namespace detail

inline std::vector<CrownAnnotation> read_annotations_geojson(const std::string& path) {
    const nlohmann::json j = detail::load_feature_collection(path);
    std::vector<CrownAnnotation> out;
    int64_t next_id = 1;
    for (const auto& feat : j.at("features")) {
        const auto& props = feat.at("properties");
        TS_CHECK(props.contains("Label"),
                 "geojson: annotation feature missing Label property");
        for (Ring& r : detail::rings_from_geometry(feat.at("geometry"))) {
            CrownAnnotation a;
            a.instance_id =
                props.contains("id") ? props.at("id").get<int64_t>() : next_id;
            ++next_id;
            a.class_label = props.at("Label").get<std::string>();
            a.polygon = std::move(r);
            a.validate();
            out.push_back(std::move(a));
        }
    }
    return out;
}

inline Aoi read_aoi_geojson(const std::string& path,
                            AoiPurpose purpose = AoiPurpose::include) {
    const nlohmann::json j = detail::load_feature_collection(path);
    Aoi aoi;
    aoi.purpose = purpose;
    for (const auto& feat : j.at("features"))
        for (Ring& r : detail::rings_from_geometry(feat.at("geometry")))
            aoi.polygons.push_back(std::move(r));
    aoi.validate();
    return aoi;
}

inline std::map<Split, std::vector<Ring>> read_splits_geojson(const std::string& path) {
    const nlohmann::json j = detail::load_feature_collection(path);
    std::map<Split, std::vector<Ring>> out;
    for (const auto& feat : j.at("features")) {
        const auto& props = feat.at("properties");
        TS_CHECK(props.contains("split"),
                 "geojson: split feature missing split property");
        const Split s = split_from_name(props.at("split").get<std::string>());
        for (Ring& r : detail::rings_from_geometry(feat.at("geometry")))
            out[s].push_back(std::move(r));
    }
    return out;
}

inline nlohmann::ordered_json polygon_feature(const Ring& ring,
                                              const nlohmann::ordered_json& properties) {
    nlohmann::ordered_json coords = nlohmann::ordered_json::array();
    for (const Point& p : ring) coords.push_back({p.x, p.y});
    if (!ring.empty()) coords.push_back({ring.front().x, ring.front().y});
    nlohmann::ordered_json f;
    f["type"] = "Feature";
    f["properties"] = properties;
    f["geometry"] = {{"type", "Polygon"},
                     {"coordinates", nlohmann::ordered_json::array({coords})}};
    return f;
}

inline nlohmann::ordered_json feature_collection(std::vector<nlohmann::ordered_json> feats) {
    nlohmann::ordered_json j;
    j["type"] = "FeatureCollection";
    j["features"] = std::move(feats);
    return j;
}

}  // namespace treeseg
