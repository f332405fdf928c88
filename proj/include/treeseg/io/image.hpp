#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "treeseg/geo/raster.hpp"

// Raster file IO. Pixels go through OpenCV (PNG for RGB tiles, float TIFF
// for DSM). Geo metadata comes from a JSON sidecar ("<raster>.json") or,
// for TIFFs, from the embedded pixel-scale/tiepoint/nodata tags.

namespace treeseg::io {

inline nn::Tensor image_from_mat(const cv::Mat& img) {
    TS_CHECK(!img.empty(), "image: empty matrix");
    TS_CHECK(img.channels() == 3, "image: expected 3 channels");
    cv::Mat m;
    img.convertTo(m, CV_64FC3);
    nn::Tensor t = nn::Tensor::zeros({3, (int64_t)m.rows, (int64_t)m.cols});
    const int64_t px = (int64_t)m.rows * m.cols;
    for (int64_t y = 0; y < m.rows; ++y)
        for (int64_t x = 0; x < m.cols; ++x) {
            const cv::Vec3d bgr = m.at<cv::Vec3d>((int)y, (int)x);
            const int64_t i = y * m.cols + x;
            t[0 * px + i] = bgr[2];  // R
            t[1 * px + i] = bgr[1];  // G
            t[2 * px + i] = bgr[0];  // B
        }
    return t;
}

inline cv::Mat mat_from_image(const nn::Tensor& rgb) {
    TS_CHECK(rgb.ndim() == 3 && rgb.dim(0) == 3, "image: expected [3,H,W]");
    const int64_t h = rgb.dim(1), w = rgb.dim(2), px = h * w;
    cv::Mat m((int)h, (int)w, CV_8UC3);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int64_t i = y * w + x;
            auto clamp8 = [](real_t v) {
                return (uint8_t)std::llround(std::min<real_t>(255, std::max<real_t>(0, v)));
            };
            m.at<cv::Vec3b>((int)y, (int)x) =
                cv::Vec3b(clamp8(rgb[2 * px + i]), clamp8(rgb[1 * px + i]),
                          clamp8(rgb[0 * px + i]));
        }
    return m;
}

inline void save_png_rgb(const std::string& path, const nn::Tensor& rgb) {
    TS_CHECK(cv::imwrite(path, mat_from_image(rgb)), "image: failed to write " + path);
}

inline nn::Tensor load_png_rgb(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
    TS_CHECK(!img.empty(), "image: failed to read " + path);
    return image_from_mat(img);
}

inline void save_tiff_gray(const std::string& path, const nn::Tensor& gray) {
    TS_CHECK(gray.ndim() == 2, "dsm: expected [H,W]");
    cv::Mat m((int)gray.dim(0), (int)gray.dim(1), CV_32FC1);
    for (int64_t y = 0; y < gray.dim(0); ++y)
        for (int64_t x = 0; x < gray.dim(1); ++x)
            m.at<float>((int)y, (int)x) = (float)gray[y * gray.dim(1) + x];
    TS_CHECK(cv::imwrite(path, m), "dsm: failed to write " + path);
}

inline nn::Tensor load_tiff_gray(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    TS_CHECK(!img.empty(), "dsm: failed to read " + path);
    TS_CHECK(img.channels() == 1, "dsm: expected a single band");
    cv::Mat m;
    img.convertTo(m, CV_64FC1);
    nn::Tensor t = nn::Tensor::zeros({(int64_t)m.rows, (int64_t)m.cols});
    for (int64_t y = 0; y < m.rows; ++y)
        for (int64_t x = 0; x < m.cols; ++x)
            t[y * m.cols + x] = m.at<double>((int)y, (int)x);
    return t;
}

// ---- TIFF geo tags ----------------------------------------------------------

struct TiffGeoTags {
    std::optional<std::array<real_t, 3>> pixel_scale;  // tag 33550
    std::optional<std::vector<real_t>> tiepoint;       // tag 33922
    std::optional<real_t> nodata;                      // tag 42113 (ASCII)
};

namespace detail {

template <typename T>
T read_le(const std::vector<unsigned char>& buf, size_t off, bool big_endian) {
    TS_CHECK(off + sizeof(T) <= buf.size(), "tiff: truncated file");
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        const size_t k = big_endian ? sizeof(T) - 1 - i : i;
        v |= (T)((uint64_t)buf[off + i] << (8 * k));
    }
    return v;
}

inline real_t read_f64(const std::vector<unsigned char>& buf, size_t off,
                       bool big_endian) {
    const uint64_t bits = read_le<uint64_t>(buf, off, big_endian);
    real_t out;
    static_assert(sizeof(out) == 8);
    std::memcpy(&out, &bits, 8);
    return out;
}

}  // namespace detail

// Minimal classic-TIFF directory walk for the three georeferencing tags.
inline TiffGeoTags read_tiff_geo_tags(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    TS_CHECK(f.good(), "tiff: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    TS_CHECK(buf.size() >= 8, "tiff: truncated file");
    TiffGeoTags tags;
    const bool big = buf[0] == 'M' && buf[1] == 'M';
    TS_CHECK(big || (buf[0] == 'I' && buf[1] == 'I'), "tiff: bad byte-order mark");
    if (detail::read_le<uint16_t>(buf, 2, big) != 42) return tags;  // not classic
    uint32_t dir = detail::read_le<uint32_t>(buf, 4, big);
    while (dir != 0) {
        const uint16_t n = detail::read_le<uint16_t>(buf, dir, big);
        for (uint16_t e = 0; e < n; ++e) {
            const size_t off = dir + 2 + (size_t)e * 12;
            const uint16_t tag = detail::read_le<uint16_t>(buf, off, big);
            const uint16_t type = detail::read_le<uint16_t>(buf, off + 2, big);
            const uint32_t count = detail::read_le<uint32_t>(buf, off + 4, big);
            if (tag == 33550 && type == 12 && count >= 3) {
                const uint32_t v = detail::read_le<uint32_t>(buf, off + 8, big);
                tags.pixel_scale = {detail::read_f64(buf, v, big),
                                    detail::read_f64(buf, v + 8, big),
                                    detail::read_f64(buf, v + 16, big)};
            } else if (tag == 33922 && type == 12 && count >= 6) {
                const uint32_t v = detail::read_le<uint32_t>(buf, off + 8, big);
                std::vector<real_t> tp;
                for (uint32_t k = 0; k < count; ++k)
                    tp.push_back(detail::read_f64(buf, v + 8 * k, big));
                tags.tiepoint = std::move(tp);
            } else if (tag == 42113 && type == 2 && count > 1) {
                const uint32_t v = count <= 4 ? (uint32_t)(off + 8)
                                              : detail::read_le<uint32_t>(buf, off + 8, big);
                std::string s;
                for (uint32_t k = 0; k + 1 < count; ++k) s += (char)buf[v + k];
                try {
                    tags.nodata = std::stod(s);
                } catch (...) {
                }
            }
        }
        dir = detail::read_le<uint32_t>(buf, dir + 2 + (size_t)n * 12, big);
    }
    return tags;
}

inline Geotransform geotransform_from_tags(const TiffGeoTags& tags) {
    Geotransform gt;
    if (tags.pixel_scale && tags.tiepoint && tags.tiepoint->size() >= 6) {
        const auto& s = *tags.pixel_scale;
        const auto& t = *tags.tiepoint;
        // raster (i,j) pins world (X,Y); world y decreases down the raster
        gt.c[0] = t[3] - t[0] * s[0];
        gt.c[1] = s[0];
        gt.c[2] = 0;
        gt.c[3] = t[4] + t[1] * s[1];
        gt.c[4] = 0;
        gt.c[5] = -s[1];
    }
    return gt;
}

// ---- Orthomosaic assembly ---------------------------------------------------

struct SidecarMeta {
    std::string raster_id;
    real_t pixel_resolution = 0;  // 0 = unset
    std::optional<real_t> nodata;
    std::optional<Geotransform> geotransform;
};

inline std::string sidecar_path(const std::string& raster_path) {
    return raster_path + ".json";
}

inline std::optional<SidecarMeta> read_sidecar(const std::string& raster_path) {
    std::ifstream f(sidecar_path(raster_path));
    if (!f.good()) return std::nullopt;
    nlohmann::json j;
    f >> j;
    SidecarMeta m;
    m.raster_id = j.value("raster_id", std::string());
    m.pixel_resolution = j.value("pixel_resolution", 0.0);
    if (j.contains("nodata_value")) m.nodata = j.at("nodata_value").get<real_t>();
    if (j.contains("geotransform")) {
        const auto g = j.at("geotransform").get<std::vector<real_t>>();
        TS_CHECK(g.size() == 6, "sidecar: geotransform needs 6 coefficients");
        Geotransform gt;
        for (int i = 0; i < 6; ++i) gt.c[i] = g[i];
        m.geotransform = gt;
    }
    return m;
}

inline void write_sidecar(const std::string& raster_path, const Orthomosaic& o) {
    nlohmann::ordered_json j;
    j["raster_id"] = o.raster_id;
    j["pixel_resolution"] = o.pixel_resolution;
    j["nodata_value"] = o.nodata_value;
    j["geotransform"] = std::vector<real_t>(o.geotransform.c, o.geotransform.c + 6);
    std::ofstream f(sidecar_path(raster_path));
    TS_CHECK(f.good(), "sidecar: cannot write " + sidecar_path(raster_path));
    f << j.dump(2) << "\n";
}

// RGB raster (PNG or TIFF) plus optional single-band DSM TIFF. Metadata
// resolution order: sidecar JSON, then TIFF geo tags, then defaults.
inline Orthomosaic read_orthomosaic(const std::string& rgb_path,
                                    const std::string& dsm_path = "") {
    Orthomosaic o;
    const nn::Tensor rgb = load_png_rgb(rgb_path);
    const int64_t px = rgb.dim(1) * rgb.dim(2);
    for (int64_t b = 0; b < 3; ++b) {
        nn::Tensor band = nn::Tensor::zeros({rgb.dim(1), rgb.dim(2)});
        for (int64_t i = 0; i < px; ++i) band[i] = rgb[b * px + i];
        o.bands.push_back(std::move(band));
    }
    if (!dsm_path.empty()) {
        nn::Tensor dsm = load_tiff_gray(dsm_path);
        TS_CHECK(dsm.dim(0) == rgb.dim(1) && dsm.dim(1) == rgb.dim(2),
                 "orthomosaic: DSM dimensions differ from RGB");
        o.bands.push_back(std::move(dsm));
    }

    o.raster_id = std::filesystem::path(rgb_path).stem().string();
    o.pixel_resolution = 1.0;
    const bool is_tiff = rgb_path.size() > 4 &&
                         (rgb_path.substr(rgb_path.size() - 4) == ".tif" ||
                          rgb_path.substr(rgb_path.size() - 5) == ".tiff");
    if (is_tiff) {
        const TiffGeoTags tags = read_tiff_geo_tags(rgb_path);
        if (tags.pixel_scale) {
            o.geotransform = geotransform_from_tags(tags);
            o.pixel_resolution = (*tags.pixel_scale)[0];
        }
        if (tags.nodata) o.nodata_value = *tags.nodata;
    }
    if (const auto side = read_sidecar(rgb_path)) {
        if (!side->raster_id.empty()) o.raster_id = side->raster_id;
        if (side->pixel_resolution > 0) o.pixel_resolution = side->pixel_resolution;
        if (side->nodata) o.nodata_value = *side->nodata;
        if (side->geotransform) o.geotransform = *side->geotransform;
    }
    o.validate();
    return o;
}

inline void write_orthomosaic(const std::string& rgb_path, const std::string& dsm_path,
                              const Orthomosaic& o) {
    o.validate();
    const int64_t h = o.height(), w = o.width(), px = h * w;
    nn::Tensor rgb = nn::Tensor::zeros({3, h, w});
    for (int64_t b = 0; b < 3; ++b)
        for (int64_t i = 0; i < px; ++i) rgb[b * px + i] = o.bands[(size_t)b][i];
    save_png_rgb(rgb_path, rgb);
    if (o.has_dsm()) {
        TS_CHECK(!dsm_path.empty(), "orthomosaic: DSM present but no dsm_path");
        save_tiff_gray(dsm_path, o.bands[3]);
    }
    write_sidecar(rgb_path, o);
}

}  // namespace treeseg::io
