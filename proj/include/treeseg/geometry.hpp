#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "treeseg/common.hpp"

// 2-D polygon and mask primitives. Polygons are open rings (last vertex
// implicitly connects to the first) in x-right, y-down coordinates.

namespace treeseg {

struct Point {
    real_t x = 0, y = 0;
};

using Ring = std::vector<Point>;

struct Box {
    real_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    real_t width() const { return std::max((real_t)0, x1 - x0); }
    real_t height() const { return std::max((real_t)0, y1 - y0); }
    real_t area() const { return width() * height(); }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
};

inline Box box_intersection(const Box& a, const Box& b) {
    return {std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1),
            std::min(a.y1, b.y1)};
}

inline real_t box_iou(const Box& a, const Box& b) {
    const real_t inter = box_intersection(a, b).area();
    const real_t uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

inline real_t polygon_signed_area(const Ring& ring) {
    const size_t n = ring.size();
    if (n < 3) return 0.0;
    real_t s = 0;
    for (size_t i = 0; i < n; ++i) {
        const Point& a = ring[i];
        const Point& b = ring[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    return 0.5 * s;
}

inline real_t polygon_area(const Ring& ring) { return std::abs(polygon_signed_area(ring)); }

inline Box polygon_bounds(const Ring& ring) {
    TS_CHECK(!ring.empty(), "polygon_bounds: empty ring");
    Box b{ring[0].x, ring[0].y, ring[0].x, ring[0].y};
    for (const Point& p : ring) {
        b.x0 = std::min(b.x0, p.x);
        b.y0 = std::min(b.y0, p.y);
        b.x1 = std::max(b.x1, p.x);
        b.y1 = std::max(b.y1, p.y);
    }
    return b;
}

// Sutherland-Hodgman clip of a ring against an axis-aligned rectangle.
// Convex clip window, so the result is a single ring (possibly empty).
inline Ring clip_polygon_rect(const Ring& ring, const Box& rect) {
    enum Edge { Left, Right, Top, Bottom };
    auto inside = [&](const Point& p, Edge e) {
        switch (e) {
            case Left: return p.x >= rect.x0;
            case Right: return p.x <= rect.x1;
            case Top: return p.y >= rect.y0;
            default: return p.y <= rect.y1;
        }
    };
    auto intersect = [&](const Point& a, const Point& b, Edge e) {
        real_t t;
        switch (e) {
            case Left: t = (rect.x0 - a.x) / (b.x - a.x); break;
            case Right: t = (rect.x1 - a.x) / (b.x - a.x); break;
            case Top: t = (rect.y0 - a.y) / (b.y - a.y); break;
            default: t = (rect.y1 - a.y) / (b.y - a.y); break;
        }
        return Point{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
    };
    Ring poly = ring;
    for (Edge e : {Left, Right, Top, Bottom}) {
        if (poly.empty()) break;
        Ring out;
        out.reserve(poly.size() + 4);
        for (size_t i = 0; i < poly.size(); ++i) {
            const Point& cur = poly[i];
            const Point& prev = poly[(i + poly.size() - 1) % poly.size()];
            const bool cin = inside(cur, e), pin = inside(prev, e);
            if (cin) {
                if (!pin) out.push_back(intersect(prev, cur, e));
                out.push_back(cur);
            } else if (pin) {
                out.push_back(intersect(prev, cur, e));
            }
        }
        poly = std::move(out);
    }
    return poly;
}

// Even-odd rule; points exactly on an edge may land on either side.
inline bool point_in_polygon(const Point& p, const Ring& ring) {
    bool in = false;
    const size_t n = ring.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = ring[i];
        const Point& b = ring[j];
        if ((a.y > p.y) != (b.y > p.y) &&
            p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x)
            in = !in;
    }
    return in;
}

namespace detail {

inline real_t cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool on_segment(const Point& a, const Point& b, const Point& p) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
           std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(const Point& a, const Point& b, const Point& c,
                               const Point& d) {
    const real_t d1 = cross(c, d, a), d2 = cross(c, d, b);
    const real_t d3 = cross(a, b, c), d4 = cross(a, b, d);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
        ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
        return true;
    if (d1 == 0 && on_segment(c, d, a)) return true;
    if (d2 == 0 && on_segment(c, d, b)) return true;
    if (d3 == 0 && on_segment(a, b, c)) return true;
    if (d4 == 0 && on_segment(a, b, d)) return true;
    return false;
}

}  // namespace detail

// True when no two non-adjacent edges intersect and no vertex repeats.
inline bool is_simple_polygon(const Ring& ring) {
    const size_t n = ring.size();
    if (n < 3) return false;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            if (ring[i].x == ring[j].x && ring[i].y == ring[j].y) return false;
        }
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            // skip adjacent edges (they share a vertex by construction)
            if (j == i + 1 || (i == 0 && j == n - 1)) continue;
            if (detail::segments_intersect(ring[i], ring[(i + 1) % n], ring[j],
                                           ring[(j + 1) % n]))
                return false;
        }
    }
    return true;
}

struct BinaryMask {
    int64_t height = 0, width = 0;
    std::vector<uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int64_t h, int64_t w) : height(h), width(w), data((size_t)(h * w), 0) {}

    uint8_t& at(int64_t y, int64_t x) { return data[(size_t)(y * width + x)]; }
    uint8_t at(int64_t y, int64_t x) const { return data[(size_t)(y * width + x)]; }

    int64_t count() const {
        int64_t n = 0;
        for (uint8_t v : data) n += v != 0;
        return n;
    }
};

inline real_t mask_iou(const BinaryMask& a, const BinaryMask& b) {
    TS_CHECK(a.height == b.height && a.width == b.width, "mask_iou: size mismatch");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool va = a.data[i] != 0, vb = b.data[i] != 0;
        inter += va && vb;
        uni += va || vb;
    }
    return uni > 0 ? (real_t)inter / (real_t)uni : 0.0;
}

// Even-odd scanline fill sampled at pixel centers (x+0.5, y+0.5).
inline BinaryMask rasterize_polygon(const Ring& ring, int64_t height, int64_t width) {
    BinaryMask m(height, width);
    if (ring.size() < 3) return m;
    const Box b = polygon_bounds(ring);
    const int64_t y_lo = std::max<int64_t>(0, (int64_t)std::floor(b.y0 - 0.5));
    const int64_t y_hi = std::min<int64_t>(height - 1, (int64_t)std::ceil(b.y1));
    std::vector<real_t> xs;
    for (int64_t y = y_lo; y <= y_hi; ++y) {
        const real_t cy = (real_t)y + 0.5;
        xs.clear();
        const size_t n = ring.size();
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
            const Point& p = ring[i];
            const Point& q = ring[j];
            if ((p.y > cy) != (q.y > cy))
                xs.push_back(p.x + (cy - p.y) * (q.x - p.x) / (q.y - p.y));
        }
        std::sort(xs.begin(), xs.end());
        for (size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int64_t x_start = std::max<int64_t>(0, (int64_t)std::ceil(xs[k] - 0.5));
            const int64_t x_end = std::min<int64_t>(width - 1, (int64_t)std::floor(xs[k + 1] - 0.5));
            for (int64_t x = x_start; x <= x_end; ++x) m.at(y, x) = 1;
        }
    }
    return m;
}

inline Box mask_bounds(const BinaryMask& m) {
    int64_t x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
    for (int64_t y = 0; y < m.height; ++y)
        for (int64_t x = 0; x < m.width; ++x)
            if (m.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return {0, 0, 0, 0};
    // half-open pixel box: +1 so width/height count pixels
    return {(real_t)x0, (real_t)y0, (real_t)(x1 + 1), (real_t)(y1 + 1)};
}

}  // namespace treeseg
