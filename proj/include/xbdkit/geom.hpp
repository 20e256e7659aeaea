#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "xbdkit/error.hpp"

namespace xbdkit::geom {

struct Point {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point&) const = default;
};

// One closed outer ring in image pixel coordinates. Canonical form keeps the
// closing vertex (first == last), so a triangle stores 4 vertices.
struct PolygonRing {
    std::vector<Point> vertices;

    bool operator==(const PolygonRing&) const = default;

    // Number of vertices excluding the closing duplicate.
    std::size_t open_size() const {
        return vertices.size() > 1 ? vertices.size() - 1 : vertices.size();
    }
};

struct BoundingBox {
    double min_x = 0.0;
    double min_y = 0.0;
    double max_x = 0.0;
    double max_y = 0.0;
};

// When |signed area| falls below this, the ring is treated as degenerate and
// the centroid falls back to the vertex mean.
inline constexpr double kDegenerateAreaEps = 1e-9;

namespace detail {

inline void skip_ws(std::string_view s, std::size_t& i) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
}

inline bool parse_double(std::string_view s, std::size_t& i, double& out) {
    skip_ws(s, i);
    const char* first = s.data() + i;
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr == first) return false;
    if (!std::isfinite(out)) return false;
    i += static_cast<std::size_t>(ptr - first);
    return true;
}

// Parses "x y, x y, ..." until the closing paren. Leaves i past the ')'.
inline std::vector<Point> parse_ring_body(std::string_view s, std::size_t& i) {
    std::vector<Point> pts;
    for (;;) {
        Point p;
        if (!parse_double(s, i, p.x) || !parse_double(s, i, p.y)) {
            throw MalformedWkt("non-numeric coordinate in ring");
        }
        pts.push_back(p);
        skip_ws(s, i);
        if (i >= s.size()) throw MalformedWkt("unterminated ring");
        if (s[i] == ',') {
            ++i;
            continue;
        }
        if (s[i] == ')') {
            ++i;
            return pts;
        }
        throw MalformedWkt(std::string("unexpected character '") + s[i] + "' in ring");
    }
}

inline std::size_t count_distinct(const std::vector<Point>& open_ring) {
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < open_ring.size(); ++i) {
        bool seen = false;
        for (std::size_t j = 0; j < i && !seen; ++j) seen = open_ring[i] == open_ring[j];
        if (!seen) ++distinct;
    }
    return distinct;
}

// Canonical cycle form of the open vertex list: among all rotations of the
// sequence and of its reversal, the lexicographically smallest. Both a ring
// and its reversal map to the same sequence, which makes centroid sums
// bitwise reproducible regardless of stored orientation or starting vertex.
inline std::vector<Point> canonical_cycle(const std::vector<Point>& open_ring) {
    const std::size_t n = open_ring.size();
    if (n <= 1) return open_ring;
    auto less = [](const Point& a, const Point& b) {
        if (a.x != b.x) return a.x < b.x;
        return a.y < b.y;
    };
    std::vector<Point> best;
    std::vector<Point> cand(n);
    for (int dir = 0; dir < 2; ++dir) {
        for (std::size_t start = 0; start < n; ++start) {
            for (std::size_t k = 0; k < n; ++k) {
                std::size_t idx = dir == 0 ? (start + k) % n : (start + n - k) % n;
                cand[k] = open_ring[idx];
            }
            if (best.empty() ||
                std::lexicographical_compare(cand.begin(), cand.end(), best.begin(), best.end(), less)) {
                best = cand;
            }
        }
    }
    return best;
}

}  // namespace detail

// Parses a WKT POLYGON's outer ring. Interior rings are parsed and discarded;
// the returned ring is closed (first == last). Throws MalformedWkt on
// structural problems and MultiPolygonUnsupported for MULTIPOLYGON input.
inline PolygonRing parse_wkt_polygon(std::string_view text) {
    std::size_t i = 0;
    detail::skip_ws(text, i);

    auto has_keyword = [&](std::string_view kw) {
        if (text.size() - i < kw.size()) return false;
        for (std::size_t k = 0; k < kw.size(); ++k) {
            if (std::toupper(static_cast<unsigned char>(text[i + k])) != kw[k]) return false;
        }
        return true;
    };
    if (has_keyword("MULTIPOLYGON")) {
        throw MultiPolygonUnsupported("MULTIPOLYGON geometry is not supported");
    }
    if (!has_keyword("POLYGON")) {
        throw MalformedWkt("expected POLYGON keyword");
    }
    i += 7;
    detail::skip_ws(text, i);
    if (i >= text.size() || text[i] != '(') throw MalformedWkt("expected '(' after POLYGON");
    ++i;
    detail::skip_ws(text, i);
    if (i >= text.size() || text[i] != '(') throw MalformedWkt("expected '(' to open outer ring");
    ++i;

    std::vector<Point> outer = detail::parse_ring_body(text, i);

    // Interior rings: parsed for structural validity, then ignored.
    for (;;) {
        detail::skip_ws(text, i);
        if (i >= text.size()) throw MalformedWkt("unbalanced parentheses");
        if (text[i] == ',') {
            ++i;
            detail::skip_ws(text, i);
            if (i >= text.size() || text[i] != '(') throw MalformedWkt("expected '(' to open interior ring");
            ++i;
            detail::parse_ring_body(text, i);
            continue;
        }
        if (text[i] == ')') {
            ++i;
            break;
        }
        throw MalformedWkt("unexpected trailing content inside POLYGON");
    }
    detail::skip_ws(text, i);
    if (i != text.size()) throw MalformedWkt("unexpected trailing content after POLYGON");

    // Canonicalize to closed form, then validate.
    if (outer.size() > 1 && outer.front() == outer.back()) outer.pop_back();
    if (detail::count_distinct(outer) < 3) {
        throw MalformedWkt("ring needs at least 3 distinct vertices");
    }
    outer.push_back(outer.front());
    return PolygonRing{std::move(outer)};
}

// Serializes back to "POLYGON ((x y, x y, ...))" with shortest round-trip
// number formatting, so parse(serialize(ring)) == ring.
inline std::string serialize_wkt(const PolygonRing& ring) {
    auto fmt = [](double v) {
        std::array<char, 32> buf;
        auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
        return std::string(buf.data(), ptr);
    };
    std::string out = "POLYGON ((";
    for (std::size_t i = 0; i < ring.vertices.size(); ++i) {
        if (i) out += ", ";
        out += fmt(ring.vertices[i].x);
        out += ' ';
        out += fmt(ring.vertices[i].y);
    }
    out += "))";
    return out;
}

// Area centroid via the shoelace formula, evaluated on the canonical cycle so
// that reversed or rotated copies of the same ring produce bitwise identical
// results. Degenerate rings (|signed area| < kDegenerateAreaEps) fall back to
// the mean of the open vertex list.
inline Point centroid(const PolygonRing& ring) {
    std::vector<Point> open(ring.vertices.begin(),
                            ring.vertices.begin() + static_cast<std::ptrdiff_t>(ring.open_size()));
    std::vector<Point> cyc = detail::canonical_cycle(open);
    const std::size_t n = cyc.size();

    double area2 = 0.0;   // twice the signed area
    double cx6 = 0.0;     // 6 * area * centroid.x
    double cy6 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = cyc[i];
        const Point& b = cyc[(i + 1) % n];
        const double cross = a.x * b.y - b.x * a.y;
        area2 += cross;
        cx6 += (a.x + b.x) * cross;
        cy6 += (a.y + b.y) * cross;
    }
    if (std::abs(area2 * 0.5) < kDegenerateAreaEps) {
        double sx = 0.0, sy = 0.0;
        for (const Point& p : cyc) {
            sx += p.x;
            sy += p.y;
        }
        return Point{sx / static_cast<double>(n), sy / static_cast<double>(n)};
    }
    const double inv = 1.0 / (3.0 * area2);
    return Point{cx6 * inv, cy6 * inv};
}

inline BoundingBox bounding_box(const PolygonRing& ring) {
    BoundingBox bb{ring.vertices[0].x, ring.vertices[0].y, ring.vertices[0].x, ring.vertices[0].y};
    for (const Point& p : ring.vertices) {
        bb.min_x = std::min(bb.min_x, p.x);
        bb.min_y = std::min(bb.min_y, p.y);
        bb.max_x = std::max(bb.max_x, p.x);
        bb.max_y = std::max(bb.max_y, p.y);
    }
    return bb;
}

}  // namespace xbdkit::geom
