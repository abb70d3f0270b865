#include "kilnaudit/geo.hpp"

#include "kilnaudit/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace kilnaudit::geo {

namespace {

double wrap_lon_delta(double d)
{
    while (d > 180.0) d -= 360.0;
    while (d < -180.0) d += 360.0;
    return d;
}

std::size_t distinct_vertices(const std::vector<GeoPoint>& pts)
{
    std::vector<GeoPoint> v(pts);
    std::sort(v.begin(), v.end(), [](const GeoPoint& a, const GeoPoint& b) {
        return a.lon < b.lon || (a.lon == b.lon && a.lat < b.lat);
    });
    return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

double ring_distance(const LocalFrame& frame, const Ring& ring)
{
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        best = std::min(best, segment_distance(Eigen::Vector2d::Zero(), frame.to_local(ring[i]),
                                               frame.to_local(ring[i + 1])));
    }
    return best;
}

} // namespace

bool is_valid(const GeoPoint& p)
{
    return std::isfinite(p.lon) && std::isfinite(p.lat) && p.lon >= -180.0 && p.lon <= 180.0 &&
           std::abs(p.lat) <= kMaxLatitude;
}

void validate(const GeoPoint& p)
{
    if (!is_valid(p)) {
        throw DomainError(fmt::format("coordinate ({}, {}) outside the Web Mercator domain", p.lon, p.lat));
    }
}

GeoPoint normalized(GeoPoint p)
{
    if (std::isfinite(p.lon) && (p.lon < -180.0 || p.lon > 180.0)) {
        p.lon = std::remainder(p.lon, 360.0);
    }
    return p;
}

void validate_ring(const Ring& ring)
{
    if (ring.size() < 4) {
        throw ValidationError(fmt::format("ring has {} vertices, need at least 4 (closed)", ring.size()));
    }
    if (!(ring.front() == ring.back())) {
        throw ValidationError("ring is not closed");
    }
    for (const auto& p : ring) {
        if (!is_valid(p)) {
            throw ValidationError(fmt::format("ring vertex ({}, {}) is invalid", p.lon, p.lat));
        }
    }
    if (distinct_vertices(ring) < 3) {
        throw ValidationError("ring has fewer than 3 distinct vertices");
    }
}

void validate(const Geometry& g)
{
    std::visit(
        [](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Point>) {
                if (!is_valid(v.at)) {
                    throw ValidationError(fmt::format("point ({}, {}) is invalid", v.at.lon, v.at.lat));
                }
            } else if constexpr (std::is_same_v<T, Polyline>) {
                for (const auto& p : v.vertices) {
                    if (!is_valid(p)) {
                        throw ValidationError(fmt::format("polyline vertex ({}, {}) is invalid", p.lon, p.lat));
                    }
                }
                if (distinct_vertices(v.vertices) < 2) {
                    throw ValidationError("polyline has fewer than 2 distinct vertices");
                }
            } else {
                validate_ring(v.outer);
                for (const auto& h : v.holes) validate_ring(h);
            }
        },
        g);
}

Bounds bounds(const Geometry& g)
{
    Bounds b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    auto add = [&b](const GeoPoint& p) {
        b.min_lon = std::min(b.min_lon, p.lon);
        b.min_lat = std::min(b.min_lat, p.lat);
        b.max_lon = std::max(b.max_lon, p.lon);
        b.max_lat = std::max(b.max_lat, p.lat);
    };
    std::visit(
        [&add](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Point>) {
                add(v.at);
            } else if constexpr (std::is_same_v<T, Polyline>) {
                for (const auto& p : v.vertices) add(p);
            } else {
                for (const auto& p : v.outer) add(p);
            }
        },
        g);
    return b;
}

MercatorPoint wgs84_to_mercator(const GeoPoint& p)
{
    validate(p);
    const double lambda = deg2rad(p.lon);
    const double phi = deg2rad(p.lat);
    return {kMercatorRadius * lambda, kMercatorRadius * std::log(std::tan(kPi / 4.0 + phi / 2.0))};
}

GeoPoint mercator_to_wgs84(const MercatorPoint& p)
{
    constexpr double limit = kMercatorHalfExtent * (1.0 + 1e-12);
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || std::abs(p.x) > limit || std::abs(p.y) > limit) {
        throw DomainError(fmt::format("Mercator point ({}, {}) outside +/- pi*R", p.x, p.y));
    }
    const double lon = std::clamp(rad2deg(p.x / kMercatorRadius), -180.0, 180.0);
    const double lat = std::clamp(rad2deg(std::atan(std::sinh(p.y / kMercatorRadius))), -kMaxLatitude, kMaxLatitude);
    return {lon, lat};
}

double ground_resolution(int zoom, double lat_deg)
{
    if (zoom < 0 || zoom > 23) {
        throw DomainError(fmt::format("zoom {} outside [0, 23]", zoom));
    }
    if (!std::isfinite(lat_deg) || std::abs(lat_deg) > 90.0) {
        throw DomainError(fmt::format("latitude {} outside [-90, 90]", lat_deg));
    }
    return 2.0 * kPi * kMercatorRadius * std::cos(deg2rad(lat_deg)) / std::ldexp(256.0, zoom);
}

double haversine_distance(const GeoPoint& a, const GeoPoint& b)
{
    const double phi1 = deg2rad(a.lat);
    const double phi2 = deg2rad(b.lat);
    const double dphi = phi2 - phi1;
    const double dlambda = deg2rad(b.lon - a.lon);
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlambda / 2.0);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kMeanEarthRadius * std::asin(std::min(1.0, std::sqrt(h)));
}

LocalFrame::LocalFrame(const GeoPoint& origin) : origin_(origin), cos_lat_(std::cos(deg2rad(origin.lat))) {}

Eigen::Vector2d LocalFrame::to_local(const GeoPoint& p) const
{
    return {kMeanEarthRadius * deg2rad(wrap_lon_delta(p.lon - origin_.lon)) * cos_lat_,
            kMeanEarthRadius * deg2rad(p.lat - origin_.lat)};
}

GeoPoint LocalFrame::to_geo(const Eigen::Vector2d& local) const
{
    return normalized({origin_.lon + rad2deg(local.x() / (kMeanEarthRadius * cos_lat_)),
                       origin_.lat + rad2deg(local.y() / kMeanEarthRadius)});
}

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b)
{
    const Eigen::Vector2d ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 == 0.0) return (p - a).norm();
    const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

bool ring_contains(const Ring& ring, const GeoPoint& p)
{
    bool inside = false;
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const GeoPoint& a = ring[i];
        const GeoPoint& b = ring[j];
        if ((a.lat > p.lat) != (b.lat > p.lat) &&
            p.lon < (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon) {
            inside = !inside;
        }
    }
    return inside;
}

bool polygon_contains(const Polygon& poly, const GeoPoint& p)
{
    if (!ring_contains(poly.outer, p)) return false;
    return std::none_of(poly.holes.begin(), poly.holes.end(), [&p](const Ring& h) { return ring_contains(h, p); });
}

double polygon_boundary_distance(const GeoPoint& p, const Polygon& poly)
{
    const LocalFrame frame(p);
    double best = ring_distance(frame, poly.outer);
    for (const auto& h : poly.holes) best = std::min(best, ring_distance(frame, h));
    return best;
}

double point_to_geometry_distance(const GeoPoint& p, const Geometry& g)
{
    return std::visit(
        [&p](const auto& v) -> double {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Point>) {
                return haversine_distance(p, v.at);
            } else if constexpr (std::is_same_v<T, Polyline>) {
                if (v.vertices.size() < 2) throw ValidationError("polyline has fewer than 2 vertices");
                const LocalFrame frame(p);
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i + 1 < v.vertices.size(); ++i) {
                    best = std::min(best, segment_distance(Eigen::Vector2d::Zero(), frame.to_local(v.vertices[i]),
                                                           frame.to_local(v.vertices[i + 1])));
                }
                return best;
            } else {
                if (v.outer.size() < 4) throw ValidationError("polygon ring has fewer than 4 vertices");
                if (polygon_contains(v, p)) return 0.0;
                return polygon_boundary_distance(p, v);
            }
        },
        g);
}

} // namespace kilnaudit::geo
