#ifndef KILNAUDIT_GEO_HPP
#define KILNAUDIT_GEO_HPP

#include <Eigen/Core>

#include <numbers>
#include <variant>
#include <vector>

namespace kilnaudit::geo {

inline constexpr double kPi = std::numbers::pi;

// Sphere radius that defines EPSG:3857.
inline constexpr double kMercatorRadius = 6378137.0;
// IUGG mean Earth radius, used for every ground distance.
inline constexpr double kMeanEarthRadius = 6371008.8;
inline constexpr double kMercatorHalfExtent = kPi * kMercatorRadius;
// atan(sinh(pi)) in degrees: the latitude at which |y| reaches pi*R.
inline constexpr double kMaxLatitude = 85.05112877980659;

inline constexpr double deg2rad(double d) { return d * kPi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / kPi; }

/// WGS84 longitude/latitude in degrees.
struct GeoPoint {
    double lon = 0.0;
    double lat = 0.0;

    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

/// EPSG:3857 coordinates in projected meters.
struct MercatorPoint {
    double x = 0.0;
    double y = 0.0;

    Eigen::Vector2d vec() const { return {x, y}; }
    static MercatorPoint from(const Eigen::Vector2d& v) { return {v.x(), v.y()}; }

    friend bool operator==(const MercatorPoint&, const MercatorPoint&) = default;
};

bool is_valid(const GeoPoint& p);
void validate(const GeoPoint& p);

// Wraps longitude into [-180, 180]; latitude is left untouched.
GeoPoint normalized(GeoPoint p);

struct Point {
    GeoPoint at;
};

struct Polyline {
    std::vector<GeoPoint> vertices;
};

// Closed ring: first vertex repeated as the last one.
using Ring = std::vector<GeoPoint>;

struct Polygon {
    Ring outer;
    std::vector<Ring> holes;
};

using Geometry = std::variant<Point, Polyline, Polygon>;

// Throws ValidationError for unclosed rings, too few distinct vertices, or
// invalid coordinates.
void validate(const Geometry& g);
void validate_ring(const Ring& ring);

/// Longitude/latitude bounding box in degrees.
struct Bounds {
    double min_lon = 0.0;
    double min_lat = 0.0;
    double max_lon = 0.0;
    double max_lat = 0.0;
};

Bounds bounds(const Geometry& g);

MercatorPoint wgs84_to_mercator(const GeoPoint& p);
GeoPoint mercator_to_wgs84(const MercatorPoint& p);

/// Meters per pixel of a 256 px slippy-map tile at the given zoom and latitude.
double ground_resolution(int zoom, double lat_deg);

double haversine_distance(const GeoPoint& a, const GeoPoint& b);

/// Ground distance in meters from a point to a geometry. Zero when the point
/// is on the geometry or inside a polygon (and outside its holes).
double point_to_geometry_distance(const GeoPoint& p, const Geometry& g);

// Even-odd ray casting in lon/lat.
bool ring_contains(const Ring& ring, const GeoPoint& p);
bool polygon_contains(const Polygon& poly, const GeoPoint& p);

/// Equirectangular tangent frame centred on an origin point; meters east/north.
class LocalFrame {
public:
    explicit LocalFrame(const GeoPoint& origin);

    Eigen::Vector2d to_local(const GeoPoint& p) const;
    GeoPoint to_geo(const Eigen::Vector2d& local) const;

private:
    GeoPoint origin_;
    double cos_lat_;
};

// Planar point-to-segment distance.
double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b);

// Distance from p to the nearest edge of any ring (outer or holes), ignoring
// containment.
double polygon_boundary_distance(const GeoPoint& p, const Polygon& poly);

} // namespace kilnaudit::geo

#endif
