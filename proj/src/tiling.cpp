#include "kilnaudit/tiling.hpp"

#include "kilnaudit/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

namespace kilnaudit::tiling {

void validate(const CropSpec& spec)
{
    if (spec.crop_size <= 0 || spec.image_size <= 0) {
        throw ValidationError("image and crop sizes must be positive");
    }
    if (spec.overlap < 0 || spec.overlap >= spec.crop_size) {
        throw ValidationError(fmt::format("overlap {} must lie in [0, crop_size={})", spec.overlap, spec.crop_size));
    }
    if (spec.crop_size > spec.image_size) {
        throw ValidationError(
            fmt::format("crop size {} exceeds image size {}", spec.crop_size, spec.image_size));
    }
}

std::vector<int> crop_offsets(const CropSpec& spec)
{
    validate(spec);
    std::vector<int> offsets;
    const int last = spec.image_size - spec.crop_size;
    for (int o = 0; o < last; o += spec.stride()) offsets.push_back(o);
    offsets.push_back(last);
    return offsets;
}

std::vector<CropOrigin> crop_origins(const CropSpec& spec)
{
    const auto offsets = crop_offsets(spec);
    std::vector<CropOrigin> out;
    out.reserve(offsets.size() * offsets.size());
    for (int y : offsets) {
        for (int x : offsets) out.push_back({x, y});
    }
    return out;
}

std::string_view to_string(CellStatus s)
{
    switch (s) {
    case CellStatus::Unvisited: return "unvisited";
    case CellStatus::InProgress: return "in-progress";
    case CellStatus::Done: return "done";
    }
    return "?";
}

std::optional<CellStatus> cell_status_from_string(std::string_view s)
{
    for (auto st : {CellStatus::Unvisited, CellStatus::InProgress, CellStatus::Done}) {
        if (to_string(st) == s) return st;
    }
    return std::nullopt;
}

namespace {

using Path = std::vector<Eigen::Vector2d>;

Path to_mercator(const geo::Ring& ring)
{
    Path out;
    out.reserve(ring.size());
    // Closed rings repeat the first vertex; the clipper wants it once.
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) out.push_back(geo::wgs84_to_mercator(ring[i]).vec());
    return out;
}

double path_area(const Path& p)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& a = p[i];
        const auto& b = p[(i + 1) % p.size()];
        acc += a.x() * b.y() - b.x() * a.y();
    }
    return 0.5 * acc;
}

// Sutherland-Hodgman against one axis-aligned half-plane: keep points with
// sign * coord(axis) >= sign * bound.
Path clip_half_plane(const Path& in, int axis, double bound, double sign)
{
    Path out;
    if (in.empty()) return out;
    auto inside = [&](const Eigen::Vector2d& v) { return sign * v[axis] >= sign * bound; };
    auto cut = [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
        const double t = (bound - a[axis]) / (b[axis] - a[axis]);
        Eigen::Vector2d v = a + t * (b - a);
        v[axis] = bound;
        return v;
    };
    for (std::size_t i = 0; i < in.size(); ++i) {
        const auto& cur = in[i];
        const auto& prev = in[(i + in.size() - 1) % in.size()];
        if (inside(cur)) {
            if (!inside(prev)) out.push_back(cut(prev, cur));
            out.push_back(cur);
        } else if (inside(prev)) {
            out.push_back(cut(prev, cur));
        }
    }
    return out;
}

// Area of a (possibly non-convex) path inside an axis-aligned rectangle. The
// rectangle is convex, so Sutherland-Hodgman yields the correct area even when
// the clipped output contains degenerate connecting edges. Works relative to
// the rectangle corner: shoelace sums at raw Mercator magnitudes lose ~1e-3 m^2.
double clipped_area(const Path& p, double x0, double y0, double x1, double y1)
{
    const Eigen::Vector2d corner(x0, y0);
    Path c;
    c.reserve(p.size());
    for (const auto& v : p) c.push_back(v - corner);
    c = clip_half_plane(c, 0, 0.0, 1.0);
    c = clip_half_plane(c, 0, x1 - x0, -1.0);
    c = clip_half_plane(c, 1, 0.0, 1.0);
    c = clip_half_plane(c, 1, y1 - y0, -1.0);
    return std::abs(path_area(c));
}

} // namespace

double mercator_area(const geo::Polygon& poly)
{
    if (poly.outer.empty()) return 0.0;
    const Eigen::Vector2d ref = geo::wgs84_to_mercator(poly.outer.front()).vec();
    auto local_area = [&ref](const geo::Ring& ring) {
        Path p = to_mercator(ring);
        for (auto& v : p) v -= ref;
        return std::abs(path_area(p));
    };
    double area = local_area(poly.outer);
    for (const auto& h : poly.holes) area -= local_area(h);
    return area;
}

std::vector<GridCell> annotation_grid(const geo::Geometry& region, double cell_km)
{
    const auto* poly = std::get_if<geo::Polygon>(&region);
    if (poly == nullptr) throw ValidationError("annotation grid region must be a polygon");
    if (poly->outer.empty()) return {};
    geo::validate(region);
    if (!(cell_km > 0.0)) throw ValidationError("cell size must be positive");

    const double cell = cell_km * 1000.0;
    const Path outer = to_mercator(poly->outer);
    std::vector<Path> holes;
    for (const auto& h : poly->holes) holes.push_back(to_mercator(h));

    double min_x = outer[0].x(), max_x = min_x, min_y = outer[0].y(), max_y = min_y;
    for (const auto& v : outer) {
        min_x = std::min(min_x, v.x());
        max_x = std::max(max_x, v.x());
        min_y = std::min(min_y, v.y());
        max_y = std::max(max_y, v.y());
    }

    const double origin = geo::kMercatorHalfExtent;
    const auto col0 = static_cast<long long>(std::floor((min_x + origin) / cell));
    const auto col1 = static_cast<long long>(std::ceil((max_x + origin) / cell));
    const auto row0 = static_cast<long long>(std::floor((origin - max_y) / cell));
    const auto row1 = static_cast<long long>(std::ceil((origin - min_y) / cell));
    const double eps = 1e-9 * cell * cell;

    std::vector<GridCell> cells;
    for (long long row = row0; row < row1; ++row) {
        const double y1 = origin - static_cast<double>(row) * cell;
        const double y0 = y1 - cell;
        for (long long col = col0; col < col1; ++col) {
            const double x0 = static_cast<double>(col) * cell - origin;
            const double x1 = x0 + cell;
            double area = clipped_area(outer, x0, y0, x1, y1);
            if (area <= eps) continue;
            for (const auto& h : holes) area -= clipped_area(h, x0, y0, x1, y1);
            if (area <= eps) continue;

            GridCell gc;
            gc.row = static_cast<int>(row);
            gc.col = static_cast<int>(col);
            const auto nw = geo::mercator_to_wgs84({x0, y1});
            const auto se = geo::mercator_to_wgs84({x1, y0});
            gc.polygon.outer = {{nw.lon, se.lat}, {se.lon, se.lat}, {se.lon, nw.lat}, {nw.lon, nw.lat}, {nw.lon, se.lat}};
            cells.push_back(std::move(gc));
        }
    }
    return cells;
}

nlohmann::json grid_to_geojson(const std::vector<GridCell>& cells)
{
    nlohmann::json features = nlohmann::json::array();
    for (const auto& c : cells) {
        nlohmann::json ring = nlohmann::json::array();
        for (const auto& p : c.polygon.outer) ring.push_back({p.lon, p.lat});
        nlohmann::json props = {{"row", c.row}, {"col", c.col}, {"status", std::string(to_string(c.status))}};
        if (!c.assignee.empty()) props["assignee"] = c.assignee;
        features.push_back({{"type", "Feature"},
                            {"geometry", {{"type", "Polygon"}, {"coordinates", nlohmann::json::array({ring})}}},
                            {"properties", props}});
    }
    return {{"type", "FeatureCollection"}, {"features", features}};
}

std::vector<GridCell> grid_from_geojson(const nlohmann::json& doc)
{
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features")) {
        throw ParseError("grid document is not a GeoJSON FeatureCollection", 0);
    }
    std::vector<GridCell> cells;
    std::size_t index = 0;
    for (const auto& f : doc.at("features")) {
        try {
            GridCell c;
            const auto& props = f.at("properties");
            c.row = props.at("row").get<int>();
            c.col = props.at("col").get<int>();
            const auto status = cell_status_from_string(props.at("status").get<std::string>());
            if (!status) throw ParseError("unknown cell status", 0);
            c.status = *status;
            c.assignee = props.value("assignee", "");
            for (const auto& xy : f.at("geometry").at("coordinates").at(0)) {
                c.polygon.outer.push_back({xy.at(0).get<double>(), xy.at(1).get<double>()});
            }
            cells.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(fmt::format("grid feature {}: {}", index, e.what()), 0);
        } catch (const ParseError& e) {
            throw ParseError(fmt::format("grid feature {}: {}", index, e.what()), 0);
        }
        ++index;
    }
    return cells;
}

} // namespace kilnaudit::tiling
