#include "kilnaudit/regions.hpp"

#include "kilnaudit/error.hpp"

#include <fmt/core.h>

namespace kilnaudit::regions {

std::vector<Region> from_layer(const features::FeatureLayer& layer, const std::string& name_key)
{
    std::vector<Region> out;
    for (const auto& f : layer.features) {
        const auto* poly = std::get_if<geo::Polygon>(&f.geometry);
        if (poly == nullptr) throw ValidationError(fmt::format("region feature {} is not a polygon", f.id));
        const auto it = f.properties.find(name_key);
        if (it == f.properties.end() || !it->is_string() || it->get<std::string>().empty()) {
            throw ValidationError(fmt::format("region feature {} has no '{}' property", f.id, name_key));
        }
        out.push_back({it->get<std::string>(), *poly});
    }
    return out;
}

namespace {

StrTree::Box degree_box(const geo::Polygon& p)
{
    const auto b = geo::bounds(p);
    return {Eigen::Vector2d(b.min_lon, b.min_lat), Eigen::Vector2d(b.max_lon, b.max_lat)};
}

std::vector<StrTree::Box> boxes(const std::vector<Region>& rs)
{
    std::vector<StrTree::Box> out;
    for (const auto& r : rs) out.push_back(degree_box(r.polygon));
    return out;
}

} // namespace

RegionIndex::RegionIndex(std::vector<Region> regions, double boundary_tolerance_m)
    : regions_(std::move(regions)), tree_(boxes(regions_)), tolerance_(boundary_tolerance_m)
{
    for (const auto& r : regions_) geo::validate(geo::Geometry{r.polygon});
}

Assignment RegionIndex::assign(const geo::GeoPoint& p) const
{
    // Pad the degree box a little so boundary points are not lost.
    const double pad = 1e-9;
    const StrTree::Box q(Eigen::Vector2d(p.lon - pad, p.lat - pad), Eigen::Vector2d(p.lon + pad, p.lat + pad));
    Assignment a;
    tree_.query(q, [&](std::size_t i) {
        const auto& r = regions_[i];
        const bool boundary = geo::polygon_boundary_distance(p, r.polygon) <= tolerance_;
        if (!boundary && !geo::polygon_contains(r.polygon, p)) return;
        if (boundary) a.on_boundary = true;
        if (a.name.empty() || r.name < a.name) a.name = r.name;
    });
    return a;
}

} // namespace kilnaudit::regions
