#ifndef KILNAUDIT_REGIONS_HPP
#define KILNAUDIT_REGIONS_HPP

#include "kilnaudit/features.hpp"
#include "kilnaudit/geo.hpp"
#include "kilnaudit/rtree.hpp"

#include <string>
#include <vector>

namespace kilnaudit::regions {

struct Region {
    std::string name;
    geo::Polygon polygon;
};

/// Named polygons (states, districts) from a layer; multi-polygon parts keep
/// the feature's name. Throws ValidationError when a feature has no string
/// `name_key` property or is not a polygon.
std::vector<Region> from_layer(const features::FeatureLayer& layer, const std::string& name_key = "name");

struct Assignment {
    std::string name;  // empty when unassigned
    bool on_boundary = false;
    bool assigned() const { return !name.empty(); }
};

/// Point-in-polygon assignment. A point on a region boundary (within
/// `boundary_tolerance_m`) is a candidate of that region; among several
/// candidates the lexicographically first name wins and `on_boundary` is set.
class RegionIndex {
public:
    explicit RegionIndex(std::vector<Region> regions, double boundary_tolerance_m = 1e-6);

    Assignment assign(const geo::GeoPoint& p) const;
    const std::vector<Region>& regions() const { return regions_; }

private:
    std::vector<Region> regions_;
    StrTree tree_;
    double tolerance_;
};

} // namespace kilnaudit::regions

#endif
