#ifndef KILNAUDIT_FEATURES_HPP
#define KILNAUDIT_FEATURES_HPP

#include "kilnaudit/geo.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kilnaudit::features {

/// Kinds of geographic features the siting rules refer to.
enum class FeatureCategory {
    Habitation,
    Orchard,
    NatureReserve,
    School,
    Hospital,
    Religious,
    NationalHighway,
    StateHighway,
    DistrictHighway,
    Wetland,
    River,
    Railway,
    Kiln,
};

inline constexpr std::array<FeatureCategory, 13> kAllCategories{
    FeatureCategory::Habitation,      FeatureCategory::Orchard,      FeatureCategory::NatureReserve,
    FeatureCategory::School,          FeatureCategory::Hospital,     FeatureCategory::Religious,
    FeatureCategory::NationalHighway, FeatureCategory::StateHighway, FeatureCategory::DistrictHighway,
    FeatureCategory::Wetland,         FeatureCategory::River,        FeatureCategory::Railway,
    FeatureCategory::Kiln,
};

// snake_case names, e.g. "nature_reserve".
std::string_view to_string(FeatureCategory c);
std::optional<FeatureCategory> category_from_string(std::string_view s);

using FeatureFilter = std::function<bool(const nlohmann::json& properties)>;

/// OpenStreetMap attribute filter for a category:
///   habitation/orchard/nature_reserve/wetland/river: fclass equals the name
///   school/hospital: type equals the name; religious: type is temple, mosque or church
///   national/state/district highway: ref starts with NH or NE / SH / MDR
///   railway and kiln: no filter
/// Total over any JSON value; non-objects behave like an empty property map.
bool siting_accepts(FeatureCategory c, const nlohmann::json& properties);
FeatureFilter siting_filter(FeatureCategory c);
FeatureFilter accept_all();

struct Feature {
    std::string id;
    geo::Geometry geometry;
    nlohmann::json properties = nlohmann::json::object();
};

// A feature that could not be represented; `index` is its position in the
// source collection.
struct FeatureIssue {
    std::size_t index = 0;
    std::string id;
    std::string message;
};

struct FeatureLayer {
    FeatureCategory category = FeatureCategory::Habitation;
    std::vector<Feature> features;
    std::vector<FeatureIssue> issues;
    // Features that parsed but failed the filter.
    std::size_t filtered_out = 0;
};

/// Parses a WGS84 GeoJSON FeatureCollection. Multi-geometries are split into
/// one feature per part (ids suffixed "#k"). Bad features are recorded in
/// `issues`; malformed JSON throws ParseError carrying the byte offset.
FeatureLayer parse_feature_geojson(std::string_view text, FeatureCategory category,
                                   const FeatureFilter& filter = {});

nlohmann::json geometry_to_geojson(const geo::Geometry& g);
// Throws ValidationError for unsupported types and invalid geometry.
std::vector<geo::Geometry> geometries_from_geojson(const nlohmann::json& g);

std::string write_feature_geojson(const FeatureLayer& layer);

} // namespace kilnaudit::features

#endif
