#include "kilnaudit/features.hpp"

#include "kilnaudit/error.hpp"

#include <fmt/core.h>

namespace kilnaudit::features {

std::string_view to_string(FeatureCategory c)
{
    switch (c) {
    case FeatureCategory::Habitation: return "habitation";
    case FeatureCategory::Orchard: return "orchard";
    case FeatureCategory::NatureReserve: return "nature_reserve";
    case FeatureCategory::School: return "school";
    case FeatureCategory::Hospital: return "hospital";
    case FeatureCategory::Religious: return "religious";
    case FeatureCategory::NationalHighway: return "national_highway";
    case FeatureCategory::StateHighway: return "state_highway";
    case FeatureCategory::DistrictHighway: return "district_highway";
    case FeatureCategory::Wetland: return "wetland";
    case FeatureCategory::River: return "river";
    case FeatureCategory::Railway: return "railway";
    case FeatureCategory::Kiln: return "kiln";
    }
    return "?";
}

std::optional<FeatureCategory> category_from_string(std::string_view s)
{
    for (auto c : kAllCategories) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

namespace {

std::string string_prop(const nlohmann::json& props, const char* key)
{
    if (!props.is_object()) return {};
    const auto it = props.find(key);
    if (it == props.end() || !it->is_string()) return {};
    return it->get<std::string>();
}

bool starts_with_any(const std::string& s, std::initializer_list<std::string_view> prefixes)
{
    for (auto p : prefixes) {
        if (s.starts_with(p)) return true;
    }
    return false;
}

} // namespace

bool siting_accepts(FeatureCategory c, const nlohmann::json& properties)
{
    switch (c) {
    case FeatureCategory::Habitation: return string_prop(properties, "fclass") == "residential";
    case FeatureCategory::Orchard:
    case FeatureCategory::NatureReserve:
    case FeatureCategory::Wetland:
    case FeatureCategory::River: return string_prop(properties, "fclass") == to_string(c);
    case FeatureCategory::School:
    case FeatureCategory::Hospital: return string_prop(properties, "type") == to_string(c);
    case FeatureCategory::Religious: {
        const auto t = string_prop(properties, "type");
        return t == "temple" || t == "mosque" || t == "church";
    }
    case FeatureCategory::NationalHighway: return starts_with_any(string_prop(properties, "ref"), {"NH", "NE"});
    case FeatureCategory::StateHighway: return starts_with_any(string_prop(properties, "ref"), {"SH"});
    case FeatureCategory::DistrictHighway: return starts_with_any(string_prop(properties, "ref"), {"MDR"});
    case FeatureCategory::Railway:
    case FeatureCategory::Kiln: return true;
    }
    return false;
}

FeatureFilter siting_filter(FeatureCategory c)
{
    return [c](const nlohmann::json& p) { return siting_accepts(c, p); };
}

FeatureFilter accept_all()
{
    return [](const nlohmann::json&) { return true; };
}

namespace {

geo::GeoPoint position(const nlohmann::json& xy)
{
    if (!xy.is_array() || xy.size() < 2 || !xy[0].is_number() || !xy[1].is_number()) {
        throw ValidationError("position must be an array of at least two numbers");
    }
    return {xy[0].get<double>(), xy[1].get<double>()};
}

std::vector<geo::GeoPoint> positions(const nlohmann::json& arr)
{
    if (!arr.is_array()) throw ValidationError("expected an array of positions");
    std::vector<geo::GeoPoint> out;
    out.reserve(arr.size());
    for (const auto& xy : arr) out.push_back(position(xy));
    return out;
}

geo::Polygon polygon(const nlohmann::json& rings)
{
    if (!rings.is_array() || rings.empty()) throw ValidationError("polygon needs at least one ring");
    geo::Polygon p;
    p.outer = positions(rings[0]);
    for (std::size_t i = 1; i < rings.size(); ++i) p.holes.push_back(positions(rings[i]));
    return p;
}

nlohmann::json ring_json(const geo::Ring& ring)
{
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : ring) out.push_back({p.lon, p.lat});
    return out;
}

} // namespace

std::vector<geo::Geometry> geometries_from_geojson(const nlohmann::json& g)
{
    if (!g.is_object()) throw ValidationError("geometry is missing or not an object");
    const auto type = g.value("type", std::string{});
    const auto coords_it = g.find("coordinates");
    if (coords_it == g.end()) throw ValidationError(fmt::format("{} geometry has no coordinates", type));
    const auto& coords = *coords_it;

    std::vector<geo::Geometry> out;
    if (type == "Point") {
        out.emplace_back(geo::Point{position(coords)});
    } else if (type == "MultiPoint") {
        for (const auto& p : positions(coords)) out.emplace_back(geo::Point{p});
    } else if (type == "LineString") {
        out.emplace_back(geo::Polyline{positions(coords)});
    } else if (type == "MultiLineString") {
        if (!coords.is_array()) throw ValidationError("MultiLineString coordinates must be an array");
        for (const auto& line : coords) out.emplace_back(geo::Polyline{positions(line)});
    } else if (type == "Polygon") {
        out.emplace_back(polygon(coords));
    } else if (type == "MultiPolygon") {
        if (!coords.is_array()) throw ValidationError("MultiPolygon coordinates must be an array");
        for (const auto& rings : coords) out.emplace_back(polygon(rings));
    } else {
        throw ValidationError(fmt::format("unsupported geometry type '{}'", type));
    }
    for (const auto& geom : out) geo::validate(geom);
    return out;
}

nlohmann::json geometry_to_geojson(const geo::Geometry& g)
{
    if (const auto* p = std::get_if<geo::Point>(&g)) {
        return {{"type", "Point"}, {"coordinates", {p->at.lon, p->at.lat}}};
    }
    if (const auto* l = std::get_if<geo::Polyline>(&g)) {
        return {{"type", "LineString"}, {"coordinates", ring_json(l->vertices)}};
    }
    const auto& poly = std::get<geo::Polygon>(g);
    nlohmann::json rings = nlohmann::json::array({ring_json(poly.outer)});
    for (const auto& h : poly.holes) rings.push_back(ring_json(h));
    return {{"type", "Polygon"}, {"coordinates", rings}};
}

namespace {

std::string feature_id(const nlohmann::json& f, const nlohmann::json& props, FeatureCategory c, std::size_t index)
{
    for (const char* key : {"id", "osm_id"}) {
        if (props.is_object() && props.contains(key)) {
            const auto& v = props[key];
            if (v.is_string()) return v.get<std::string>();
            if (v.is_number_integer()) return std::to_string(v.get<long long>());
        }
    }
    if (f.contains("id")) {
        const auto& v = f["id"];
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_integer()) return std::to_string(v.get<long long>());
    }
    return fmt::format("{}:{}", to_string(c), index);
}

} // namespace

FeatureLayer parse_feature_geojson(std::string_view text, FeatureCategory category, const FeatureFilter& filter)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        // nlohmann counts bytes from 1.
        const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
        throw ParseError(fmt::format("malformed JSON at byte {}: {}", offset, e.what()), 0, offset);
    }
    if (!doc.is_object() || doc.value("type", std::string{}) != "FeatureCollection") {
        throw ParseError("document is not a GeoJSON FeatureCollection", 0);
    }
    const auto feats = doc.find("features");
    if (feats == doc.end() || !feats->is_array()) throw ParseError("FeatureCollection has no features array", 0);

    const FeatureFilter accept = filter ? filter : siting_filter(category);
    FeatureLayer layer;
    layer.category = category;
    for (std::size_t i = 0; i < feats->size(); ++i) {
        const auto& f = (*feats)[i];
        const nlohmann::json props =
            f.is_object() && f.contains("properties") && f["properties"].is_object() ? f["properties"]
                                                                                     : nlohmann::json::object();
        const std::string id = f.is_object() ? feature_id(f, props, category, i) : fmt::format("{}:{}", to_string(category), i);
        if (!f.is_object() || f.value("type", std::string{}) != "Feature") {
            layer.issues.push_back({i, id, "not a GeoJSON Feature"});
            continue;
        }
        if (!accept(props)) {
            ++layer.filtered_out;
            continue;
        }
        std::vector<geo::Geometry> parts;
        try {
            parts = geometries_from_geojson(f.contains("geometry") ? f["geometry"] : nlohmann::json());
        } catch (const Error& e) {
            layer.issues.push_back({i, id, e.what()});
            continue;
        }
        for (std::size_t k = 0; k < parts.size(); ++k) {
            Feature out;
            out.id = parts.size() == 1 ? id : fmt::format("{}#{}", id, k);
            out.geometry = std::move(parts[k]);
            out.properties = props;
            layer.features.push_back(std::move(out));
        }
    }
    return layer;
}

std::string write_feature_geojson(const FeatureLayer& layer)
{
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : layer.features) {
        nlohmann::json props = f.properties.is_object() ? f.properties : nlohmann::json::object();
        props["id"] = f.id;
        feats.push_back({{"type", "Feature"}, {"geometry", geometry_to_geojson(f.geometry)}, {"properties", props}});
    }
    return nlohmann::json{{"type", "FeatureCollection"}, {"features", feats}}.dump(1) + "\n";
}

} // namespace kilnaudit::features
