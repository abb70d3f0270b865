#include "kilnaudit/compliance.hpp"

#include "kilnaudit/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace kilnaudit::compliance {

namespace {

std::size_t slot(features::FeatureCategory c) { return static_cast<std::size_t>(c); }

StrTree::Box degree_box(const geo::Geometry& g)
{
    const auto b = geo::bounds(g);
    return {Eigen::Vector2d(b.min_lon, b.min_lat), Eigen::Vector2d(b.max_lon, b.max_lat)};
}

} // namespace

SpatialIndex::SpatialIndex(const std::vector<features::FeatureLayer>& layers)
{
    for (const auto& layer : layers) {
        auto& dst = layers_[slot(layer.category)].features;
        dst.insert(dst.end(), layer.features.begin(), layer.features.end());
    }
    for (auto& l : layers_) {
        std::vector<StrTree::Box> boxes;
        boxes.reserve(l.features.size());
        for (const auto& f : l.features) {
            geo::validate(f.geometry);
            boxes.push_back(degree_box(f.geometry));
        }
        l.tree = StrTree(boxes);
    }
}

const std::vector<features::Feature>& SpatialIndex::features(features::FeatureCategory c) const
{
    return layers_[slot(c)].features;
}

StrTree::Box search_box(const geo::GeoPoint& p, double radius_m)
{
    // Latitude span is exact on the sphere; the longitude span uses the
    // smallest cos(lat) the disc can reach. A 1e-6 relative pad absorbs rounding.
    const double r = radius_m * (1.0 + 1e-6) + 1e-6;
    const double dlat = geo::rad2deg(r / geo::kMeanEarthRadius);
    const double far_lat = std::min(89.999, std::abs(p.lat) + dlat);
    const double dlon = std::min(360.0, dlat / std::cos(geo::deg2rad(far_lat)));
    return {Eigen::Vector2d(p.lon - dlon, p.lat - dlat), Eigen::Vector2d(p.lon + dlon, p.lat + dlat)};
}

std::vector<std::size_t> SpatialIndex::candidates(features::FeatureCategory c, const geo::GeoPoint& p,
                                                  double radius_m) const
{
    return layers_[slot(c)].tree.query(search_box(p, radius_m));
}

std::vector<SpatialIndex::Hit> SpatialIndex::within(features::FeatureCategory c, const geo::GeoPoint& p,
                                                    double radius_m) const
{
    std::vector<Hit> hits;
    const auto& feats = layers_[slot(c)].features;
    for (auto i : candidates(c, p, radius_m)) {
        const double d = geo::point_to_geometry_distance(p, feats[i].geometry);
        if (d <= radius_m) hits.push_back({i, d});
    }
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        return a.distance_m != b.distance_m ? a.distance_m < b.distance_m : a.index < b.index;
    });
    return hits;
}

namespace {

geo::Polygon footprint(const KilnRecord& k)
{
    const auto q = obb::corners(k.box);
    geo::Polygon p;
    for (int c = 0; c <= 4; ++c) p.outer.push_back(geo::mercator_to_wgs84(geo::MercatorPoint::from(q.col(c % 4))));
    return p;
}

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

bool segments_intersect(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                        const Eigen::Vector2d& d)
{
    const double d1 = cross(b - a, c - a), d2 = cross(b - a, d - a);
    const double d3 = cross(d - c, a - c), d4 = cross(d - c, b - c);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
    auto on = [](const Eigen::Vector2d& p, const Eigen::Vector2d& q, const Eigen::Vector2d& r, double s) {
        return s == 0.0 && std::min(p.x(), q.x()) <= r.x() && r.x() <= std::max(p.x(), q.x()) &&
               std::min(p.y(), q.y()) <= r.y() && r.y() <= std::max(p.y(), q.y());
    };
    return on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4);
}

double segment_segment(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                       const Eigen::Vector2d& d)
{
    if (segments_intersect(a, b, c, d)) return 0.0;
    return std::min({geo::segment_distance(a, c, d), geo::segment_distance(b, c, d), geo::segment_distance(c, a, b),
                     geo::segment_distance(d, a, b)});
}

// Kiln rectangle in the local frame; counterclockwise.
struct LocalRect {
    std::array<Eigen::Vector2d, 4> v;

    bool contains(const Eigen::Vector2d& p) const
    {
        bool pos = false, neg = false;
        for (int i = 0; i < 4; ++i) {
            const double s = cross(v[(i + 1) % 4] - v[i], p - v[i]);
            pos |= s > 0;
            neg |= s < 0;
        }
        return !(pos && neg);
    }

    double to_segment(const Eigen::Vector2d& a, const Eigen::Vector2d& b) const
    {
        if (contains(a) || contains(b)) return 0.0;
        double d = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 4; ++i) d = std::min(d, segment_segment(a, b, v[i], v[(i + 1) % 4]));
        return d;
    }
};

double edge_distance(const KilnRecord& k, const geo::Geometry& g)
{
    const geo::GeoPoint c = k.centroid();
    const geo::LocalFrame frame(c);
    const auto fp = footprint(k);
    LocalRect rect;
    for (int i = 0; i < 4; ++i) rect.v[static_cast<std::size_t>(i)] = frame.to_local(fp.outer[static_cast<std::size_t>(i)]);

    if (const auto* pt = std::get_if<geo::Point>(&g)) {
        const auto p = frame.to_local(pt->at);
        if (rect.contains(p)) return 0.0;
        double d = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 4; ++i) d = std::min(d, geo::segment_distance(p, rect.v[i], rect.v[(i + 1) % 4]));
        return d;
    }
    auto ring_distance = [&](const std::vector<geo::GeoPoint>& pts) {
        double d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
            d = std::min(d, rect.to_segment(frame.to_local(pts[i]), frame.to_local(pts[i + 1])));
            if (d == 0.0) break;
        }
        return d;
    };
    if (const auto* line = std::get_if<geo::Polyline>(&g)) return ring_distance(line->vertices);

    const auto& poly = std::get<geo::Polygon>(g);
    for (const auto& corner : fp.outer) {
        if (geo::polygon_contains(poly, corner)) return 0.0;
    }
    double d = ring_distance(poly.outer);
    for (const auto& h : poly.holes) d = std::min(d, ring_distance(h));
    return d;
}

double circumradius_ground(const KilnRecord& k)
{
    // Mercator lengths overstate ground lengths (scale factor >= 1), so this
    // is an upper bound.
    return 0.5 * std::hypot(k.box.w, k.box.h);
}

} // namespace

double kiln_distance(const KilnRecord& k, const geo::Geometry& g, DistanceMode mode)
{
    if (mode == DistanceMode::Centroid) return geo::point_to_geometry_distance(k.centroid(), g);
    return edge_distance(k, g);
}

features::FeatureLayer kiln_layer(const std::vector<KilnRecord>& kilns, DistanceMode mode)
{
    features::FeatureLayer layer;
    layer.category = features::FeatureCategory::Kiln;
    for (const auto& k : kilns) {
        if (!k.active()) continue;
        features::Feature f;
        f.id = k.id;
        if (mode == DistanceMode::Centroid) {
            f.geometry = geo::Point{k.centroid()};
        } else {
            f.geometry = footprint(k);
        }
        f.properties = {{"class", std::string(obb::to_string(k.cls))}};
        layer.features.push_back(std::move(f));
    }
    return layer;
}

KilnAudit audit_kiln(const KilnRecord& k, const SpatialIndex& index, const ComplianceRuleSet& rules,
                     DistanceMode mode)
{
    if (!rules.has_state(k.state)) {
        throw ConfigError(fmt::format("kiln {}: no rules for state '{}'", k.id, k.state));
    }
    KilnAudit audit;
    audit.kiln_id = k.id;
    audit.state = k.state;
    const geo::GeoPoint centroid = k.centroid();
    const double pad = mode == DistanceMode::Edge ? circumradius_ground(k) : 0.0;
    for (auto c : kAllCriteria) {
        const auto thr = rules.threshold(k.state, c);
        if (!thr) continue;
        const auto cat = category_of(c);
        const auto& feats = index.features(cat);
        const features::Feature* best = nullptr;
        double best_d = 0.0;
        for (auto i : index.candidates(cat, centroid, *thr + pad)) {
            const auto& f = feats[i];
            if (cat == features::FeatureCategory::Kiln && f.id == k.id) continue;
            const double d = kiln_distance(k, f.geometry, mode);
            if (!(d < *thr)) continue;
            if (best == nullptr || d < best_d || (d == best_d && f.id < best->id)) {
                best = &f;
                best_d = d;
            }
        }
        if (best != nullptr) audit.violations.push_back({c, best->id, best_d, *thr});
    }
    return audit;
}

std::vector<KilnAudit> audit_all(const std::vector<KilnRecord>& kilns, const SpatialIndex& index,
                                 const ComplianceRuleSet& rules, const AuditOptions& options)
{
    std::vector<const KilnRecord*> todo;
    for (const auto& k : kilns) {
        if (!k.active()) continue;
        if (options.skip_unknown_states && !rules.has_state(k.state)) continue;
        todo.push_back(&k);
    }
    std::vector<KilnAudit> out(todo.size());
    unsigned threads = options.threads ? options.threads : std::max(1U, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, todo.size() / 64)));

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        constexpr std::size_t kChunk = 32;
        while (true) {
            const std::size_t start = next.fetch_add(kChunk);
            if (start >= todo.size()) return;
            const std::size_t end = std::min(todo.size(), start + kChunk);
            try {
                for (std::size_t i = start; i < end; ++i) out[i] = audit_kiln(*todo[i], index, rules, options.mode);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = todo.size();
                return;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    if (error) std::rethrow_exception(error);
    return out;
}

std::vector<KilnAudit> audit_dataset(const std::vector<KilnRecord>& kilns,
                                     const std::vector<features::FeatureLayer>& layers,
                                     const ComplianceRuleSet& rules, const AuditOptions& options)
{
    std::vector<features::FeatureLayer> all;
    for (const auto& l : layers) {
        if (l.category != features::FeatureCategory::Kiln) all.push_back(l);
    }
    all.push_back(kiln_layer(kilns, options.mode));
    const SpatialIndex index(all);
    return audit_all(kilns, index, rules, options);
}

int percentage(std::size_t part, std::size_t total)
{
    if (total == 0) return 0;
    // Round half up in integer arithmetic.
    return static_cast<int>((200 * part + total) / (2 * total));
}

ComplianceSummary aggregate(const std::vector<KilnAudit>& audits, const ComplianceRuleSet& rules)
{
    ComplianceSummary s;
    const auto& states = rules.states();
    for (const auto& name : states) {
        ComplianceSummary::Column col;
        col.name = name;
        for (std::size_t c = 0; c < kAllCriteria.size(); ++c) {
            if (rules.threshold(name, kAllCriteria[c])) col.violations[c] = 0;
        }
        s.columns.push_back(col);
    }
    for (const auto& a : audits) {
        const auto it = std::find(states.begin(), states.end(), a.state);
        if (it == states.end()) continue;
        auto& col = s.columns[static_cast<std::size_t>(it - states.begin())];
        ++col.kilns;
        if (!a.compliant()) ++col.non_compliant;
        for (const auto& v : a.violations) {
            auto& cell = col.violations[static_cast<std::size_t>(v.criterion)];
            if (cell) ++*cell;
        }
    }
    ComplianceSummary::Column total;
    total.name = "Total";
    for (const auto& col : s.columns) {
        for (std::size_t c = 0; c < kAllCriteria.size(); ++c) {
            if (col.violations[c]) total.violations[c] = total.violations[c].value_or(0) + *col.violations[c];
        }
        total.non_compliant += col.non_compliant;
        total.kilns += col.kilns;
    }
    s.columns.push_back(total);
    for (auto& col : s.columns) col.percentage = percentage(col.non_compliant, col.kilns);
    return s;
}

nlohmann::json ComplianceSummary::to_json() const
{
    nlohmann::json names = nlohmann::json::array();
    nlohmann::json nc = nlohmann::json::array(), kilns = nlohmann::json::array(), pct = nlohmann::json::array();
    for (const auto& col : columns) {
        names.push_back(col.name);
        nc.push_back(col.non_compliant);
        kilns.push_back(col.kilns);
        pct.push_back(col.percentage);
    }
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t c = 0; c < kAllCriteria.size(); ++c) {
        nlohmann::json values = nlohmann::json::array();
        for (const auto& col : columns) {
            values.push_back(col.violations[c] ? nlohmann::json(*col.violations[c]) : nlohmann::json(nullptr));
        }
        rows.push_back({{"criterion", std::string(to_string(kAllCriteria[c]))}, {"values", values}});
    }
    return {{"columns", names}, {"criteria", rows}, {"non_compliant", nc}, {"kiln_count", kilns}, {"percentage", pct}};
}

std::string ComplianceSummary::to_table() const
{
    std::string out = fmt::format("{:<18}", "");
    for (const auto& col : columns) out += fmt::format(" {:>14}", col.name);
    out += '\n';
    for (std::size_t c = 0; c < kAllCriteria.size(); ++c) {
        out += fmt::format("{:<18}", to_string(kAllCriteria[c]));
        for (const auto& col : columns) {
            out += col.violations[c] ? fmt::format(" {:>14}", *col.violations[c]) : fmt::format(" {:>14}", "-");
        }
        out += '\n';
    }
    auto row = [&](const char* label, auto get) {
        out += fmt::format("{:<18}", label);
        for (const auto& col : columns) out += fmt::format(" {:>14}", get(col));
        out += '\n';
    };
    row("non_compliant", [](const Column& c) { return c.non_compliant; });
    row("kiln_count", [](const Column& c) { return c.kilns; });
    row("percentage", [](const Column& c) { return c.percentage; });
    return out;
}

namespace {

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

} // namespace

std::string violations_csv(const std::vector<KilnAudit>& audits)
{
    std::string out = "kiln_id,criterion,distance_m,threshold_m,feature_id\n";
    for (const auto& a : audits) {
        for (const auto& v : a.violations) {
            out += fmt::format("{},{},{:.3f},{},{}\n", csv_field(a.kiln_id), to_string(v.criterion), v.distance_m,
                               v.threshold_m, csv_field(v.feature_id));
        }
    }
    return out;
}

std::size_t assign_states(std::vector<KilnRecord>& kilns, const regions::RegionIndex& states)
{
    std::size_t unassigned = 0;
    for (auto& k : kilns) {
        const auto a = states.assign(k.centroid());
        k.state = a.name;
        if (!a.assigned()) ++unassigned;
    }
    return unassigned;
}

} // namespace kilnaudit::compliance
