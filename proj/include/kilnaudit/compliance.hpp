#ifndef KILNAUDIT_COMPLIANCE_HPP
#define KILNAUDIT_COMPLIANCE_HPP

#include "kilnaudit/features.hpp"
#include "kilnaudit/kiln.hpp"
#include "kilnaudit/regions.hpp"
#include "kilnaudit/rtree.hpp"
#include "kilnaudit/rules.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace kilnaudit::compliance {

/// Where distances are measured from: the kiln box centroid, or the nearest
/// point of its footprint.
enum class DistanceMode { Centroid, Edge };

/// Per-category R-trees over feature bounding boxes in lon/lat degrees. The
/// distance functions work in an equirectangular frame, which is linear in
/// lon/lat, so degree boxes bound segments exactly as they are measured.
class SpatialIndex {
public:
    struct Hit {
        std::size_t index = 0;
        double distance_m = 0.0;
    };

    SpatialIndex() = default;
    explicit SpatialIndex(const std::vector<features::FeatureLayer>& layers);

    const std::vector<features::Feature>& features(features::FeatureCategory c) const;

    /// Indices of features whose box may lie within `radius_m` ground meters
    /// of `p`: a superset of the exact answer.
    std::vector<std::size_t> candidates(features::FeatureCategory c, const geo::GeoPoint& p, double radius_m) const;

    /// Features within `radius_m` (exact point-to-geometry distance), sorted by
    /// distance then index.
    std::vector<Hit> within(features::FeatureCategory c, const geo::GeoPoint& p, double radius_m) const;

private:
    struct Layer {
        std::vector<features::Feature> features;
        StrTree tree;
    };
    std::array<Layer, features::kAllCategories.size()> layers_;
};

/// Lon/lat rectangle containing every point within `radius_m` ground meters of
/// `p`. Does not wrap across the antimeridian.
StrTree::Box search_box(const geo::GeoPoint& p, double radius_m);

/// Active kilns as a feature layer for the inter-kiln rule: centroids in
/// centroid mode, footprint polygons in edge mode. Feature ids are kiln ids.
features::FeatureLayer kiln_layer(const std::vector<KilnRecord>& kilns, DistanceMode mode = DistanceMode::Centroid);

/// Ground distance from a kiln to a geometry under the given mode.
double kiln_distance(const KilnRecord& k, const geo::Geometry& g, DistanceMode mode);

struct Violation {
    Criterion criterion = Criterion::InterKiln;
    std::string feature_id;
    double distance_m = 0.0;
    double threshold_m = 0.0;

    friend bool operator==(const Violation&, const Violation&) = default;
};

struct KilnAudit {
    std::string kiln_id;
    std::string state;
    // In criterion order; at most one entry per criterion (the nearest feature).
    std::vector<Violation> violations;

    bool compliant() const { return violations.empty(); }
};

/// Checks every criterion that has a rule in the kiln's state: a violation is
/// a feature of that category strictly closer than the threshold. Inter-kiln
/// uses the Kiln layer and skips the kiln itself. Ties in distance go to the
/// smaller feature id. Throws ConfigError when the state has no rules.
KilnAudit audit_kiln(const KilnRecord& k, const SpatialIndex& index, const ComplianceRuleSet& rules,
                     DistanceMode mode = DistanceMode::Centroid);

struct AuditOptions {
    DistanceMode mode = DistanceMode::Centroid;
    // 0 = hardware concurrency.
    unsigned threads = 0;
    // Leave kilns of unknown states out instead of failing.
    bool skip_unknown_states = false;
};

/// Audits all active kilns in parallel; output order follows the input.
std::vector<KilnAudit> audit_all(const std::vector<KilnRecord>& kilns, const SpatialIndex& index,
                                 const ComplianceRuleSet& rules, const AuditOptions& options = {});

/// Convenience: builds the index from the feature layers plus the kiln layer
/// and audits every active kiln.
std::vector<KilnAudit> audit_dataset(const std::vector<KilnRecord>& kilns,
                                     const std::vector<features::FeatureLayer>& layers,
                                     const ComplianceRuleSet& rules, const AuditOptions& options = {});

int percentage(std::size_t part, std::size_t total);

/// Per-state summary shaped like the published compliance table.
struct ComplianceSummary {
    struct Column {
        std::string name;
        // Absent where the state has no rule for the criterion.
        std::array<std::optional<std::size_t>, kAllCriteria.size()> violations{};
        std::size_t non_compliant = 0;
        std::size_t kilns = 0;
        int percentage = 0;
    };
    // One column per state in rule-table order, then "Total".
    std::vector<Column> columns;

    nlohmann::json to_json() const;
    std::string to_table() const;
};

ComplianceSummary aggregate(const std::vector<KilnAudit>& audits, const ComplianceRuleSet& rules);

/// CSV rows `kiln_id,criterion,distance_m,threshold_m,feature_id`.
std::string violations_csv(const std::vector<KilnAudit>& audits);

/// Sets each kiln's state from the polygon holding its centroid. Returns the
/// number of kilns that fell outside every region (their state is cleared).
std::size_t assign_states(std::vector<KilnRecord>& kilns, const regions::RegionIndex& states);

} // namespace kilnaudit::compliance

#endif
