#include "kilnaudit/pipeline.hpp"

#include "kilnaudit/error.hpp"
#include "kilnaudit/ingest.hpp"

#include <fmt/core.h>

namespace kilnaudit::pipeline {

std::vector<features::FeatureLayer> load_feature_layers(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) throw NotFoundError(fmt::format("{}: not a directory", dir.string()));
    std::vector<features::FeatureLayer> layers;
    for (auto c : features::kAllCategories) {
        if (c == features::FeatureCategory::Kiln) continue;
        const auto path = dir / fmt::format("{}.geojson", features::to_string(c));
        if (!std::filesystem::exists(path)) continue;
        layers.push_back(features::parse_feature_geojson(ingest::read_file(path.string()), c, features::siting_filter(c)));
    }
    return layers;
}

std::string pretty(const nlohmann::json& j) { return j.dump(2) + "\n"; }

compliance::ComplianceSummary compliance_summary(const std::vector<KilnRecord>& kilns,
                                                 const std::vector<features::FeatureLayer>& layers,
                                                 const compliance::ComplianceRuleSet& rules,
                                                 const compliance::AuditOptions& options)
{
    return compliance::aggregate(compliance::audit_dataset(kilns, layers, rules, options), rules);
}

impact::EmissionTable emissions_from_kilns(const std::vector<impact::StateProduction>& production,
                                           const std::vector<KilnRecord>& kilns)
{
    return impact::emission_table(production, impact::count_by_state(kilns));
}

} // namespace kilnaudit::pipeline
