#ifndef KILNAUDIT_PIPELINE_HPP
#define KILNAUDIT_PIPELINE_HPP

#include "kilnaudit/compliance.hpp"
#include "kilnaudit/features.hpp"
#include "kilnaudit/impact.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

// File-level steps shared by the command line and the HTTP service, so both
// print identical reports for identical inputs.
namespace kilnaudit::pipeline {

/// Reads `<category>.geojson` for every feature category present in `dir`,
/// applying the category's attribute filter. Missing files are skipped.
std::vector<features::FeatureLayer> load_feature_layers(const std::filesystem::path& dir);

/// Canonical report text: two-space indented JSON and a trailing newline.
std::string pretty(const nlohmann::json& j);

compliance::ComplianceSummary compliance_summary(const std::vector<KilnRecord>& kilns,
                                                 const std::vector<features::FeatureLayer>& layers,
                                                 const compliance::ComplianceRuleSet& rules,
                                                 const compliance::AuditOptions& options = {});

/// Emissions from the production table and the class mix of the active
/// kilns of each state.
impact::EmissionTable emissions_from_kilns(const std::vector<impact::StateProduction>& production,
                                           const std::vector<KilnRecord>& kilns);

} // namespace kilnaudit::pipeline

#endif
