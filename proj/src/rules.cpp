#include "kilnaudit/rules.hpp"

#include "kilnaudit/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cctype>
#include <cmath>

namespace kilnaudit::compliance {

std::string_view to_string(Criterion c)
{
    switch (c) {
    case Criterion::InterKiln: return "inter_kiln";
    case Criterion::Hospital: return "hospital";
    case Criterion::Habitation: return "habitation";
    case Criterion::NationalHighway: return "national_highway";
    case Criterion::River: return "river";
    case Criterion::StateHighway: return "state_highway";
    case Criterion::DistrictHighway: return "district_highway";
    case Criterion::Railway: return "railway";
    case Criterion::NatureReserve: return "nature_reserve";
    case Criterion::Orchard: return "orchard";
    case Criterion::Wetland: return "wetland";
    case Criterion::School: return "school";
    case Criterion::Religious: return "religious";
    }
    return "?";
}

std::optional<Criterion> criterion_from_string(std::string_view s)
{
    std::string key;
    for (char ch : s) key.push_back(ch == ' ' || ch == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (key == "religious_places") key = "religious";
    if (key == "interkiln") key = "inter_kiln";
    for (auto c : kAllCriteria) {
        if (to_string(c) == key) return c;
    }
    return std::nullopt;
}

features::FeatureCategory category_of(Criterion c)
{
    using features::FeatureCategory;
    switch (c) {
    case Criterion::InterKiln: return FeatureCategory::Kiln;
    case Criterion::Hospital: return FeatureCategory::Hospital;
    case Criterion::Habitation: return FeatureCategory::Habitation;
    case Criterion::NationalHighway: return FeatureCategory::NationalHighway;
    case Criterion::River: return FeatureCategory::River;
    case Criterion::StateHighway: return FeatureCategory::StateHighway;
    case Criterion::DistrictHighway: return FeatureCategory::DistrictHighway;
    case Criterion::Railway: return FeatureCategory::Railway;
    case Criterion::NatureReserve: return FeatureCategory::NatureReserve;
    case Criterion::Orchard: return FeatureCategory::Orchard;
    case Criterion::Wetland: return FeatureCategory::Wetland;
    case Criterion::School: return FeatureCategory::School;
    case Criterion::Religious: return FeatureCategory::Religious;
    }
    return FeatureCategory::Kiln;
}

void ComplianceRuleSet::set(const std::string& state, Criterion c, double meters)
{
    if (!std::isfinite(meters) || meters <= 0.0) {
        throw ConfigError(fmt::format("threshold for {} / {} must be positive, got {}", state, to_string(c), meters));
    }
    declare_state(state);
    rules_[state][c] = meters;
}

void ComplianceRuleSet::declare_state(const std::string& state)
{
    if (rules_.try_emplace(state).second) order_.push_back(state);
}

std::optional<double> ComplianceRuleSet::threshold(const std::string& state, Criterion c) const
{
    const auto s = rules_.find(state);
    if (s == rules_.end()) return std::nullopt;
    const auto r = s->second.find(c);
    if (r == s->second.end()) return std::nullopt;
    return r->second;
}

bool ComplianceRuleSet::has_state(const std::string& state) const { return rules_.contains(state); }

std::vector<Criterion> ComplianceRuleSet::criteria() const
{
    std::vector<Criterion> out;
    for (auto c : kAllCriteria) {
        const bool any = std::any_of(rules_.begin(), rules_.end(), [c](const auto& kv) { return kv.second.contains(c); });
        if (any) out.push_back(c);
    }
    return out;
}

double ComplianceRuleSet::max_threshold(Criterion c) const
{
    double m = 0.0;
    for (const auto& [_, row] : rules_) {
        const auto it = row.find(c);
        if (it != row.end()) m = std::max(m, it->second);
    }
    return m;
}

} // namespace kilnaudit::compliance
