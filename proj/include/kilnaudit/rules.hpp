#ifndef KILNAUDIT_RULES_HPP
#define KILNAUDIT_RULES_HPP

#include "kilnaudit/features.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kilnaudit::compliance {

/// Siting criteria, in the row order of the published compliance summary.
enum class Criterion {
    InterKiln,
    Hospital,
    Habitation,
    NationalHighway,
    River,
    StateHighway,
    DistrictHighway,
    Railway,
    NatureReserve,
    Orchard,
    Wetland,
    School,
    Religious,
};

inline constexpr std::array<Criterion, 13> kAllCriteria{
    Criterion::InterKiln,     Criterion::Hospital,        Criterion::Habitation, Criterion::NationalHighway,
    Criterion::River,         Criterion::StateHighway,    Criterion::DistrictHighway,
    Criterion::Railway,       Criterion::NatureReserve,   Criterion::Orchard,    Criterion::Wetland,
    Criterion::School,        Criterion::Religious,
};

std::string_view to_string(Criterion c);
// Accepts snake_case names and table labels ("Inter kiln", "Religious places").
std::optional<Criterion> criterion_from_string(std::string_view s);

features::FeatureCategory category_of(Criterion c);

/// (state, criterion) -> minimum distance in meters. Missing pairs mean no rule.
class ComplianceRuleSet {
public:
    // Throws ConfigError for non-positive or non-finite thresholds.
    void set(const std::string& state, Criterion c, double meters);

    std::optional<double> threshold(const std::string& state, Criterion c) const;
    bool has_state(const std::string& state) const;
    // State names in declaration order.
    const std::vector<std::string>& states() const { return order_; }
    // Criteria that have a rule in at least one state, in table order.
    std::vector<Criterion> criteria() const;
    // Largest threshold for the criterion across states (0 if none).
    double max_threshold(Criterion c) const;

    // States without any rule still count as known (declared in the table).
    void declare_state(const std::string& state);

    friend bool operator==(const ComplianceRuleSet&, const ComplianceRuleSet&) = default;

private:
    std::map<std::string, std::map<Criterion, double>> rules_;
    std::vector<std::string> order_;
};

} // namespace kilnaudit::compliance

#endif
