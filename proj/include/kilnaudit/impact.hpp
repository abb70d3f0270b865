#ifndef KILNAUDIT_IMPACT_HPP
#define KILNAUDIT_IMPACT_HPP

#include "kilnaudit/ingest.hpp"
#include "kilnaudit/kiln.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace kilnaudit::impact {

enum class Pollutant { PM25 = 0, SO2 = 1, CO = 2, CO2 = 3 };
inline constexpr std::array<Pollutant, 4> kAllPollutants{Pollutant::PM25, Pollutant::SO2, Pollutant::CO,
                                                         Pollutant::CO2};

// Column keys: pm25, so2, co, co2.
std::string_view to_string(Pollutant p);

/// Emission factors in g per kg of fired brick. Column 0 is the old
/// technology (CFCBK and FCBK), column 1 is Zigzag.
template <typename Scalar>
struct EmissionRatesT {
    Eigen::Matrix<Scalar, 4, 2> g_per_kg = Eigen::Matrix<Scalar, 4, 2>::Zero();

    Scalar old_tech(Pollutant p) const { return g_per_kg(static_cast<int>(p), 0); }
    Scalar zigzag(Pollutant p) const { return g_per_kg(static_cast<int>(p), 1); }
};
using EmissionRates = EmissionRatesT<double>;

/// Published factors for the two technology groups.
EmissionRates published_rates();
/// All rates positive and finite, Zigzag strictly below the old technology.
/// Throws ConfigError.
void validate(const EmissionRates& r);

struct ClassCounts {
    std::size_t cfcbk = 0;
    std::size_t fcbk = 0;
    std::size_t zigzag = 0;

    std::size_t old_tech() const { return cfcbk + fcbk; }
    std::size_t total() const { return cfcbk + fcbk + zigzag; }

    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Bricks fired per day, from annual production over a 180-day season.
/// Throws DomainError unless the input is positive and finite.
double daily_production(double annual_tonnes);

struct StateProduction {
    std::string state;
    double daily_mass_t = 0.0;
};

/// Tonnes per day of each pollutant, using the count-weighted rate across the
/// state's kilns. Throws DomainError on zero kilns or a non-positive mass.
Eigen::Vector4d state_emissions(const ClassCounts& counts, const EmissionRates& rates, double daily_mass_t);

struct EmissionRow {
    std::string state;
    double daily_mass_t = 0.0;
    ClassCounts counts;
    Eigen::Vector4d tonnes_per_day = Eigen::Vector4d::Zero();
};

/// Per-state emissions plus a summed Total row, laid out as the published table.
struct EmissionTable {
    std::vector<EmissionRow> rows;
    EmissionRow total;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

/// One row per production entry, in production order. Every state needs counts.
EmissionTable emission_table(const std::vector<StateProduction>& production,
                             const std::vector<std::pair<std::string, ClassCounts>>& counts,
                             const EmissionRates& rates = published_rates());

/// Per-state class counts of the active kilns, in first-seen state order.
std::vector<std::pair<std::string, ClassCounts>> count_by_state(const std::vector<KilnRecord>& kilns);

// CSV `state,daily_mass_t` or `state,annual_t` (divided by the season).
std::vector<StateProduction> parse_production_csv(std::string_view text);
// CSV `state,cfcbk,fcbk,zigzag`.
std::vector<std::pair<std::string, ClassCounts>> parse_counts_csv(std::string_view text);

// ---- Population exposure --------------------------------------------------

/// Population of grid cells whose center lies within `radius_km` (great
/// circle) of at least one point. Each cell counts once; nodata cells count
/// zero. Throws DomainError unless the radius is positive.
double population_within(const std::vector<geo::GeoPoint>& points, const ingest::PopulationGrid& grid,
                         double radius_km, unsigned threads = 0);

inline constexpr std::array<double, 3> kExposureRadiiKm{0.8, 2.0, 5.0};

struct ExposureRow {
    std::string state;
    std::vector<double> persons; // one entry per radius
};

/// Exposure per state of the active kilns. The Total row sums the state rows,
/// as published; `union_total` counts every cell once across all states.
struct ExposureTable {
    std::vector<double> radii_km;
    std::vector<ExposureRow> rows;
    ExposureRow total;
    std::vector<double> union_total;

    // Values in millions with two decimals, as published.
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

ExposureTable exposure_table(const std::vector<KilnRecord>& kilns, const ingest::PopulationGrid& grid,
                             const std::vector<double>& radii_km = {kExposureRadiiKm.begin(), kExposureRadiiKm.end()},
                             unsigned threads = 0);

} // namespace kilnaudit::impact

#endif
