#ifndef KILNAUDIT_SURVEY_HPP
#define KILNAUDIT_SURVEY_HPP

#include "kilnaudit/kiln.hpp"
#include "kilnaudit/regions.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kilnaudit::survey {

// ---- Statistics -----------------------------------------------------------

/// Product-moment correlation. Absent when either side has zero variance.
/// Throws ValidationError on length mismatch or fewer than two pairs.
std::optional<double> pearson_r(std::span<const double> xs, std::span<const double> ys);

struct ErrorStats {
    double mean = 0.0;
    double median = 0.0;
    double stddev = 0.0; // population (divisor n)
};

/// Statistics of |x - y|. Throws ValidationError on mismatch or empty input.
ErrorStats error_stats(std::span<const double> xs, std::span<const double> ys);

// ---- District comparison --------------------------------------------------

using CountTable = std::vector<std::pair<std::string, double>>;

/// CSV `district,count`; rejects negative counts and duplicate districts.
CountTable parse_count_csv(std::string_view text);
std::string write_count_csv(const CountTable& counts);

struct DistrictRow {
    std::string district;
    std::optional<double> survey; // absent: no survey data for the district
    std::optional<double> ours;   // absent: district unknown to our side
};

struct DistrictCounts {
    // Sorted by district name.
    std::vector<DistrictRow> rows;
    // Kilns outside every district, and kilns on a shared boundary (assigned
    // to the lexicographically first district).
    std::vector<std::string> unassigned;
    std::vector<std::string> on_boundary;

    /// Districts present on both sides, as (survey, ours) vectors.
    std::pair<std::vector<double>, std::vector<double>> paired() const;
};

/// Our per-district counts by centroid point-in-polygon, joined with the
/// survey. Every district polygon gets a row, even with zero kilns.
DistrictCounts district_join(const std::vector<KilnRecord>& kilns, const regions::RegionIndex& districts,
                             const CountTable& survey);
/// Same join from precomputed counts.
DistrictCounts join_counts(const CountTable& ours, const CountTable& survey);

struct Comparison {
    DistrictCounts counts;
    std::size_t paired = 0;
    std::optional<double> r;
    ErrorStats errors;

    nlohmann::json to_json() const;
    // `district,survey,ours,abs_error` per row; missing sides left empty.
    std::string to_csv() const;
};

Comparison compare(DistrictCounts counts);

// ---- Establishment and conversion dating ----------------------------------

struct Observation {
    bool present = false;
    obb::KilnClass cls = obb::KilnClass::FCBK; // meaningful when present

    friend bool operator==(const Observation&, const Observation&) = default;
};

/// Answers "what is at this location in year y". Wraps a source and counts the
/// distinct years asked; repeated years are answered from memory.
class PresenceOracle {
public:
    virtual ~PresenceOracle() = default;

    Observation query(int year);
    int queries() const { return queries_; }
    const std::map<int, Observation>& history() const { return seen_; }

protected:
    virtual Observation observe(int year) = 0;

private:
    std::map<int, Observation> seen_;
    int queries_ = 0;
};

struct YearRange {
    int first = 2010;
    int last = 2022; // inclusive
};

struct Dating {
    enum class Kind { InRange, BeforeRange, AbsentThroughout };
    Kind kind = Kind::AbsentThroughout;
    int established = 0;       // earliest year seen present (InRange, BeforeRange)
    std::optional<int> converted; // first year with a class differing from the class at establishment
    obb::KilnClass initial_class = obb::KilnClass::FCBK;
    obb::KilnClass final_class = obb::KilnClass::FCBK;
    int establishment_queries = 0;
    int conversion_queries = 0;
    std::map<int, Observation> history;
};

std::string_view to_string(Dating::Kind k);

/// Binary search for the first present year, first query at the midpoint of
/// the range; then a second search for the conversion year. Throws
/// ValidationError when the answers are not a monotone history.
Dating date_kiln(PresenceOracle& oracle, YearRange range = {});

/// Observations from a table: CSV `kiln_id,year,class` with class one of
/// CFCBK/FCBK/Zigzag/absent. Years not listed for a kiln throw NotFoundError
/// when queried.
class TableOracle : public PresenceOracle {
public:
    explicit TableOracle(std::map<int, Observation> rows) : rows_(std::move(rows)) {}

protected:
    Observation observe(int year) override;

private:
    std::map<int, Observation> rows_;
};

std::map<std::string, std::map<int, Observation>> parse_observation_csv(std::string_view text);

} // namespace kilnaudit::survey

#endif
