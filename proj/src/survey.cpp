#include "kilnaudit/survey.hpp"

#include "kilnaudit/error.hpp"
#include "kilnaudit/ingest.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace kilnaudit::survey {

std::optional<double> pearson_r(std::span<const double> xs, std::span<const double> ys)
{
    if (xs.size() != ys.size()) throw ValidationError("pearson_r: length mismatch");
    if (xs.size() < 2) throw ValidationError("pearson_r: need at least two pairs");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

ErrorStats error_stats(std::span<const double> xs, std::span<const double> ys)
{
    if (xs.size() != ys.size()) throw ValidationError("error_stats: length mismatch");
    if (xs.empty()) throw ValidationError("error_stats: no pairs");
    std::vector<double> e(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) e[i] = std::abs(xs[i] - ys[i]);
    const double n = static_cast<double>(e.size());
    ErrorStats s;
    s.mean = std::accumulate(e.begin(), e.end(), 0.0) / n;
    double ss = 0;
    for (double v : e) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / n);
    std::sort(e.begin(), e.end());
    const std::size_t h = e.size() / 2;
    s.median = e.size() % 2 == 1 ? e[h] : 0.5 * (e[h - 1] + e[h]);
    return s;
}

CountTable parse_count_csv(std::string_view text)
{
    const auto t = ingest::parse_csv(text);
    const auto name = t.column("district");
    const auto count = t.column("count");
    CountTable out;
    std::set<std::string> seen;
    for (const auto& r : t.rows) {
        const double v = ingest::csv_number(r.cells[count], r.line);
        if (v < 0) throw ParseError(fmt::format("line {}: negative count", r.line), r.line);
        if (r.cells[name].empty()) throw ParseError(fmt::format("line {}: empty district", r.line), r.line);
        if (!seen.insert(r.cells[name]).second) {
            throw ParseError(fmt::format("line {}: duplicate district '{}'", r.line, r.cells[name]), r.line);
        }
        out.emplace_back(r.cells[name], v);
    }
    return out;
}

std::string write_count_csv(const CountTable& counts)
{
    std::string out = "district,count\n";
    for (const auto& [d, c] : counts) out += fmt::format("{},{}\n", ingest::csv_field(d), c);
    return out;
}

std::pair<std::vector<double>, std::vector<double>> DistrictCounts::paired() const
{
    std::pair<std::vector<double>, std::vector<double>> out;
    for (const auto& r : rows) {
        if (!r.survey || !r.ours) continue;
        out.first.push_back(*r.survey);
        out.second.push_back(*r.ours);
    }
    return out;
}

DistrictCounts join_counts(const CountTable& ours, const CountTable& survey)
{
    std::map<std::string, DistrictRow> rows;
    for (const auto& [d, c] : ours) {
        auto& r = rows[d];
        r.district = d;
        r.ours = r.ours.value_or(0.0) + c;
    }
    for (const auto& [d, c] : survey) {
        auto& r = rows[d];
        r.district = d;
        r.survey = r.survey.value_or(0.0) + c;
    }
    DistrictCounts out;
    for (auto& [_, r] : rows) out.rows.push_back(std::move(r));
    return out;
}

DistrictCounts district_join(const std::vector<KilnRecord>& kilns, const regions::RegionIndex& districts,
                             const CountTable& survey)
{
    std::map<std::string, double> counts;
    for (const auto& r : districts.regions()) counts[r.name];
    std::vector<std::string> unassigned, boundary;
    for (const auto& k : kilns) {
        if (!k.active()) continue;
        const auto a = districts.assign(k.centroid());
        if (!a.assigned()) {
            unassigned.push_back(k.id);
            continue;
        }
        if (a.on_boundary) boundary.push_back(k.id);
        counts[a.name] += 1.0;
    }
    auto out = join_counts(CountTable(counts.begin(), counts.end()), survey);
    out.unassigned = std::move(unassigned);
    out.on_boundary = std::move(boundary);
    return out;
}

Comparison compare(DistrictCounts counts)
{
    Comparison c;
    const auto [xs, ys] = counts.paired();
    c.paired = xs.size();
    if (xs.size() >= 2) c.r = pearson_r(xs, ys);
    if (!xs.empty()) c.errors = error_stats(xs, ys);
    c.counts = std::move(counts);
    return c;
}

nlohmann::json Comparison::to_json() const
{
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j{{"paired_districts", paired},
                     {"pearson_r", opt(r)},
                     {"mean_abs_error", errors.mean},
                     {"median_abs_error", errors.median},
                     {"std_abs_error", errors.stddev},
                     {"unassigned", counts.unassigned},
                     {"on_boundary", counts.on_boundary},
                     {"districts", nlohmann::json::array()}};
    for (const auto& row : counts.rows)
        j["districts"].push_back({{"district", row.district}, {"survey", opt(row.survey)}, {"ours", opt(row.ours)}});
    return j;
}

std::string Comparison::to_csv() const
{
    std::string out = "district,survey,ours,abs_error\n";
    auto num = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
    for (const auto& row : counts.rows) {
        const std::optional<double> err =
            row.survey && row.ours ? std::optional<double>(std::abs(*row.survey - *row.ours)) : std::nullopt;
        out += fmt::format("{},{},{},{}\n", ingest::csv_field(row.district), num(row.survey), num(row.ours), num(err));
    }
    return out;
}

// ---- Dating ---------------------------------------------------------------

Observation PresenceOracle::query(int year)
{
    if (auto it = seen_.find(year); it != seen_.end()) return it->second;
    ++queries_;
    const auto o = observe(year);
    seen_.emplace(year, o);
    return o;
}

std::string_view to_string(Dating::Kind k)
{
    switch (k) {
    case Dating::Kind::InRange: return "in_range";
    case Dating::Kind::BeforeRange: return "before_range";
    case Dating::Kind::AbsentThroughout: return "absent_throughout";
    }
    return "?";
}

namespace {

// First year in [lo, hi) satisfying `pred`, or hi. The first probe is the midpoint.
template <typename Pred>
int lower_bound_year(int lo, int hi, Pred pred)
{
    while (lo < hi) {
        const int mid = lo + (hi - lo) / 2;
        if (pred(mid)) hi = mid;
        else lo = mid + 1;
    }
    return lo;
}

void check_monotone(const std::map<int, Observation>& history)
{
    std::optional<int> first_present;
    for (const auto& [year, o] : history) {
        if (o.present && !first_present) first_present = year;
        if (!o.present && first_present) {
            throw ValidationError(
                fmt::format("inconsistent observations: present in {} but absent in {}", *first_present, year));
        }
    }
}

} // namespace

Dating date_kiln(PresenceOracle& oracle, YearRange range)
{
    if (range.last < range.first) throw DomainError("empty year range");
    Dating d;
    const int start = oracle.queries();
    const int end = range.last + 1;
    const int y = lower_bound_year(range.first, end, [&](int year) { return oracle.query(year).present; });
    if (y == end) {
        d.kind = Dating::Kind::AbsentThroughout;
        d.establishment_queries = oracle.queries() - start;
        d.history = oracle.history();
        check_monotone(d.history);
        return d;
    }
    d.kind = y == range.first ? Dating::Kind::BeforeRange : Dating::Kind::InRange;
    d.established = y;
    d.initial_class = oracle.query(y).cls;
    // The kiln must still be there at the end of the range.
    const auto last = oracle.query(range.last);
    d.establishment_queries = oracle.queries() - start;
    check_monotone(oracle.history());
    d.final_class = last.cls;

    const int mid_start = oracle.queries();
    if (d.final_class != d.initial_class) {
        const auto changed = [&](int year) {
            const auto o = oracle.query(year);
            if (!o.present) throw ValidationError(fmt::format("inconsistent observations: absent in {}", year));
            return o.cls != d.initial_class;
        };
        d.converted = lower_bound_year(y + 1, range.last, changed);
    }
    d.conversion_queries = oracle.queries() - mid_start;
    d.history = oracle.history();
    return d;
}

Observation TableOracle::observe(int year)
{
    const auto it = rows_.find(year);
    if (it == rows_.end()) throw NotFoundError(fmt::format("no observation for year {}", year));
    return it->second;
}

std::map<std::string, std::map<int, Observation>> parse_observation_csv(std::string_view text)
{
    const auto t = ingest::parse_csv(text);
    const auto id = t.column("kiln_id");
    const auto year = t.column("year");
    const auto cls = t.column("class");
    std::map<std::string, std::map<int, Observation>> out;
    for (const auto& r : t.rows) {
        const double y = ingest::csv_number(r.cells[year], r.line);
        if (y != std::floor(y)) throw ParseError(fmt::format("line {}: year must be an integer", r.line), r.line);
        Observation o;
        if (r.cells[cls] != "absent") {
            const auto c = obb::class_from_string(r.cells[cls]);
            if (!c) throw ParseError(fmt::format("line {}: unknown class '{}'", r.line, r.cells[cls]), r.line);
            o = {true, *c};
        }
        if (!out[r.cells[id]].emplace(static_cast<int>(y), o).second) {
            throw ParseError(fmt::format("line {}: duplicate year for {}", r.line, r.cells[id]), r.line);
        }
    }
    return out;
}

} // namespace kilnaudit::survey
