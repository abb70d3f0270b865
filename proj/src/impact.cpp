#include "kilnaudit/impact.hpp"

#include "kilnaudit/compliance.hpp"
#include "kilnaudit/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

namespace kilnaudit::impact {

std::string_view to_string(Pollutant p)
{
    switch (p) {
    case Pollutant::PM25: return "pm25";
    case Pollutant::SO2: return "so2";
    case Pollutant::CO: return "co";
    case Pollutant::CO2: return "co2";
    }
    return "?";
}

EmissionRates published_rates()
{
    EmissionRates r;
    r.g_per_kg << 0.18, 0.09,
                  0.52, 0.15,
                  3.63, 1.19,
                  179.00, 107.50;
    return r;
}

void validate(const EmissionRates& r)
{
    for (auto p : kAllPollutants) {
        const double o = r.old_tech(p), z = r.zigzag(p);
        if (!(std::isfinite(o) && std::isfinite(z) && o > 0 && z > 0)) {
            throw ConfigError(fmt::format("emission rates for {} must be positive", to_string(p)));
        }
        if (!(z < o)) throw ConfigError(fmt::format("Zigzag rate for {} must be below the old technology", to_string(p)));
    }
}

double daily_production(double annual_tonnes)
{
    if (!(std::isfinite(annual_tonnes) && annual_tonnes > 0)) {
        throw DomainError(fmt::format("annual production must be positive, got {}", annual_tonnes));
    }
    return annual_tonnes / 180.0;
}

Eigen::Vector4d state_emissions(const ClassCounts& counts, const EmissionRates& rates, double daily_mass_t)
{
    if (counts.total() == 0) throw DomainError("emissions need at least one kiln");
    if (!(std::isfinite(daily_mass_t) && daily_mass_t > 0)) {
        throw DomainError(fmt::format("daily mass must be positive, got {}", daily_mass_t));
    }
    const double n = static_cast<double>(counts.total());
    const Eigen::Vector2d mix(static_cast<double>(counts.old_tech()) / n, static_cast<double>(counts.zigzag) / n);
    const Eigen::Vector4d g_per_kg = rates.g_per_kg * mix;
    // g/kg * t/day * 1000 kg/t / 1e6 g/t
    constexpr double kTonnesPerGramPerKg = 1000.0 / 1e6;
    return g_per_kg * daily_mass_t * kTonnesPerGramPerKg;
}

EmissionTable emission_table(const std::vector<StateProduction>& production,
                             const std::vector<std::pair<std::string, ClassCounts>>& counts,
                             const EmissionRates& rates)
{
    validate(rates);
    EmissionTable t;
    t.total.state = "Total";
    for (const auto& p : production) {
        const auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& c) { return c.first == p.state; });
        if (it == counts.end()) throw ConfigError(fmt::format("no kiln counts for state '{}'", p.state));
        EmissionRow row{p.state, p.daily_mass_t, it->second, state_emissions(it->second, rates, p.daily_mass_t)};
        t.total.daily_mass_t += row.daily_mass_t;
        t.total.counts.cfcbk += row.counts.cfcbk;
        t.total.counts.fcbk += row.counts.fcbk;
        t.total.counts.zigzag += row.counts.zigzag;
        t.total.tonnes_per_day += row.tonnes_per_day;
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string EmissionTable::to_csv() const
{
    std::string out = "state,mass_t_per_day,pm25,so2,co,co2\n";
    auto line = [&out](const EmissionRow& r) {
        out += fmt::format("{},{:.2f}", ingest::csv_field(r.state), r.daily_mass_t);
        for (int i = 0; i < 4; ++i) out += fmt::format(",{:.2f}", r.tonnes_per_day(i));
        out += '\n';
    };
    for (const auto& r : rows) line(r);
    line(total);
    return out;
}

nlohmann::json EmissionTable::to_json() const
{
    auto row = [](const EmissionRow& r) {
        nlohmann::json j{{"state", r.state},
                         {"mass_t_per_day", r.daily_mass_t},
                         {"kilns", {{"CFCBK", r.counts.cfcbk}, {"FCBK", r.counts.fcbk}, {"Zigzag", r.counts.zigzag}}}};
        for (auto p : kAllPollutants) j[std::string(to_string(p))] = r.tonnes_per_day(static_cast<int>(p));
        return j;
    };
    nlohmann::json j{{"unit", "t/day"}, {"rows", nlohmann::json::array()}};
    for (const auto& r : rows) j["rows"].push_back(row(r));
    j["total"] = row(total);
    return j;
}

std::vector<std::pair<std::string, ClassCounts>> count_by_state(const std::vector<KilnRecord>& kilns)
{
    std::vector<std::pair<std::string, ClassCounts>> out;
    for (const auto& k : kilns) {
        if (!k.active()) continue;
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& c) { return c.first == k.state; });
        if (it == out.end()) it = out.insert(out.end(), {k.state, {}});
        switch (k.cls) {
        case obb::KilnClass::CFCBK: ++it->second.cfcbk; break;
        case obb::KilnClass::FCBK: ++it->second.fcbk; break;
        case obb::KilnClass::Zigzag: ++it->second.zigzag; break;
        }
    }
    return out;
}

std::vector<StateProduction> parse_production_csv(std::string_view text)
{
    const auto t = ingest::parse_csv(text);
    const auto state = t.column("state");
    const auto daily = t.find("daily_mass_t");
    const auto annual = t.find("annual_t");
    if (daily.has_value() == annual.has_value()) {
        throw ParseError(fmt::format("line {}: need exactly one of daily_mass_t, annual_t", t.header_line),
                         t.header_line);
    }
    std::vector<StateProduction> out;
    for (const auto& r : t.rows) {
        double v = ingest::csv_number(r.cells[daily ? *daily : *annual], r.line);
        if (!(v > 0)) throw ParseError(fmt::format("line {}: production must be positive", r.line), r.line);
        if (annual) v = daily_production(v);
        for (const auto& o : out)
            if (o.state == r.cells[state]) throw ParseError(fmt::format("line {}: duplicate state", r.line), r.line);
        out.push_back({r.cells[state], v});
    }
    return out;
}

std::vector<std::pair<std::string, ClassCounts>> parse_counts_csv(std::string_view text)
{
    const auto t = ingest::parse_csv(text);
    const auto state = t.column("state");
    const std::array<std::size_t, 3> cols{t.column("cfcbk"), t.column("fcbk"), t.column("zigzag")};
    std::vector<std::pair<std::string, ClassCounts>> out;
    for (const auto& r : t.rows) {
        std::array<std::size_t, 3> n{};
        for (int i = 0; i < 3; ++i) {
            const double v = ingest::csv_number(r.cells[cols[i]], r.line);
            if (v < 0 || v != std::floor(v)) {
                throw ParseError(fmt::format("line {}: counts must be non-negative integers", r.line), r.line);
            }
            n[i] = static_cast<std::size_t>(v);
        }
        out.push_back({r.cells[state], {n[0], n[1], n[2]}});
    }
    return out;
}

// ---- Population exposure --------------------------------------------------

namespace {

struct CellRange {
    Eigen::Index r0, r1, c0, c1; // inclusive; empty when r0 > r1 or c0 > c1
};

CellRange cell_range(const geo::GeoPoint& p, const ingest::PopulationGrid& g, double radius_m)
{
    const auto box = compliance::search_box(p, radius_m);
    const double cs = g.cellsize;
    const double nr = static_cast<double>(g.nrows());
    // Cell centers: lon = xll + (c + 0.5) cs, lat = yll + (nrows - r - 0.5) cs.
    // One cell of slack on each side; membership is decided by the exact test.
    auto clamp = [](double v, Eigen::Index hi) {
        return static_cast<Eigen::Index>(std::clamp(v, -1.0, static_cast<double>(hi)));
    };
    CellRange out;
    out.c0 = clamp(std::floor((box.min().x() - g.xllcorner) / cs - 0.5) - 1, g.ncols());
    out.c1 = clamp(std::ceil((box.max().x() - g.xllcorner) / cs - 0.5) + 1, g.ncols());
    out.r0 = clamp(std::floor(nr - 0.5 - (box.max().y() - g.yllcorner) / cs) - 1, g.nrows());
    out.r1 = clamp(std::ceil(nr - 0.5 - (box.min().y() - g.yllcorner) / cs) + 1, g.nrows());
    out.c0 = std::max<Eigen::Index>(out.c0, 0);
    out.r0 = std::max<Eigen::Index>(out.r0, 0);
    out.c1 = std::min<Eigen::Index>(out.c1, g.ncols() - 1);
    out.r1 = std::min<Eigen::Index>(out.r1, g.nrows() - 1);
    return out;
}

std::vector<std::uint8_t> covered_cells(const std::vector<geo::GeoPoint>& points, const ingest::PopulationGrid& g,
                                        double radius_m, unsigned threads)
{
    const Eigen::Index nr = g.nrows(), nc = g.ncols();
    std::vector<std::uint8_t> visited(static_cast<std::size_t>(nr * nc), 0);
    if (points.empty() || nr == 0 || nc == 0) return visited;
    std::vector<CellRange> ranges;
    ranges.reserve(points.size());
    for (const auto& p : points) ranges.push_back(cell_range(p, g, radius_m));

    // Each worker owns a band of rows, so the marks never race.
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<Eigen::Index>(threads, nr));
    auto work = [&](Eigen::Index b0, Eigen::Index b1) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto& rg = ranges[i];
            const Eigen::Index r0 = std::max(rg.r0, b0), r1 = std::min(rg.r1, b1 - 1);
            for (Eigen::Index r = r0; r <= r1; ++r) {
                for (Eigen::Index c = rg.c0; c <= rg.c1; ++c) {
                    auto& v = visited[static_cast<std::size_t>(r * nc + c)];
                    if (v == 0 && geo::haversine_distance(points[i], g.cell_center(r, c)) <= radius_m) v = 1;
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    const Eigen::Index band = (nr + threads - 1) / threads;
    for (Eigen::Index b0 = 0; b0 < nr; b0 += band) pool.emplace_back(work, b0, std::min(nr, b0 + band));
    return visited;
}

double sum_cells(const std::vector<std::uint8_t>& visited, const ingest::PopulationGrid& g)
{
    double sum = 0.0;
    const Eigen::Index nc = g.ncols();
    for (Eigen::Index r = 0; r < g.nrows(); ++r) {
        for (Eigen::Index c = 0; c < nc; ++c) {
            const double v = g.values(r, c);
            if (visited[static_cast<std::size_t>(r * nc + c)] && !g.is_nodata(v)) sum += v;
        }
    }
    return sum;
}

void check_radius(double radius_km)
{
    if (!(std::isfinite(radius_km) && radius_km > 0)) {
        throw DomainError(fmt::format("radius must be positive, got {}", radius_km));
    }
}

} // namespace

double population_within(const std::vector<geo::GeoPoint>& points, const ingest::PopulationGrid& grid,
                         double radius_km, unsigned threads)
{
    check_radius(radius_km);
    return sum_cells(covered_cells(points, grid, radius_km * 1000.0, threads), grid);
}

ExposureTable exposure_table(const std::vector<KilnRecord>& kilns, const ingest::PopulationGrid& grid,
                             const std::vector<double>& radii_km, unsigned threads)
{
    for (double r : radii_km) check_radius(r);
    std::vector<std::pair<std::string, std::vector<geo::GeoPoint>>> by_state;
    std::vector<geo::GeoPoint> all;
    for (const auto& k : kilns) {
        if (!k.active()) continue;
        auto it = std::find_if(by_state.begin(), by_state.end(), [&](const auto& s) { return s.first == k.state; });
        if (it == by_state.end()) it = by_state.insert(by_state.end(), {k.state, {}});
        it->second.push_back(k.centroid());
        all.push_back(k.centroid());
    }
    ExposureTable t;
    t.radii_km = radii_km;
    t.total = {"Total", std::vector<double>(radii_km.size(), 0.0)};
    for (const auto& [state, points] : by_state) {
        ExposureRow row{state, {}};
        for (std::size_t i = 0; i < radii_km.size(); ++i) {
            row.persons.push_back(population_within(points, grid, radii_km[i], threads));
            t.total.persons[i] += row.persons.back();
        }
        t.rows.push_back(std::move(row));
    }
    for (double r : radii_km) t.union_total.push_back(population_within(all, grid, r, threads));
    return t;
}

std::string ExposureTable::to_csv() const
{
    std::string out = "state";
    for (double r : radii_km) out += fmt::format(",within_{}_km", r);
    out += '\n';
    auto line = [&out](const ExposureRow& row) {
        out += ingest::csv_field(row.state);
        for (double v : row.persons) out += fmt::format(",{:.2f}", v / 1e6);
        out += '\n';
    };
    for (const auto& r : rows) line(r);
    line(total);
    return out;
}

nlohmann::json ExposureTable::to_json() const
{
    nlohmann::json j{{"radii_km", radii_km}, {"unit", "persons"}, {"rows", nlohmann::json::array()}};
    for (const auto& r : rows) j["rows"].push_back({{"state", r.state}, {"persons", r.persons}});
    j["total"] = total.persons;
    j["union_total"] = union_total;
    return j;
}

} // namespace kilnaudit::impact
