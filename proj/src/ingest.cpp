#include "kilnaudit/ingest.hpp"

#include "kilnaudit/error.hpp"

#include <fmt/core.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace kilnaudit::ingest {

namespace {

std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return lines;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> tokens(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

std::optional<double> to_double(std::string_view s)
{
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<long long> to_integer(std::string_view s)
{
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

bool is_comment_or_blank(std::string_view line)
{
    const auto t = trim(line);
    return t.empty() || t.front() == '#';
}

} // namespace

// ---- OBB label files ------------------------------------------------------

obb::OrientedBox fit_box(const obb::Quad<double>& points)
{
    if (!points.allFinite()) throw ValidationError("box corners must be finite");
    double best_area = std::numeric_limits<double>::infinity();
    obb::OrientedBox best;
    for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
            Eigen::Vector2d u = points.col(j) - points.col(i);
            const double len = u.norm();
            if (!(len > 0.0)) continue;
            u /= len;
            const Eigen::Vector2d v(-u.y(), u.x());
            Eigen::Matrix<double, 2, 2> basis;
            basis.row(0) = u.transpose();
            basis.row(1) = v.transpose();
            const Eigen::Matrix<double, 2, 4> local = basis * points;
            const Eigen::Vector2d lo = local.rowwise().minCoeff();
            const Eigen::Vector2d hi = local.rowwise().maxCoeff();
            const Eigen::Vector2d ext = hi - lo;
            const double area = ext.x() * ext.y();
            if (area < best_area) {
                best_area = area;
                best.center = basis.transpose() * (0.5 * (lo + hi));
                best.w = ext.x();
                best.h = ext.y();
                best.theta = std::atan2(u.y(), u.x());
            }
        }
    }
    const double scale = (points.colwise() - points.rowwise().mean()).colwise().norm().maxCoeff();
    if (!std::isfinite(best_area) || !(best_area > 1e-12 * scale * scale)) throw ValidationError("box corners are degenerate");
    return obb::canonical(best);
}

std::vector<obb::Detection> parse_quad_labels(std::string_view text, const obb::CropGeoref& georef)
{
    constexpr double kTol = 1e-9;
    std::vector<obb::Detection> out;
    const auto lines = split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::size_t line_no = n + 1;
        if (is_comment_or_blank(lines[n])) continue;
        const auto tok = tokens(lines[n]);
        if (tok.size() != 9 && tok.size() != 10) {
            throw ParseError(fmt::format("line {}: expected 9 or 10 fields, found {}", line_no, tok.size()), line_no);
        }
        const auto idx = to_integer(tok[0]);
        const auto cls = idx ? obb::class_from_index(static_cast<int>(*idx)) : std::nullopt;
        if (!cls) throw ParseError(fmt::format("line {}: unknown class '{}'", line_no, tok[0]), line_no);

        obb::Quad<double> q;
        for (int k = 0; k < 8; ++k) {
            const auto v = to_double(tok[static_cast<std::size_t>(k) + 1]);
            if (!v) throw ParseError(fmt::format("line {}: bad coordinate '{}'", line_no, tok[k + 1]), line_no);
            if (*v < -kTol || *v > 1.0 + kTol) {
                throw ParseError(fmt::format("line {}: coordinate {} outside [0, 1]", line_no, *v), line_no);
            }
            q(k % 2, k / 2) = *v * georef.size_px;
        }
        double conf = 1.0;
        if (tok.size() == 10) {
            const auto c = to_double(tok[9]);
            if (!c || *c < 0.0 || *c > 1.0) {
                throw ParseError(fmt::format("line {}: confidence '{}' outside [0, 1]", line_no, tok[9]), line_no);
            }
            conf = *c;
        }

        obb::Detection d;
        try {
            d.box = fit_box(q);
        } catch (const ValidationError& e) {
            throw ParseError(fmt::format("line {}: {}", line_no, e.what()), line_no);
        }
        d.box.frame = obb::Frame::Pixel;
        d.cls = *cls;
        d.confidence = conf;
        d.source_crop = georef.crop_id;
        d.id = fmt::format("{}:{}", georef.crop_id, line_no);
        out.push_back(std::move(d));
    }
    return out;
}

std::string write_quad_labels(const std::vector<obb::Detection>& detections, const obb::CropGeoref& georef,
                              bool with_confidence)
{
    std::string out;
    for (const auto& d : detections) {
        const obb::OrientedBox px =
            d.box.frame == obb::Frame::Pixel ? d.box : obb::reproject_box(d.box, obb::Frame::Pixel, georef);
        const auto q = obb::corners(px);
        out += fmt::format("{}", obb::index_of(d.cls));
        for (int c = 0; c < 4; ++c) {
            out += fmt::format(" {} {}", q(0, c) / georef.size_px, q(1, c) / georef.size_px);
        }
        if (with_confidence) out += fmt::format(" {}", d.confidence);
        out += '\n';
    }
    return out;
}

// ---- Population raster ----------------------------------------------------

geo::GeoPoint PopulationGrid::cell_center(Eigen::Index r, Eigen::Index c) const
{
    return {xllcorner + (static_cast<double>(c) + 0.5) * cellsize,
            yllcorner + (static_cast<double>(nrows() - r) - 0.5) * cellsize};
}

double PopulationGrid::total() const
{
    double sum = 0.0;
    for (Eigen::Index r = 0; r < nrows(); ++r) {
        for (Eigen::Index c = 0; c < ncols(); ++c) {
            const double v = values(r, c);
            if (!is_nodata(v)) sum += v;
        }
    }
    return sum;
}

PopulationGrid parse_population_grid(std::string_view text)
{
    const auto lines = split_lines(text);
    std::map<std::string, double> header;
    std::size_t n = 0;
    for (; n < lines.size(); ++n) {
        const auto tok = tokens(lines[n]);
        if (tok.empty()) continue;
        if (tok[0].empty() || !std::isalpha(static_cast<unsigned char>(tok[0][0]))) break;
        if (tok.size() != 2) throw ParseError(fmt::format("line {}: header needs a key and one value", n + 1), n + 1);
        std::string key(tok[0]);
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
        const auto v = to_double(tok[1]);
        if (!v) throw ParseError(fmt::format("line {}: bad header value '{}'", n + 1, tok[1]), n + 1);
        if (!header.emplace(key, *v).second) throw ParseError(fmt::format("line {}: duplicate key {}", n + 1, key), n + 1);
    }
    auto need = [&](const char* key) {
        const auto it = header.find(key);
        if (it == header.end()) throw ParseError(fmt::format("header is missing {}", key), n + 1);
        return it->second;
    };
    const double ncols_d = need("ncols");
    const double nrows_d = need("nrows");
    if (ncols_d < 1 || nrows_d < 1 || ncols_d != std::floor(ncols_d) || nrows_d != std::floor(nrows_d)) {
        throw ParseError("ncols and nrows must be positive integers", n + 1);
    }
    PopulationGrid g;
    g.cellsize = need("cellsize");
    if (!(g.cellsize > 0.0)) throw ParseError("cellsize must be positive", n + 1);
    const auto ncols = static_cast<Eigen::Index>(ncols_d);
    const auto nrows = static_cast<Eigen::Index>(nrows_d);
    if (header.contains("xllcenter")) {
        g.xllcorner = header["xllcenter"] - 0.5 * g.cellsize;
    } else {
        g.xllcorner = need("xllcorner");
    }
    if (header.contains("yllcenter")) {
        g.yllcorner = header["yllcenter"] - 0.5 * g.cellsize;
    } else {
        g.yllcorner = need("yllcorner");
    }
    if (header.contains("nodata_value")) g.nodata = header["nodata_value"];

    g.values.resize(nrows, ncols);
    Eigen::Index row = 0;
    for (; n < lines.size(); ++n) {
        const auto tok = tokens(lines[n]);
        if (tok.empty()) continue;
        const std::size_t line_no = n + 1;
        if (row >= nrows) throw ParseError(fmt::format("line {}: more than {} data rows", line_no, nrows), line_no);
        if (static_cast<Eigen::Index>(tok.size()) != ncols) {
            throw ParseError(fmt::format("line {}: expected {} values, found {}", line_no, ncols, tok.size()), line_no);
        }
        for (Eigen::Index c = 0; c < ncols; ++c) {
            const auto v = to_double(tok[static_cast<std::size_t>(c)]);
            if (!v) throw ParseError(fmt::format("line {}: bad value '{}'", line_no, tok[c]), line_no);
            if (*v < 0.0 && *v != g.nodata) {
                throw ParseError(fmt::format("line {}: negative population {}", line_no, *v), line_no);
            }
            g.values(row, c) = *v;
        }
        ++row;
    }
    if (row != nrows) throw ParseError(fmt::format("expected {} data rows, found {}", nrows, row), lines.size());
    return g;
}

std::string write_population_grid(const PopulationGrid& grid)
{
    std::string out = fmt::format("ncols {}\nnrows {}\nxllcorner {}\nyllcorner {}\ncellsize {}\nNODATA_value {}\n",
                                  grid.ncols(), grid.nrows(), grid.xllcorner, grid.yllcorner, grid.cellsize,
                                  grid.nodata);
    for (Eigen::Index r = 0; r < grid.nrows(); ++r) {
        for (Eigen::Index c = 0; c < grid.ncols(); ++c) {
            if (c > 0) out += ' ';
            out += fmt::format("{}", grid.values(r, c));
        }
        out += '\n';
    }
    return out;
}

// ---- Rule tables ----------------------------------------------------------

namespace {

std::vector<std::string> split_csv(std::string_view line)
{
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return s;
}

} // namespace

compliance::ComplianceRuleSet parse_rule_table(std::string_view text)
{
    const auto lines = split_lines(text);
    std::size_t n = 0;
    while (n < lines.size() && is_comment_or_blank(lines[n])) ++n;
    if (n == lines.size()) throw ConfigError("rule table is empty");

    const auto header = split_csv(lines[n]);
    const std::string corner = lower(header[0]);
    const bool criteria_rows = corner == "criterion";
    if (!criteria_rows && corner != "state") {
        throw ConfigError(fmt::format("line {}: header must start with 'criterion' or 'state'", n + 1));
    }
    if (header.size() < 2) throw ConfigError(fmt::format("line {}: header has no columns", n + 1));

    auto criterion = [](const std::string& name, std::size_t line_no) {
        const auto c = compliance::criterion_from_string(name);
        if (!c) throw ConfigError(fmt::format("line {}: unknown criterion '{}'", line_no, name));
        return *c;
    };

    compliance::ComplianceRuleSet rules;
    std::vector<compliance::Criterion> column_criteria;
    std::set<std::string> seen_cols;
    for (std::size_t k = 1; k < header.size(); ++k) {
        if (header[k].empty()) throw ConfigError(fmt::format("line {}: empty column name", n + 1));
        if (!seen_cols.insert(lower(header[k])).second) {
            throw ConfigError(fmt::format("line {}: duplicate column '{}'", n + 1, header[k]));
        }
        if (criteria_rows) {
            rules.declare_state(header[k]);
        } else {
            column_criteria.push_back(criterion(header[k], n + 1));
        }
    }

    std::set<std::string> seen_rows;
    for (++n; n < lines.size(); ++n) {
        if (is_comment_or_blank(lines[n])) continue;
        const std::size_t line_no = n + 1;
        const auto cells = split_csv(lines[n]);
        if (cells.size() != header.size()) {
            throw ConfigError(fmt::format("line {}: expected {} cells, found {}", line_no, header.size(), cells.size()));
        }
        if (!seen_rows.insert(lower(cells[0])).second) {
            throw ConfigError(fmt::format("line {}: duplicate row '{}'", line_no, cells[0]));
        }
        std::optional<compliance::Criterion> row_criterion;
        if (criteria_rows) {
            row_criterion = criterion(cells[0], line_no);
        } else {
            if (cells[0].empty()) throw ConfigError(fmt::format("line {}: empty state name", line_no));
            rules.declare_state(cells[0]);
        }
        for (std::size_t k = 1; k < cells.size(); ++k) {
            const auto& cell = cells[k];
            if (cell == "-" || cell.empty()) continue;
            const auto v = to_double(cell);
            if (!v) throw ConfigError(fmt::format("line {}: threshold '{}' is not a number", line_no, cell));
            if (*v <= 0.0) throw ConfigError(fmt::format("line {}: threshold {} must be positive", line_no, *v));
            if (criteria_rows) {
                rules.set(header[k], *row_criterion, *v);
            } else {
                rules.set(cells[0], column_criteria[k - 1], *v);
            }
        }
    }
    return rules;
}

std::string write_rule_table(const compliance::ComplianceRuleSet& rules)
{
    std::string out = "criterion";
    for (const auto& s : rules.states()) out += "," + s;
    out += '\n';
    for (auto c : compliance::kAllCriteria) {
        out += std::string(compliance::to_string(c));
        for (const auto& s : rules.states()) {
            const auto t = rules.threshold(s, c);
            out += t ? fmt::format(",{}", *t) : std::string(",-");
        }
        out += '\n';
    }
    return out;
}

// ---- Kiln dataset ---------------------------------------------------------

nlohmann::json kiln_to_feature(const KilnRecord& k)
{
    const auto q = obb::corners(k.box);
    nlohmann::json ring = nlohmann::json::array();
    for (int c = 0; c <= 4; ++c) {
        const auto g = geo::mercator_to_wgs84(geo::MercatorPoint::from(q.col(c % 4)));
        ring.push_back({g.lon, g.lat});
    }
    nlohmann::json props = {
        {"id", k.id},
        {"class", std::string(obb::to_string(k.cls))},
        {"confidence", k.confidence},
        {"state", k.state},
        {"validation_state", std::string(to_string(k.validation_state))},
        {"theta", k.box.theta},
        {"w_m", k.box.w},
        {"h_m", k.box.h},
        {"cx_m", k.box.center.x()},
        {"cy_m", k.box.center.y()},
        {"crop_id", k.provenance.crop_id},
        {"model_run", k.provenance.model_run},
        {"created_at", k.provenance.created_at},
        {"updated_at", k.provenance.updated_at},
    };
    return {{"type", "Feature"},
            {"geometry", {{"type", "Polygon"}, {"coordinates", nlohmann::json::array({ring})}}},
            {"properties", props}};
}

namespace {

double number_prop(const nlohmann::json& props, const char* key)
{
    const auto it = props.find(key);
    if (it == props.end() || !it->is_number()) throw ValidationError(fmt::format("property '{}' must be a number", key));
    return it->get<double>();
}

std::string string_prop(const nlohmann::json& props, const char* key, bool required)
{
    const auto it = props.find(key);
    if (it == props.end() || it->is_null()) {
        if (required) throw ValidationError(fmt::format("property '{}' is required", key));
        return {};
    }
    if (!it->is_string()) throw ValidationError(fmt::format("property '{}' must be a string", key));
    return it->get<std::string>();
}

} // namespace

KilnRecord kiln_from_feature(const nlohmann::json& feature)
{
    if (!feature.is_object() || !feature.contains("properties") || !feature["properties"].is_object()) {
        throw ValidationError("feature has no properties object");
    }
    const auto& props = feature["properties"];
    KilnRecord k;
    k.id = string_prop(props, "id", true);
    if (k.id.empty()) throw ValidationError("property 'id' is empty");

    const auto& cls = props.contains("class") ? props["class"] : nlohmann::json();
    std::optional<obb::KilnClass> c;
    if (cls.is_string()) c = obb::class_from_string(cls.get<std::string>());
    if (cls.is_number_integer()) c = obb::class_from_index(cls.get<int>());
    if (!c) throw ValidationError(fmt::format("unknown class {}", cls.dump()));
    k.cls = *c;

    k.confidence = props.contains("confidence") ? number_prop(props, "confidence") : 1.0;
    if (k.confidence < 0.0 || k.confidence > 1.0) throw ValidationError("confidence outside [0, 1]");
    k.state = string_prop(props, "state", false);
    const auto vs = string_prop(props, "validation_state", false);
    if (!vs.empty()) {
        const auto v = validation_state_from_string(vs);
        if (!v) throw ValidationError(fmt::format("unknown validation_state '{}'", vs));
        k.validation_state = *v;
    }
    k.provenance.crop_id = string_prop(props, "crop_id", false);
    k.provenance.model_run = string_prop(props, "model_run", false);
    k.provenance.created_at = string_prop(props, "created_at", false);
    k.provenance.updated_at = string_prop(props, "updated_at", false);

    if (props.contains("cx_m") && props.contains("cy_m")) {
        k.box.center = {number_prop(props, "cx_m"), number_prop(props, "cy_m")};
        k.box.w = number_prop(props, "w_m");
        k.box.h = number_prop(props, "h_m");
        k.box.theta = number_prop(props, "theta");
    } else {
        // Only the corner polygon: fit the box in Mercator meters.
        const auto geoms = features::geometries_from_geojson(feature.contains("geometry") ? feature["geometry"]
                                                                                          : nlohmann::json());
        const auto* poly = geoms.size() == 1 ? std::get_if<geo::Polygon>(&geoms[0]) : nullptr;
        if (poly == nullptr || poly->outer.size() != 5) throw ValidationError("geometry must be a 4-corner polygon");
        obb::Quad<double> q;
        for (int i = 0; i < 4; ++i) q.col(i) = geo::wgs84_to_mercator(poly->outer[static_cast<std::size_t>(i)]).vec();
        k.box = fit_box(q);
    }
    k.box.frame = obb::Frame::Mercator;
    obb::validate(k.box);
    return k;
}

std::vector<KilnRecord> read_kiln_dataset(std::string_view text)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        // nlohmann counts bytes from 1.
        const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
        throw ParseError(fmt::format("malformed JSON at byte {}: {}", offset, e.what()), 0, offset);
    }
    if (!doc.is_object() || doc.value("type", std::string{}) != "FeatureCollection" || !doc.contains("features") ||
        !doc["features"].is_array()) {
        throw ParseError("kiln dataset is not a GeoJSON FeatureCollection", 0);
    }
    std::vector<KilnRecord> out;
    std::set<std::string> ids;
    const auto& feats = doc["features"];
    for (std::size_t i = 0; i < feats.size(); ++i) {
        try {
            out.push_back(kiln_from_feature(feats[i]));
        } catch (const Error& e) {
            throw ParseError(fmt::format("feature {}: {}", i, e.what()), 0);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(fmt::format("feature {}: {}", i, e.what()), 0);
        }
        if (!ids.insert(out.back().id).second) {
            throw ParseError(fmt::format("feature {}: duplicate id '{}'", i, out.back().id), 0);
        }
    }
    return out;
}

std::string write_kiln_dataset(const std::vector<KilnRecord>& kilns)
{
    // One feature per line keeps snapshots diff-able.
    std::string out = "{\"type\":\"FeatureCollection\",\"features\":[";
    for (std::size_t i = 0; i < kilns.size(); ++i) {
        out += i == 0 ? "\n" : ",\n";
        out += kiln_to_feature(kilns[i]).dump();
    }
    out += "\n]}\n";
    return out;
}

// ---- Plain CSV tables -----------------------------------------------------

namespace {

std::vector<std::string> split_quoted(std::string_view line, std::size_t lineno)
{
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"' && trim(cur).empty()) {
            cur.clear();
            quoted = was_quoted = true;
        } else if (ch == ',') {
            cells.push_back(was_quoted ? cur : std::string(trim(cur)));
            cur.clear();
            was_quoted = false;
        } else {
            cur += ch;
        }
    }
    if (quoted) throw ParseError(fmt::format("line {}: unterminated quote", lineno), lineno);
    cells.push_back(was_quoted ? cur : std::string(trim(cur)));
    return cells;
}

} // namespace

std::optional<std::size_t> CsvTable::find(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    return std::nullopt;
}

std::size_t CsvTable::column(std::string_view name) const
{
    if (auto i = find(name)) return *i;
    throw ParseError(fmt::format("line {}: missing column '{}'", header_line, name), header_line);
}

CsvTable parse_csv(std::string_view text)
{
    CsvTable t;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (is_comment_or_blank(lines[i])) continue;
        const std::size_t lineno = i + 1;
        auto cells = split_quoted(lines[i], lineno);
        if (t.header.empty()) {
            t.header_line = lineno;
            for (auto& c : cells) t.header.push_back(lower(c));
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw ParseError(fmt::format("line {}: expected {} cells, got {}", lineno, t.header.size(), cells.size()),
                             lineno);
        }
        t.rows.push_back({lineno, std::move(cells)});
    }
    if (t.header.empty()) throw ParseError("empty CSV table", 0);
    return t;
}

double csv_number(const std::string& cell, std::size_t line)
{
    const auto v = to_double(cell);
    if (!v) throw ParseError(fmt::format("line {}: '{}' is not a number", line, cell), line);
    return *v;
}

std::string csv_field(std::string_view s)
{
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

// ---- Files ----------------------------------------------------------------

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError(fmt::format("cannot open {}", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view content)
{
    const std::string tmp = path + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw Error(fmt::format("cannot create {}: {}", tmp, std::strerror(errno)));
    std::size_t done = 0;
    while (done < content.size()) {
        const auto w = ::write(fd, content.data() + done, content.size() - done);
        if (w < 0) {
            if (errno == EINTR) continue;
            ::close(fd);
            throw Error(fmt::format("cannot write {}: {}", tmp, std::strerror(errno)));
        }
        done += static_cast<std::size_t>(w);
    }
    ::fsync(fd);
    ::close(fd);
    std::filesystem::rename(tmp, path);
}

} // namespace kilnaudit::ingest
