#ifndef KILNAUDIT_INGEST_HPP
#define KILNAUDIT_INGEST_HPP

#include "kilnaudit/geo.hpp"
#include "kilnaudit/kiln.hpp"
#include "kilnaudit/obb.hpp"
#include "kilnaudit/rules.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kilnaudit::ingest {

// ---- OBB label files ------------------------------------------------------
//
// One detection per line: `class x1 y1 x2 y2 x3 y3 x4 y4 [confidence]`, with
// corner coordinates normalised to [0, 1] of the crop. Blank lines and lines
// starting with '#' are ignored.

/// Minimum-area rectangle enclosing four points. Exact for rectangle corners.
/// Throws ValidationError for degenerate input.
obb::OrientedBox fit_box(const obb::Quad<double>& points);

/// Detections in the crop's pixel frame; missing confidence means ground
/// truth (1.0). Ids are "<crop_id>:<line>". Errors carry the line number.
std::vector<obb::Detection> parse_quad_labels(std::string_view text, const obb::CropGeoref& georef);
std::string write_quad_labels(const std::vector<obb::Detection>& detections, const obb::CropGeoref& georef,
                              bool with_confidence = true);

// ---- Population raster (ESRI ASCII grid) ----------------------------------

struct PopulationGrid {
    using Values = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    double xllcorner = 0.0;
    double yllcorner = 0.0;
    double cellsize = 0.0083;
    double nodata = -9999.0;
    // Row 0 is the northernmost row.
    Values values;

    Eigen::Index nrows() const { return values.rows(); }
    Eigen::Index ncols() const { return values.cols(); }
    bool is_nodata(double v) const { return v == nodata; }
    geo::GeoPoint cell_center(Eigen::Index r, Eigen::Index c) const;
    // Sum over cells that hold data.
    double total() const;
};

// Throws ParseError (with line) on header or payload mismatch.
PopulationGrid parse_population_grid(std::string_view text);
std::string write_population_grid(const PopulationGrid& grid);

// ---- Rule tables ----------------------------------------------------------
//
// Comma separated; '#' starts a comment line. The header's first cell picks
// the orientation:
//   criterion,<state>,<state>...   one row per criterion (as published)
//   state,<criterion>,<criterion>... one row per state
// Cells are meters or '-' for "no rule".

compliance::ComplianceRuleSet parse_rule_table(std::string_view text);
// Criterion-per-row orientation.
std::string write_rule_table(const compliance::ComplianceRuleSet& rules);

// ---- Kiln dataset (GeoJSON) -----------------------------------------------

nlohmann::json kiln_to_feature(const KilnRecord& k);
KilnRecord kiln_from_feature(const nlohmann::json& feature);

// Throws ParseError naming the offending feature index.
std::vector<KilnRecord> read_kiln_dataset(std::string_view text);
std::string write_kiln_dataset(const std::vector<KilnRecord>& kilns);

// ---- Plain CSV tables -----------------------------------------------------
//
// Small keyed tables (survey counts, production, kiln counts). Comma
// separated, optional double quotes, '#' comment lines. The first
// non-comment line is the header; names are trimmed and lowercased.

struct CsvTable {
    struct Row {
        std::size_t line = 0;
        std::vector<std::string> cells;
    };
    std::size_t header_line = 0;
    std::vector<std::string> header;
    std::vector<Row> rows;

    std::optional<std::size_t> find(std::string_view name) const;
    // Throws ParseError at the header line when the column is missing.
    std::size_t column(std::string_view name) const;
};

// Rows must match the header width; errors carry the line number.
CsvTable parse_csv(std::string_view text);
// Finite number or a ParseError at `line`.
double csv_number(const std::string& cell, std::size_t line);
std::string csv_field(std::string_view s);

// ---- Files ----------------------------------------------------------------

std::string read_file(const std::string& path);
// Writes via a temporary file and rename.
void write_file_atomic(const std::string& path, std::string_view content);

} // namespace kilnaudit::ingest

#endif
