#ifndef KILNAUDIT_TILING_HPP
#define KILNAUDIT_TILING_HPP

#include "kilnaudit/geo.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kilnaudit::tiling {

/// Square mosaic split into square crops that overlap by `overlap` pixels.
struct CropSpec {
    int image_size = 4096;
    int crop_size = 640;
    int overlap = 64;

    int stride() const { return crop_size - overlap; }
};

void validate(const CropSpec& spec);

/// Crop offsets along one axis. Offsets advance by the stride; the last crop is
/// clamped so that it ends exactly at the image edge.
std::vector<int> crop_offsets(const CropSpec& spec);

struct CropOrigin {
    int x0 = 0;
    int y0 = 0;

    friend bool operator==(const CropOrigin&, const CropOrigin&) = default;
};

/// Row-major (y outer, x inner) list of crop origins.
std::vector<CropOrigin> crop_origins(const CropSpec& spec);

enum class CellStatus { Unvisited, InProgress, Done };

std::string_view to_string(CellStatus s);
std::optional<CellStatus> cell_status_from_string(std::string_view s);

struct GridCell {
    geo::Polygon polygon;
    // Global indices of the cell: col counts east from x = -pi*R, row counts
    // south from y = +pi*R.
    int row = 0;
    int col = 0;
    CellStatus status = CellStatus::Unvisited;
    std::string assignee;
};

/// Axis-aligned square cells of `cell_km` Mercator kilometres whose interior
/// intersects the region. Cells are aligned to multiples of the cell size.
std::vector<GridCell> annotation_grid(const geo::Geometry& region, double cell_km = 1.0);

/// Polygon area in squared Mercator meters (holes subtracted).
double mercator_area(const geo::Polygon& poly);

nlohmann::json grid_to_geojson(const std::vector<GridCell>& cells);
std::vector<GridCell> grid_from_geojson(const nlohmann::json& doc);

} // namespace kilnaudit::tiling

#endif
