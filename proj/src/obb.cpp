#include "kilnaudit/obb.hpp"

#include "kilnaudit/error.hpp"
#include "kilnaudit/geo.hpp"

#include <fmt/core.h>

#include <cmath>
#include <unordered_map>

namespace kilnaudit::obb {

std::string_view to_string(KilnClass c)
{
    switch (c) {
    case KilnClass::CFCBK: return "CFCBK";
    case KilnClass::FCBK: return "FCBK";
    case KilnClass::Zigzag: return "Zigzag";
    }
    return "?";
}

std::optional<KilnClass> class_from_string(std::string_view s)
{
    for (auto c : kAllClasses) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

std::optional<KilnClass> class_from_index(int index)
{
    if (index < 0 || index > 2) return std::nullopt;
    return static_cast<KilnClass>(index);
}

std::string_view to_string(Frame f)
{
    return f == Frame::Pixel ? "pixel" : "mercator";
}

Frame frame_from_string(std::string_view s)
{
    if (s == "pixel") return Frame::Pixel;
    if (s == "mercator") return Frame::Mercator;
    throw ValidationError(fmt::format("unknown frame '{}'", s));
}

void validate(const OrientedBox& b)
{
    if (!std::isfinite(b.center.x()) || !std::isfinite(b.center.y()) || !std::isfinite(b.theta)) {
        throw ValidationError("box has non-finite center or angle");
    }
    if (!(b.w > 0.0) || !(b.h > 0.0) || !std::isfinite(b.w) || !std::isfinite(b.h)) {
        throw ValidationError(fmt::format("box extents must be positive, got w={} h={}", b.w, b.h));
    }
}

void validate(const Detection& d)
{
    validate(d.box);
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
        throw ValidationError(fmt::format("detection '{}' confidence {} outside [0, 1]", d.id, d.confidence));
    }
}

namespace {

bool ranks_before(const Detection& a, const Detection& b)
{
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.id < b.id;
}

double circumradius(const OrientedBox& b)
{
    return 0.5 * std::hypot(b.w, b.h);
}

// Uniform hash grid over box centers. Two boxes can only overlap when their
// centers are closer than the sum of their circumradii, so a cell size of
// twice the largest circumradius confines candidates to the 3x3 neighbourhood.
class CenterGrid {
public:
    explicit CenterGrid(const std::vector<Detection>& ds)
    {
        double max_r = 0.0;
        for (const auto& d : ds) max_r = std::max(max_r, circumradius(d.box));
        cell_ = std::max(2.0 * max_r, 1e-9);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            cells_[key(cell_of(ds[i].box.center.x()), cell_of(ds[i].box.center.y()))].push_back(i);
        }
    }

    template <typename Fn>
    void for_each_near(const Eigen::Vector2d& c, Fn&& fn) const
    {
        const auto cx = cell_of(c.x());
        const auto cy = cell_of(c.y());
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                auto it = cells_.find(key(cx + dx, cy + dy));
                if (it == cells_.end()) continue;
                for (auto i : it->second) fn(i);
            }
        }
    }

private:
    std::int64_t cell_of(double v) const { return static_cast<std::int64_t>(std::floor(v / cell_)); }
    static std::uint64_t key(std::int64_t x, std::int64_t y)
    {
        return (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL) ^ static_cast<std::uint64_t>(y);
    }

    double cell_;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

} // namespace

std::vector<Detection> nms(std::vector<Detection> detections, const NmsOptions& options)
{
    if (!(options.iou_threshold >= 0.0 && options.iou_threshold <= 1.0)) {
        throw ValidationError(fmt::format("IoU threshold {} outside [0, 1]", options.iou_threshold));
    }
    std::erase_if(detections, [&](const Detection& d) { return d.confidence < options.conf_threshold; });
    std::sort(detections.begin(), detections.end(), ranks_before);

    std::vector<char> suppressed(detections.size(), 0);
    std::vector<Detection> kept;

    auto try_suppress = [&](std::size_t i, std::size_t j) {
        if (j <= i || suppressed[j]) return;
        if (!options.class_agnostic && detections[i].cls != detections[j].cls) return;
        if (obb_iou(detections[i].box, detections[j].box) >= options.iou_threshold) suppressed[j] = 1;
    };

    if (options.iou_threshold <= 0.0) {
        // Disjoint boxes have IoU 0, so every later box is a candidate.
        for (std::size_t i = 0; i < detections.size(); ++i) {
            if (suppressed[i]) continue;
            kept.push_back(detections[i]);
            for (std::size_t j = i + 1; j < detections.size(); ++j) try_suppress(i, j);
        }
        return kept;
    }

    const CenterGrid grid(detections);
    for (std::size_t i = 0; i < detections.size(); ++i) {
        if (suppressed[i]) continue;
        kept.push_back(detections[i]);
        grid.for_each_near(detections[i].box.center, [&](std::size_t j) { try_suppress(i, j); });
    }
    return kept;
}

std::vector<Detection> merge_cross_tile(std::vector<Detection> detections, double iou_threshold, bool class_agnostic)
{
    for (const auto& d : detections) {
        if (d.box.frame != Frame::Mercator) {
            throw ValidationError(fmt::format("detection '{}' is in the {} frame; merge needs Mercator boxes", d.id,
                                              to_string(d.box.frame)));
        }
    }
    return nms(std::move(detections), NmsOptions{iou_threshold, 0.0, class_agnostic});
}

CropGeoref CropGeoref::at_zoom(std::string crop_id, const Eigen::Vector2d& origin, int zoom, int size_px)
{
    return CropGeoref{std::move(crop_id), size_px, origin, geo::ground_resolution(zoom, 0.0)};
}

Eigen::Vector2d CropGeoref::pixel_to_mercator(const Eigen::Vector2d& px) const
{
    return {origin.x() + px.x() * meters_per_pixel, origin.y() - px.y() * meters_per_pixel};
}

Eigen::Vector2d CropGeoref::mercator_to_pixel(const Eigen::Vector2d& m) const
{
    return {(m.x() - origin.x()) / meters_per_pixel, (origin.y() - m.y()) / meters_per_pixel};
}

OrientedBox reproject_box(const OrientedBox& b, Frame to, const CropGeoref& georef)
{
    validate(b);
    if (!(georef.meters_per_pixel > 0.0)) {
        throw ValidationError("crop georeference needs a positive meters-per-pixel");
    }
    if (b.frame == to) return b;

    OrientedBox out = b;
    out.frame = to;
    out.theta = -b.theta;
    if (to == Frame::Mercator) {
        out.center = georef.pixel_to_mercator(b.center);
        out.w = b.w * georef.meters_per_pixel;
        out.h = b.h * georef.meters_per_pixel;
    } else {
        out.center = georef.mercator_to_pixel(b.center);
        out.w = b.w / georef.meters_per_pixel;
        out.h = b.h / georef.meters_per_pixel;
    }
    return canonical(out);
}

} // namespace kilnaudit::obb
