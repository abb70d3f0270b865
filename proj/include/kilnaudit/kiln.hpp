#ifndef KILNAUDIT_KILN_HPP
#define KILNAUDIT_KILN_HPP

#include "kilnaudit/geo.hpp"
#include "kilnaudit/obb.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kilnaudit {

enum class ValidationState { Pending, Accepted, Adjusted, Reclassified, Discarded };

std::string_view to_string(ValidationState s);
std::optional<ValidationState> validation_state_from_string(std::string_view s);

struct Provenance {
    std::string crop_id;
    std::string model_run;
    std::string created_at;
    std::string updated_at;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// One kiln of the inventory. The box is in the Mercator frame.
struct KilnRecord {
    std::string id;
    obb::OrientedBox box{Eigen::Vector2d::Zero(), 1.0, 1.0, 0.0, obb::Frame::Mercator};
    obb::KilnClass cls = obb::KilnClass::FCBK;
    double confidence = 1.0;
    std::string state;
    ValidationState validation_state = ValidationState::Pending;
    Provenance provenance;

    geo::GeoPoint centroid() const { return geo::mercator_to_wgs84(geo::MercatorPoint::from(box.center)); }
    bool active() const { return validation_state != ValidationState::Discarded; }
};

// Field-wise equality with exact doubles.
bool operator==(const KilnRecord& a, const KilnRecord& b);

/// Records of a detection set reprojected to Mercator, in pending state.
KilnRecord kiln_from_detection(const obb::Detection& d);

std::vector<KilnRecord> active_kilns(const std::vector<KilnRecord>& kilns);

} // namespace kilnaudit

#endif
