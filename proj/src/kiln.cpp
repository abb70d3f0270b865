#include "kilnaudit/kiln.hpp"

#include "kilnaudit/error.hpp"

namespace kilnaudit {

std::string_view to_string(ValidationState s)
{
    switch (s) {
    case ValidationState::Pending: return "pending";
    case ValidationState::Accepted: return "accepted";
    case ValidationState::Adjusted: return "adjusted";
    case ValidationState::Reclassified: return "reclassified";
    case ValidationState::Discarded: return "discarded";
    }
    return "?";
}

std::optional<ValidationState> validation_state_from_string(std::string_view s)
{
    for (auto v : {ValidationState::Pending, ValidationState::Accepted, ValidationState::Adjusted,
                   ValidationState::Reclassified, ValidationState::Discarded}) {
        if (to_string(v) == s) return v;
    }
    return std::nullopt;
}

bool operator==(const KilnRecord& a, const KilnRecord& b)
{
    return a.id == b.id && a.box.center == b.box.center && a.box.w == b.box.w && a.box.h == b.box.h &&
           a.box.theta == b.box.theta && a.box.frame == b.box.frame && a.cls == b.cls &&
           a.confidence == b.confidence && a.state == b.state && a.validation_state == b.validation_state &&
           a.provenance == b.provenance;
}

KilnRecord kiln_from_detection(const obb::Detection& d)
{
    if (d.box.frame != obb::Frame::Mercator) throw ValidationError("kiln records need Mercator boxes");
    obb::validate(d);
    KilnRecord k;
    k.id = d.id;
    k.box = obb::canonical(d.box);
    k.cls = d.cls;
    k.confidence = d.confidence;
    k.provenance.crop_id = d.source_crop;
    return k;
}

std::vector<KilnRecord> active_kilns(const std::vector<KilnRecord>& kilns)
{
    std::vector<KilnRecord> out;
    for (const auto& k : kilns) {
        if (k.active()) out.push_back(k);
    }
    return out;
}

} // namespace kilnaudit
