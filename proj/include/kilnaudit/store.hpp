#ifndef KILNAUDIT_STORE_HPP
#define KILNAUDIT_STORE_HPP

#include "kilnaudit/kiln.hpp"
#include "kilnaudit/tiling.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kilnaudit::service {

enum class ActionKind { Accept, Adjust, Reclassify, Discard };

std::string_view to_string(ActionKind k);
std::optional<ActionKind> action_kind_from_string(std::string_view s);

/// One hand-validation step. `box` is required for adjust and `cls` for
/// reclassify; other payloads are rejected.
struct ValidationAction {
    std::string action_id;
    std::string kiln_id;
    ActionKind kind = ActionKind::Accept;
    std::optional<obb::OrientedBox> box; // Mercator
    std::optional<obb::KilnClass> cls;
    std::string actor;
    std::string timestamp;
};

// Same request: every field equal, timestamps compared only when both are set.
bool same_request(const ValidationAction& a, const ValidationAction& b);

/// Wire form: {action_id, kiln_id, action, box?: {cx_m, cy_m, w_m, h_m, theta}
/// or corners?: [[lon, lat] x4], class?, actor, timestamp}.
nlohmann::json to_json(const ValidationAction& a);
// Throws ValidationError on malformed payloads.
ValidationAction action_from_json(const nlohmann::json& j);

/// Pure transition. Adjust replaces geometry only, reclassify the class only;
/// discard is terminal. Throws ConflictError on a discarded kiln and
/// ValidationError on a bad payload.
KilnRecord apply_validation(const KilnRecord& k, const ValidationAction& a);

/// Replays actions over an initial dataset; rejected actions are skipped, as
/// the store never logs them.
std::vector<KilnRecord> replay(std::vector<KilnRecord> initial, const std::vector<ValidationAction>& log);

/// Durable kiln dataset under hand validation.
///
/// Files in the directory: initial.geojson (never rewritten), actions.jsonl
/// (append-only write-ahead log, fsync'd before the in-memory update) and
/// snapshot.geojson (atomic rewrite every `snapshot_interval` actions, tagged
/// with the log sequence it covers). Opening replays the log tail past the
/// snapshot and drops a torn final line.
class ValidationStore {
public:
    // Called at named points of a mutation; tests throw from it to simulate a
    // crash there, after which the object must be discarded and the directory
    // reopened. Points: "log_torn", "log_appended", "snapshot_tmp", "snapshot_done".
    using FaultHook = std::function<void(std::string_view point)>;

    struct Options {
        std::size_t snapshot_interval = 32;
        FaultHook fault_hook;
    };

    /// Creates the workspace from `initial` when it holds no dataset yet.
    static void initialize(const std::filesystem::path& dir, const std::vector<KilnRecord>& initial);

    explicit ValidationStore(std::filesystem::path dir);
    ValidationStore(std::filesystem::path dir, Options options);

    /// Applies an action, or returns the earlier result for a repeated action
    /// id with the same body. Throws NotFoundError (unknown kiln),
    /// ConflictError (discarded kiln, or an action id reused for a different
    /// action) or ValidationError (bad payload); none of them change state.
    KilnRecord apply(ValidationAction action);

    /// Immutable view of the current dataset; cheap to hold across mutations.
    std::shared_ptr<const std::vector<KilnRecord>> snapshot() const;
    std::optional<KilnRecord> find(const std::string& id) const;
    std::uint64_t sequence() const;
    std::vector<ValidationAction> log() const;

    void write_snapshot();
    const std::filesystem::path& dir() const { return dir_; }

private:
    void fault(std::string_view point) const;
    void append_log(std::uint64_t seq, const ValidationAction& a, const KilnRecord& result);
    void write_snapshot_locked();

    std::filesystem::path dir_;
    Options options_;
    mutable std::mutex mu_;
    std::shared_ptr<const std::vector<KilnRecord>> data_;
    std::map<std::string, std::size_t> index_;
    std::vector<ValidationAction> log_;
    std::map<std::string, std::pair<ValidationAction, KilnRecord>> by_action_id_;
    std::uint64_t seq_ = 0;
    std::uint64_t snapshot_seq_ = 0;
};

/// Annotation grid sweep state, persisted as grid.geojson.
class WorkSession {
public:
    explicit WorkSession(std::filesystem::path file);
    // Replaces the grid (status reset) and persists it.
    void reset(std::vector<tiling::GridCell> cells);

    std::vector<tiling::GridCell> cells() const;
    /// Throws NotFoundError for an unknown cell.
    tiling::GridCell set_status(int row, int col, tiling::CellStatus status, const std::string& assignee);

    std::size_t done() const;
    std::size_t total() const;
    double progress() const;

private:
    void persist() const;

    std::filesystem::path file_;
    mutable std::mutex mu_;
    std::vector<tiling::GridCell> cells_;
};

} // namespace kilnaudit::service

#endif
