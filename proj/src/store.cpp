#include "kilnaudit/store.hpp"

#include "kilnaudit/error.hpp"
#include "kilnaudit/ingest.hpp"

#include <fmt/core.h>

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

namespace kilnaudit::service {

namespace fs = std::filesystem;

std::string_view to_string(ActionKind k)
{
    switch (k) {
    case ActionKind::Accept: return "accept";
    case ActionKind::Adjust: return "adjust";
    case ActionKind::Reclassify: return "reclassify";
    case ActionKind::Discard: return "discard";
    }
    return "?";
}

std::optional<ActionKind> action_kind_from_string(std::string_view s)
{
    for (auto k : {ActionKind::Accept, ActionKind::Adjust, ActionKind::Reclassify, ActionKind::Discard})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

namespace {

bool same_box(const std::optional<obb::OrientedBox>& a, const std::optional<obb::OrientedBox>& b)
{
    if (a.has_value() != b.has_value()) return false;
    if (!a) return true;
    return a->center == b->center && a->w == b->w && a->h == b->h && a->theta == b->theta && a->frame == b->frame;
}

std::string now_utc()
{
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

const nlohmann::json& member(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key)) throw ValidationError(fmt::format("action: missing '{}'", key));
    return j.at(key);
}

std::string string_member(const nlohmann::json& j, const char* key, bool required)
{
    if (!j.contains(key) || j.at(key).is_null()) {
        if (required) throw ValidationError(fmt::format("action: missing '{}'", key));
        return {};
    }
    if (!j.at(key).is_string()) throw ValidationError(fmt::format("action: '{}' must be a string", key));
    return j.at(key).get<std::string>();
}

double number_member(const nlohmann::json& j, const char* key)
{
    const auto& v = member(j, key);
    if (!v.is_number()) throw ValidationError(fmt::format("action: '{}' must be a number", key));
    return v.get<double>();
}

obb::OrientedBox box_from_json(const nlohmann::json& j)
{
    if (j.contains("corners")) {
        const auto& c = j.at("corners");
        if (!c.is_array() || c.size() != 4) throw ValidationError("action: 'corners' needs four [lon, lat] pairs");
        obb::Quad<double> q;
        for (int i = 0; i < 4; ++i) {
            const auto& p = c[static_cast<std::size_t>(i)];
            if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
                throw ValidationError("action: corner must be [lon, lat]");
            }
            const geo::GeoPoint g{p[0].get<double>(), p[1].get<double>()};
            try {
                geo::validate(g);
            } catch (const DomainError& e) {
                throw ValidationError(fmt::format("action: {}", e.what()));
            }
            q.col(i) = geo::wgs84_to_mercator(g).vec();
        }
        auto b = ingest::fit_box(q);
        b.frame = obb::Frame::Mercator;
        return b;
    }
    const auto& b = member(j, "box");
    if (!b.is_object()) throw ValidationError("action: 'box' must be an object");
    obb::OrientedBox box{Eigen::Vector2d(number_member(b, "cx_m"), number_member(b, "cy_m")), number_member(b, "w_m"),
                         number_member(b, "h_m"), number_member(b, "theta"), obb::Frame::Mercator};
    obb::validate(box);
    return obb::canonical(box);
}

} // namespace

bool same_request(const ValidationAction& a, const ValidationAction& b)
{
    return a.action_id == b.action_id && a.kiln_id == b.kiln_id && a.kind == b.kind && same_box(a.box, b.box) &&
           a.cls == b.cls && a.actor == b.actor &&
           (a.timestamp.empty() || b.timestamp.empty() || a.timestamp == b.timestamp);
}

nlohmann::json to_json(const ValidationAction& a)
{
    nlohmann::json j{{"action_id", a.action_id},
                     {"kiln_id", a.kiln_id},
                     {"action", to_string(a.kind)},
                     {"actor", a.actor},
                     {"timestamp", a.timestamp}};
    if (a.box) {
        j["box"] = {{"cx_m", a.box->center.x()}, {"cy_m", a.box->center.y()}, {"w_m", a.box->w}, {"h_m", a.box->h},
                    {"theta", a.box->theta}};
    }
    if (a.cls) j["class"] = obb::to_string(*a.cls);
    return j;
}

ValidationAction action_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ValidationError("action must be a JSON object");
    ValidationAction a;
    a.action_id = string_member(j, "action_id", true);
    if (a.action_id.empty()) throw ValidationError("action: empty 'action_id'");
    a.kiln_id = string_member(j, "kiln_id", false);
    const auto kind = string_member(j, "action", true);
    const auto k = action_kind_from_string(kind);
    if (!k) throw ValidationError(fmt::format("action: unknown action '{}'", kind));
    a.kind = *k;
    a.actor = string_member(j, "actor", false);
    a.timestamp = string_member(j, "timestamp", false);
    if (j.contains("box") || j.contains("corners")) a.box = box_from_json(j);
    if (j.contains("class")) {
        const auto c = obb::class_from_string(string_member(j, "class", true));
        if (!c) throw ValidationError("action: unknown class");
        a.cls = *c;
    }
    return a;
}

KilnRecord apply_validation(const KilnRecord& k, const ValidationAction& a)
{
    if (a.kiln_id != k.id) throw ValidationError(fmt::format("action for '{}' applied to '{}'", a.kiln_id, k.id));
    if (k.validation_state == ValidationState::Discarded) {
        throw ConflictError(fmt::format("kiln '{}' is discarded", k.id));
    }
    const bool wants_box = a.kind == ActionKind::Adjust;
    const bool wants_cls = a.kind == ActionKind::Reclassify;
    if (a.box.has_value() != wants_box) {
        throw ValidationError(fmt::format("{} {} a box", to_string(a.kind), wants_box ? "needs" : "takes no"));
    }
    if (a.cls.has_value() != wants_cls) {
        throw ValidationError(fmt::format("{} {} a class", to_string(a.kind), wants_cls ? "needs" : "takes no"));
    }
    KilnRecord out = k;
    switch (a.kind) {
    case ActionKind::Accept: out.validation_state = ValidationState::Accepted; break;
    case ActionKind::Adjust:
        if (a.box->frame != obb::Frame::Mercator) throw ValidationError("adjusted box must be in the Mercator frame");
        obb::validate(*a.box);
        out.box = obb::canonical(*a.box);
        out.validation_state = ValidationState::Adjusted;
        break;
    case ActionKind::Reclassify:
        out.cls = *a.cls;
        out.validation_state = ValidationState::Reclassified;
        break;
    case ActionKind::Discard: out.validation_state = ValidationState::Discarded; break;
    }
    if (!a.timestamp.empty()) out.provenance.updated_at = a.timestamp;
    return out;
}

std::vector<KilnRecord> replay(std::vector<KilnRecord> initial, const std::vector<ValidationAction>& log)
{
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < initial.size(); ++i) index[initial[i].id] = i;
    for (const auto& a : log) {
        const auto it = index.find(a.kiln_id);
        if (it == index.end()) continue;
        try {
            initial[it->second] = apply_validation(initial[it->second], a);
        } catch (const ConflictError&) {
        } catch (const ValidationError&) {
        }
    }
    return initial;
}

// ---- ValidationStore ------------------------------------------------------

namespace {

constexpr const char* kInitial = "initial.geojson";
constexpr const char* kSnapshot = "snapshot.geojson";
constexpr const char* kLog = "actions.jsonl";

struct Fd {
    int fd = -1;
    ~Fd()
    {
        if (fd >= 0) ::close(fd);
    }
};

void write_all(int fd, std::string_view s, const fs::path& path)
{
    while (!s.empty()) {
        const auto n = ::write(fd, s.data(), s.size());
        if (n < 0) throw Error(fmt::format("write {}: {}", path.string(), std::strerror(errno)));
        s.remove_prefix(static_cast<std::size_t>(n));
    }
}

std::string snapshot_text(const std::vector<KilnRecord>& kilns, std::uint64_t seq)
{
    // The dataset writer emits one feature per line; tag it with the log sequence.
    auto text = ingest::write_kiln_dataset(kilns);
    const auto brace = text.find('{');
    return text.insert(brace + 1, fmt::format("\"log_seq\":{},", seq));
}

} // namespace

void ValidationStore::initialize(const fs::path& dir, const std::vector<KilnRecord>& initial)
{
    fs::create_directories(dir);
    if (fs::exists(dir / kInitial)) throw ConflictError(fmt::format("{} already holds a dataset", dir.string()));
    ingest::write_file_atomic((dir / kInitial).string(), ingest::write_kiln_dataset(initial));
}

ValidationStore::ValidationStore(fs::path dir) : ValidationStore(std::move(dir), Options{}) {}

ValidationStore::ValidationStore(fs::path dir, Options options) : dir_(std::move(dir)), options_(std::move(options))
{
    std::vector<KilnRecord> kilns;
    fs::remove(fs::path((dir_ / kSnapshot).string() + ".tmp"));
    if (fs::exists(dir_ / kSnapshot)) {
        const auto text = ingest::read_file((dir_ / kSnapshot).string());
        kilns = ingest::read_kiln_dataset(text);
        snapshot_seq_ = nlohmann::json::parse(text).at("log_seq").get<std::uint64_t>();
    } else if (fs::exists(dir_ / kInitial)) {
        kilns = ingest::read_kiln_dataset(ingest::read_file((dir_ / kInitial).string()));
    } else {
        throw NotFoundError(fmt::format("{}: no dataset (run ingest first)", dir_.string()));
    }
    for (std::size_t i = 0; i < kilns.size(); ++i) index_[kilns[i].id] = i;

    const auto log_path = dir_ / kLog;
    if (fs::exists(log_path)) {
        const auto text = ingest::read_file(log_path.string());
        std::size_t pos = 0, good_end = 0, lineno = 0;
        while (pos < text.size()) {
            const auto nl = text.find('\n', pos);
            ++lineno;
            if (nl == std::string::npos) break; // torn tail: never acknowledged
            const auto line = std::string_view(text).substr(pos, nl - pos);
            nlohmann::json entry;
            try {
                entry = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error&) {
                throw ParseError(fmt::format("{}: corrupt entry at line {}", log_path.string(), lineno), lineno);
            }
            const auto seq = entry.at("seq").get<std::uint64_t>();
            if (seq != seq_ + 1) {
                throw ParseError(fmt::format("{}: sequence gap at line {}", log_path.string(), lineno), lineno);
            }
            const auto action = action_from_json(entry.at("action"));
            auto record = ingest::kiln_from_feature(entry.at("record"));
            if (seq > snapshot_seq_) {
                const auto it = index_.find(action.kiln_id);
                if (it == index_.end()) throw ParseError(fmt::format("{}: unknown kiln at line {}", log_path.string(), lineno), lineno);
                auto replayed = apply_validation(kilns[it->second], action);
                if (!(replayed == record)) {
                    throw ParseError(fmt::format("{}: replay diverges at line {}", log_path.string(), lineno), lineno);
                }
                kilns[it->second] = std::move(replayed);
            }
            by_action_id_[action.action_id] = {action, std::move(record)};
            log_.push_back(action);
            seq_ = seq;
            pos = nl + 1;
            good_end = pos;
        }
        if (good_end < text.size()) fs::resize_file(log_path, good_end);
    }
    if (seq_ < snapshot_seq_) throw ParseError(fmt::format("{}: log is behind the snapshot", log_path.string()), 0);
    data_ = std::make_shared<const std::vector<KilnRecord>>(std::move(kilns));
}

void ValidationStore::fault(std::string_view point) const
{
    if (options_.fault_hook) options_.fault_hook(point);
}

void ValidationStore::append_log(std::uint64_t seq, const ValidationAction& a, const KilnRecord& result)
{
    const nlohmann::json entry{{"seq", seq}, {"action", to_json(a)}, {"record", ingest::kiln_to_feature(result)}};
    const auto line = entry.dump() + "\n";
    const auto path = dir_ / kLog;
    Fd f{::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644)};
    if (f.fd < 0) throw Error(fmt::format("open {}: {}", path.string(), std::strerror(errno)));
    const auto half = line.size() / 2;
    write_all(f.fd, std::string_view(line).substr(0, half), path);
    fault("log_torn");
    write_all(f.fd, std::string_view(line).substr(half), path);
    if (::fsync(f.fd) != 0) throw Error(fmt::format("fsync {}: {}", path.string(), std::strerror(errno)));
}

KilnRecord ValidationStore::apply(ValidationAction action)
{
    std::lock_guard lock(mu_);
    if (action.action_id.empty()) throw ValidationError("action: empty 'action_id'");
    if (const auto it = by_action_id_.find(action.action_id); it != by_action_id_.end()) {
        if (!same_request(it->second.first, action)) {
            throw ConflictError(fmt::format("action id '{}' was used for a different action", action.action_id));
        }
        return it->second.second;
    }
    const auto k = index_.find(action.kiln_id);
    if (k == index_.end()) throw NotFoundError(fmt::format("no kiln '{}'", action.kiln_id));
    if (action.timestamp.empty()) action.timestamp = now_utc();
    auto result = apply_validation((*data_)[k->second], action);

    append_log(seq_ + 1, action, result);
    fault("log_appended");

    auto next = std::make_shared<std::vector<KilnRecord>>(*data_);
    (*next)[k->second] = result;
    data_ = std::move(next);
    ++seq_;
    log_.push_back(action);
    by_action_id_[action.action_id] = {action, result};

    if (options_.snapshot_interval > 0 && seq_ - snapshot_seq_ >= options_.snapshot_interval) write_snapshot_locked();
    return result;
}

void ValidationStore::write_snapshot()
{
    std::lock_guard lock(mu_);
    write_snapshot_locked();
}

void ValidationStore::write_snapshot_locked()
{
    const auto path = dir_ / kSnapshot;
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        Fd f{::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644)};
        if (f.fd < 0) throw Error(fmt::format("open {}: {}", tmp.string(), std::strerror(errno)));
        write_all(f.fd, snapshot_text(*data_, seq_), tmp);
        if (::fsync(f.fd) != 0) throw Error(fmt::format("fsync {}: {}", tmp.string(), std::strerror(errno)));
    }
    fault("snapshot_tmp");
    fs::rename(tmp, path);
    snapshot_seq_ = seq_;
    fault("snapshot_done");
}

std::shared_ptr<const std::vector<KilnRecord>> ValidationStore::snapshot() const
{
    std::lock_guard lock(mu_);
    return data_;
}

std::optional<KilnRecord> ValidationStore::find(const std::string& id) const
{
    std::lock_guard lock(mu_);
    const auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return (*data_)[it->second];
}

std::uint64_t ValidationStore::sequence() const
{
    std::lock_guard lock(mu_);
    return seq_;
}

std::vector<ValidationAction> ValidationStore::log() const
{
    std::lock_guard lock(mu_);
    return log_;
}

// ---- WorkSession ----------------------------------------------------------

WorkSession::WorkSession(fs::path file) : file_(std::move(file))
{
    if (fs::exists(file_)) cells_ = tiling::grid_from_geojson(nlohmann::json::parse(ingest::read_file(file_.string())));
}

void WorkSession::persist() const
{
    ingest::write_file_atomic(file_.string(), tiling::grid_to_geojson(cells_).dump(1) + "\n");
}

void WorkSession::reset(std::vector<tiling::GridCell> cells)
{
    std::lock_guard lock(mu_);
    for (auto& c : cells) {
        c.status = tiling::CellStatus::Unvisited;
        c.assignee.clear();
    }
    cells_ = std::move(cells);
    persist();
}

std::vector<tiling::GridCell> WorkSession::cells() const
{
    std::lock_guard lock(mu_);
    return cells_;
}

tiling::GridCell WorkSession::set_status(int row, int col, tiling::CellStatus status, const std::string& assignee)
{
    std::lock_guard lock(mu_);
    for (auto& c : cells_) {
        if (c.row != row || c.col != col) continue;
        c.status = status;
        if (!assignee.empty()) c.assignee = assignee;
        persist();
        return c;
    }
    throw NotFoundError(fmt::format("no grid cell ({}, {})", row, col));
}

std::size_t WorkSession::done() const
{
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](const auto& c) {
        return c.status == tiling::CellStatus::Done;
    }));
}

std::size_t WorkSession::total() const
{
    std::lock_guard lock(mu_);
    return cells_.size();
}

double WorkSession::progress() const
{
    const auto t = total();
    return t == 0 ? 0.0 : static_cast<double>(done()) / static_cast<double>(t);
}

} // namespace kilnaudit::service
