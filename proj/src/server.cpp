#include "kilnaudit/server.hpp"

#include "kilnaudit/error.hpp"
#include "kilnaudit/ingest.hpp"
#include "kilnaudit/pipeline.hpp"

#include <fmt/core.h>
#include <httplib.h>

#include <cstdlib>
#include <map>
#include <mutex>
#include <set>

namespace kilnaudit::service {

namespace fs = std::filesystem;

// ---- Configuration --------------------------------------------------------

std::pair<std::string, int> parse_listen(const std::string& s)
{
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0) throw ConfigError(fmt::format("listen '{}' is not host:port", s));
    const auto host = s.substr(0, colon);
    const auto port_text = s.substr(colon + 1);
    int port = -1;
    try {
        std::size_t used = 0;
        port = std::stoi(port_text, &used);
        if (used != port_text.size()) port = -1;
    } catch (const std::exception&) {
        port = -1;
    }
    if (port < 0 || port > 65535) throw ConfigError(fmt::format("listen '{}': bad port", s));
    return {host, port};
}

ServiceConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir)
{
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{"listen", "workspace", "tile_url", "tile_timeout_s", "rules",
                                             "features_dir", "production", "population", "skip_unknown_states",
                                             "snapshot_interval", "page_limit"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ConfigError(fmt::format("config: unknown key '{}'", k));
    ServiceConfig c;
    auto path = [&](const char* key) -> std::optional<fs::path> {
        if (!j.contains(key)) return std::nullopt;
        if (!j.at(key).is_string()) throw ConfigError(fmt::format("config: '{}' must be a string", key));
        fs::path p = j.at(key).get<std::string>();
        return p.is_absolute() ? p : base_dir / p;
    };
    auto positive = [&](const char* key, auto fallback) {
        if (!j.contains(key)) return fallback;
        const auto& v = j.at(key);
        if (!v.is_number_integer() || v.get<long long>() <= 0) {
            throw ConfigError(fmt::format("config: '{}' must be a positive integer", key));
        }
        return static_cast<decltype(fallback)>(v.get<long long>());
    };
    try {
        if (j.contains("listen")) std::tie(c.host, c.port) = parse_listen(j.at("listen").get<std::string>());
        if (auto p = path("workspace")) c.workspace = *p;
        if (j.contains("tile_url")) c.tile_url = j.at("tile_url").get<std::string>();
        if (j.contains("skip_unknown_states")) c.skip_unknown_states = j.at("skip_unknown_states").get<bool>();
    } catch (const nlohmann::json::type_error& e) {
        throw ConfigError(fmt::format("config: {}", e.what()));
    }
    c.rules = path("rules");
    c.features_dir = path("features_dir");
    c.production = path("production");
    c.population = path("population");
    c.tile_timeout_s = positive("tile_timeout_s", c.tile_timeout_s);
    c.snapshot_interval = positive("snapshot_interval", c.snapshot_interval);
    c.page_limit = positive("page_limit", c.page_limit);
    if (!c.tile_url.empty() && c.tile_url.find("://") == std::string::npos) {
        throw ConfigError("config: tile_url needs a scheme");
    }
    return c;
}

ServiceConfig load_config(const fs::path& file)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ingest::read_file(file.string()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", file.string(), e.what()));
    }
    return config_from_json(j, fs::absolute(file).parent_path());
}

void apply_env(ServiceConfig& config)
{
    if (const char* l = std::getenv("KILNAUDIT_LISTEN"); l && *l) std::tie(config.host, config.port) = parse_listen(l);
    if (const char* w = std::getenv("KILNAUDIT_WORKSPACE"); w && *w) config.workspace = w;
}

// ---- Server ---------------------------------------------------------------

namespace {

struct HttpError {
    int status;
    std::string code;
    std::string message;
};

void send_json(httplib::Response& res, int status, const nlohmann::json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message)
{
    send_json(res, status, {{"code", code}, {"message", message}});
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn)
{
    try {
        fn();
    } catch (const HttpError& e) {
        send_error(res, e.status, e.code, e.message);
    } catch (const NotFoundError& e) {
        send_error(res, 404, "not_found", e.what());
    } catch (const ConflictError& e) {
        send_error(res, 409, "conflict", e.what());
    } catch (const ConfigError& e) {
        send_error(res, 422, "config_error", e.what());
    } catch (const ValidationError& e) {
        send_error(res, 400, "bad_request", e.what());
    } catch (const ParseError& e) {
        send_error(res, 400, "bad_request", e.what());
    } catch (const DomainError& e) {
        send_error(res, 400, "bad_request", e.what());
    } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "bad_request", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
    }
}

nlohmann::json parse_body(const httplib::Request& req)
{
    try {
        return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
        throw HttpError{400, "bad_request", fmt::format("malformed JSON body: {}", e.what())};
    }
}

double parse_double(const std::string& s, const char* what)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw HttpError{400, "bad_request", fmt::format("{}: '{}' is not a number", what, s)};
}

struct Bbox {
    double w, s, e, n;
    bool contains(const geo::GeoPoint& p) const { return p.lon >= w && p.lon <= e && p.lat >= s && p.lat <= n; }
};

Bbox parse_bbox(const std::string& text)
{
    std::vector<double> v;
    std::size_t start = 0;
    while (true) {
        const auto comma = text.find(',', start);
        v.push_back(parse_double(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start), "bbox"));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (v.size() != 4) throw HttpError{400, "bad_request", "bbox needs w,s,e,n"};
    const Bbox b{v[0], v[1], v[2], v[3]};
    if (b.w > b.e || b.s > b.n || b.w < -180 || b.e > 180 || b.s < -90 || b.n > 90) {
        throw HttpError{400, "bad_request", "bbox out of range or inverted"};
    }
    return b;
}

std::size_t parse_count(const std::string& s, const char* what)
{
    const double v = parse_double(s, what);
    if (v < 1 || v != std::floor(v)) throw HttpError{400, "bad_request", fmt::format("{} must be a positive integer", what)};
    return static_cast<std::size_t>(v);
}

// "https://host:port/a/{z}/{x}/{y}.png" -> ("https://host:port", "/a/3/4/5.png")
std::pair<std::string, std::string> split_url(const std::string& url)
{
    const auto scheme = url.find("://");
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

std::string expand(std::string tmpl, int z, long long x, long long y)
{
    auto sub = [&tmpl](const std::string& key, const std::string& value) {
        for (auto p = tmpl.find(key); p != std::string::npos; p = tmpl.find(key, p + value.size()))
            tmpl.replace(p, key.size(), value);
    };
    sub("{z}", std::to_string(z));
    sub("{x}", std::to_string(x));
    sub("{y}", std::to_string(y));
    return tmpl;
}

} // namespace

struct Server::Impl {
    ServiceConfig cfg;
    ValidationStore store;
    WorkSession session;
    httplib::Server http;

    std::optional<compliance::ComplianceRuleSet> rules;
    std::vector<features::FeatureLayer> layers;
    std::optional<std::vector<impact::StateProduction>> production;
    std::optional<ingest::PopulationGrid> population;

    std::mutex cache_mu;
    std::map<std::string, std::pair<std::uint64_t, std::string>> report_cache;
    std::mutex tile_mu;

    explicit Impl(ServiceConfig c)
        : cfg(std::move(c)),
          store(cfg.workspace, ValidationStore::Options{cfg.snapshot_interval, {}}),
          session(cfg.workspace / "grid.geojson")
    {
        if (cfg.rules) rules = ingest::parse_rule_table(ingest::read_file(cfg.rules->string()));
        if (cfg.features_dir) layers = pipeline::load_feature_layers(*cfg.features_dir);
        if (cfg.production) production = impact::parse_production_csv(ingest::read_file(cfg.production->string()));
        if (cfg.population) population = ingest::parse_population_grid(ingest::read_file(cfg.population->string()));
        routes();
    }

    // Reports are cached per dataset version; they run on the request thread
    // against an immutable snapshot, so mutations never wait on them.
    template <typename Fn>
    std::string cached(const std::string& key, Fn&& compute)
    {
        const auto seq = store.sequence();
        {
            std::lock_guard lock(cache_mu);
            const auto it = report_cache.find(key);
            if (it != report_cache.end() && it->second.first == seq) return it->second.second;
        }
        auto text = compute();
        std::lock_guard lock(cache_mu);
        report_cache[key] = {seq, text};
        return text;
    }

    void routes()
    {
        http.set_payload_max_length(1 << 20);
        http.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, {{"status", "ok"}});
        });
        http.Get("/api/kilns", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { list_kilns(req, res); });
        });
        http.Get(R"(/api/kilns/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto k = store.find(req.matches[1]);
                if (!k) throw NotFoundError(fmt::format("no kiln '{}'", req.matches[1].str()));
                send_json(res, 200, ingest::kiln_to_feature(*k));
            });
        });
        http.Post(R"(/api/kilns/([^/]+)/action)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto body = parse_body(req);
                const std::string id = req.matches[1];
                if (body.is_object() && body.contains("kiln_id") && body["kiln_id"] != id) {
                    throw HttpError{400, "bad_request", "kiln_id in body does not match the path"};
                }
                if (body.is_object()) body["kiln_id"] = id;
                send_json(res, 200, ingest::kiln_to_feature(store.apply(action_from_json(body))));
            });
        });
        http.Get("/api/grid", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                auto j = tiling::grid_to_geojson(session.cells());
                j["progress"] = {{"done", session.done()}, {"total", session.total()}};
                send_json(res, 200, j);
            });
        });
        http.Post(R"(/api/grid/(-?\d+)/(-?\d+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto body = parse_body(req);
                if (!body.is_object() || !body.contains("status") || !body["status"].is_string()) {
                    throw HttpError{400, "bad_request", "body needs a 'status' string"};
                }
                const auto st = tiling::cell_status_from_string(body["status"].get<std::string>());
                if (!st) throw HttpError{400, "bad_request", "unknown status"};
                const std::string who = body.value("assignee", std::string{});
                const auto cell = session.set_status(std::stoi(req.matches[1]), std::stoi(req.matches[2]), *st, who);
                send_json(res, 200, tiling::grid_to_geojson({cell})["features"][0]);
            });
        });
        http.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 200, progress()); });
        });
        http.Get("/api/reports/compliance", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { compliance_report(req, res); });
        });
        http.Get("/api/reports/emissions", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                if (!production) throw HttpError{404, "not_configured", "no production table configured"};
                const auto text = cached("emissions", [&] {
                    return pipeline::pretty(pipeline::emissions_from_kilns(*production, *store.snapshot()).to_json());
                });
                res.set_content(text, "application/json");
            });
        });
        http.Get("/api/reports/exposure", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { exposure_report(req, res); });
        });
        http.Get(R"(/tiles/(\d+)/(\d+)/(\d+)(?:\.png)?)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { tile(req, res); });
        });
        http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such route");
        });
    }

    void list_kilns(const httplib::Request& req, httplib::Response& res)
    {
        const auto data = store.snapshot();
        std::optional<Bbox> bbox;
        if (req.has_param("bbox")) bbox = parse_bbox(req.get_param_value("bbox"));
        const std::string state = req.get_param_value("state");
        std::optional<obb::KilnClass> cls;
        if (req.has_param("class")) {
            cls = obb::class_from_string(req.get_param_value("class"));
            if (!cls) throw HttpError{400, "bad_request", "unknown class"};
        }
        std::optional<ValidationState> vs;
        if (req.has_param("validation_state")) {
            vs = validation_state_from_string(req.get_param_value("validation_state"));
            if (!vs) throw HttpError{400, "bad_request", "unknown validation_state"};
        }
        std::size_t limit = cfg.page_limit;
        if (req.has_param("limit")) limit = std::min(parse_count(req.get_param_value("limit"), "limit"), cfg.page_limit);
        const std::string cursor = req.get_param_value("cursor");

        std::vector<const KilnRecord*> hits;
        for (const auto& k : *data) {
            if (!cursor.empty() && k.id <= cursor) continue;
            if (!state.empty() && k.state != state) continue;
            if (cls && k.cls != *cls) continue;
            if (vs && k.validation_state != *vs) continue;
            if (bbox && !bbox->contains(k.centroid())) continue;
            hits.push_back(&k);
        }
        std::sort(hits.begin(), hits.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
        nlohmann::json out{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
        for (std::size_t i = 0; i < hits.size() && i < limit; ++i) out["features"].push_back(ingest::kiln_to_feature(*hits[i]));
        out["next_cursor"] = hits.size() > limit ? nlohmann::json(hits[limit - 1]->id) : nlohmann::json(nullptr);
        send_json(res, 200, out);
    }

    nlohmann::json progress()
    {
        const auto data = store.snapshot();
        std::map<ValidationState, std::size_t> n;
        for (const auto& k : *data) ++n[k.validation_state];
        return {{"total", data->size()},
                {"pending", n[ValidationState::Pending]},
                {"accepted", n[ValidationState::Accepted]},
                {"adjusted", n[ValidationState::Adjusted]},
                {"reclassified", n[ValidationState::Reclassified]},
                {"discarded", n[ValidationState::Discarded]},
                {"cells_done", session.done()},
                {"cells_total", session.total()}};
    }

    void compliance_report(const httplib::Request& req, httplib::Response& res)
    {
        if (!rules) throw HttpError{404, "not_configured", "no rule table configured"};
        const auto text = cached("compliance", [&] {
            compliance::AuditOptions o;
            o.skip_unknown_states = cfg.skip_unknown_states;
            return pipeline::pretty(pipeline::compliance_summary(*store.snapshot(), layers, *rules, o).to_json());
        });
        if (!req.has_param("state")) {
            res.set_content(text, "application/json");
            return;
        }
        // One column of the full table.
        const auto full = nlohmann::json::parse(text);
        const auto state = req.get_param_value("state");
        const auto& cols = full["columns"];
        const auto it = std::find(cols.begin(), cols.end(), state);
        if (it == cols.end()) throw NotFoundError(fmt::format("no state '{}' in the rule table", state));
        const auto i = static_cast<std::size_t>(it - cols.begin());
        nlohmann::json out{{"columns", {state}}, {"criteria", nlohmann::json::array()}};
        for (const auto& c : full["criteria"])
            out["criteria"].push_back({{"criterion", c["criterion"]}, {"values", {c["values"][i]}}});
        for (const char* key : {"non_compliant", "kiln_count", "percentage"}) out[key] = {full[key][i]};
        res.set_content(pipeline::pretty(out), "application/json");
    }

    void exposure_report(const httplib::Request& req, httplib::Response& res)
    {
        if (!population) throw HttpError{404, "not_configured", "no population grid configured"};
        std::vector<double> radii(impact::kExposureRadiiKm.begin(), impact::kExposureRadiiKm.end());
        std::string key = "exposure";
        if (req.has_param("radius_km")) {
            radii = {parse_double(req.get_param_value("radius_km"), "radius_km")};
            if (radii[0] <= 0) throw HttpError{400, "bad_request", "radius_km must be positive"};
            key += ":" + req.get_param_value("radius_km");
        }
        const auto text = cached(key, [&] {
            return pipeline::pretty(impact::exposure_table(*store.snapshot(), *population, radii).to_json());
        });
        res.set_content(text, "application/json");
    }

    void tile(const httplib::Request& req, httplib::Response& res)
    {
        const int z = std::stoi(req.matches[1]);
        if (z > 24) throw HttpError{400, "bad_request", "zoom out of range"};
        const long long x = std::stoll(req.matches[2]), y = std::stoll(req.matches[3]);
        const long long n = 1LL << z;
        if (x >= n || y >= n) throw HttpError{400, "bad_request", "tile index out of range"};
        const auto dir = cfg.workspace / "tiles" / std::to_string(z) / std::to_string(x);
        const auto body_path = dir / (std::to_string(y) + ".tile");
        const auto type_path = dir / (std::to_string(y) + ".type");
        if (fs::exists(body_path) && fs::exists(type_path)) {
            res.set_content(ingest::read_file(body_path.string()), ingest::read_file(type_path.string()));
            res.set_header("X-Cache", "HIT");
            return;
        }
        if (cfg.tile_url.empty()) throw HttpError{404, "not_configured", "no upstream tile URL configured"};
        const auto [origin, path] = split_url(expand(cfg.tile_url, z, x, y));
        httplib::Client cli(origin);
        cli.set_connection_timeout(cfg.tile_timeout_s);
        cli.set_read_timeout(cfg.tile_timeout_s);
        cli.set_follow_location(true);
        const auto up = cli.Get(path);
        if (!up) throw HttpError{502, "upstream_error", fmt::format("upstream unreachable: {}", httplib::to_string(up.error()))};
        if (up->status != 200) throw HttpError{502, "upstream_error", fmt::format("upstream answered {}", up->status)};
        const auto type = up->has_header("Content-Type") ? up->get_header_value("Content-Type") : "image/png";
        {
            std::lock_guard lock(tile_mu);
            fs::create_directories(dir);
            ingest::write_file_atomic(body_path.string(), up->body);
            ingest::write_file_atomic(type_path.string(), type);
        }
        res.set_content(up->body, type);
        res.set_header("X-Cache", "MISS");
    }
};

Server::Server(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
Server::~Server() { stop(); }

int Server::bind()
{
    auto& c = impl_->cfg;
    if (c.port == 0) {
        const int p = impl_->http.bind_to_any_port(c.host);
        if (p < 0) throw Error(fmt::format("cannot bind {}", c.host));
        return p;
    }
    if (!impl_->http.bind_to_port(c.host, c.port)) throw Error(fmt::format("cannot bind {}:{}", c.host, c.port));
    return c.port;
}

void Server::run() { impl_->http.listen_after_bind(); }
void Server::stop()
{
    if (impl_) impl_->http.stop();
}

ValidationStore& Server::store() { return impl_->store; }

} // namespace kilnaudit::service
