#include "kilnaudit/error.hpp"
#include "kilnaudit/ingest.hpp"
#include "kilnaudit/server.hpp"
#include "kilnaudit/store.hpp"
#include "kilnaudit/tiling.hpp"

#include <doctest.h>
#include <fmt/core.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "crash_trials.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <thread>

using namespace kilnaudit;
using namespace kilnaudit::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = KILN_FIXTURE_DIR;
const std::string kCli = KILN_CLI;

// Runs the command line tool and returns its stdout; fails the test on a
// non-zero exit.
std::string run_cli(const std::string& args)
{
    const auto cmd = fmt::format("'{}' {} 2>/dev/null", kCli, args);
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::string out;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) out.append(buf, n);
    const int rc = pclose(p);
    REQUIRE_MESSAGE(rc == 0, cmd);
    return out;
}

std::vector<KilnRecord> fixture_kilns()
{
    return ingest::read_kiln_dataset(ingest::read_file(kFixtures + "/compliance/kilns.geojson"));
}

ServiceConfig fixture_config(const fs::path& ws)
{
    ServiceConfig c;
    c.host = "127.0.0.1";
    c.port = 0;
    c.workspace = ws;
    c.rules = kFixtures + "/siting_rules.cfg";
    c.features_dir = kFixtures + "/compliance/features";
    c.production = kFixtures + "/service/production.csv";
    c.population = kFixtures + "/service/population.asc";
    c.page_limit = 10;
    c.snapshot_interval = 4;
    return c;
}

// A server on a free port, serving on its own thread.
struct Running {
    Server server;
    int port = 0;
    std::thread thread;

    explicit Running(ServiceConfig c) : server(std::move(c))
    {
        port = server.bind();
        thread = std::thread([this] { server.run(); });
        httplib::Client probe("127.0.0.1", port);
        for (int i = 0; i < 200 && !probe.Get("/api/health"); ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ~Running()
    {
        server.stop();
        thread.join();
    }
    httplib::Client client() const
    {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(30);
        return c;
    }
};

json body_of(const httplib::Result& r)
{
    REQUIRE(r);
    return json::parse(r->body);
}

void check_error(const httplib::Result& r, int status, const std::string& code)
{
    REQUIRE(r);
    CHECK(r->status == status);
    const auto j = json::parse(r->body);
    CHECK(j.at("code") == code);
    CHECK(j.at("message").is_string());
}

httplib::Result post(httplib::Client& c, const std::string& path, const json& body)
{
    return c.Post(path, body.dump(), "application/json");
}

std::set<std::string> ids_of(const json& fc)
{
    std::set<std::string> ids;
    for (const auto& f : fc.at("features")) ids.insert(f.at("properties").at("id").get<std::string>());
    return ids;
}

} // namespace

TEST_CASE("bbox around one kiln returns exactly that kiln")
{
    crash_trials::TempDir ws;
    const auto kilns = fixture_kilns();
    ValidationStore::initialize(ws.path, kilns);
    Running srv(fixture_config(ws.path));
    auto c = srv.client();

    CHECK(body_of(c.Get("/api/health")).at("status") == "ok");
    const auto p = kilns[0].centroid();
    const auto fc = body_of(c.Get(fmt::format("/api/kilns?bbox={},{},{},{}", p.lon - 1e-4, p.lat - 1e-4, p.lon + 1e-4,
                                              p.lat + 1e-4)));
    REQUIRE(fc.at("features").size() == 1);
    CHECK(fc["features"][0]["properties"]["id"] == kilns[0].id);
    CHECK(fc["type"] == "FeatureCollection");

    const auto one = body_of(c.Get("/api/kilns/" + kilns[0].id));
    CHECK(one["properties"]["id"] == kilns[0].id);
    check_error(c.Get("/api/kilns/nope"), 404, "not_found");
}

TEST_CASE("pagination walks every kiln once in id order")
{
    crash_trials::TempDir ws;
    const auto kilns = fixture_kilns();
    ValidationStore::initialize(ws.path, kilns);
    Running srv(fixture_config(ws.path));
    auto c = srv.client();

    std::vector<std::string> seen;
    std::string cursor;
    for (int page = 0; page < 100; ++page) {
        const auto fc = body_of(c.Get("/api/kilns?limit=7" + (cursor.empty() ? "" : "&cursor=" + cursor)));
        CHECK(fc["features"].size() <= 7);
        for (const auto& f : fc["features"]) seen.push_back(f["properties"]["id"]);
        if (fc["next_cursor"].is_null()) break;
        cursor = fc["next_cursor"];
    }
    std::vector<std::string> want;
    for (const auto& k : kilns) want.push_back(k.id);
    std::sort(want.begin(), want.end());
    CHECK(seen == want);

    // The page size is capped by the configuration.
    const auto capped = body_of(c.Get("/api/kilns?limit=1000"));
    CHECK(capped["features"].size() == 10);
    CHECK(capped["next_cursor"].is_string());
    check_error(c.Get("/api/kilns?limit=0"), 400, "bad_request");
}

TEST_CASE("filters select by state, class and validation state")
{
    crash_trials::TempDir ws;
    const auto kilns = fixture_kilns();
    ValidationStore::initialize(ws.path, kilns);
    Running srv(fixture_config(ws.path));
    auto c = srv.client();

    std::map<std::string, std::set<std::string>> by_state, by_class;
    for (const auto& k : kilns) {
        by_state[k.state].insert(k.id);
        by_class[std::string(obb::to_string(k.cls))].insert(k.id);
    }
    for (const auto& [state, ids] : by_state) {
        const auto r = c.Get("/api/kilns", httplib::Params{{"state", state}, {"limit", "500"}}, httplib::Headers{});
        CHECK(ids_of(body_of(r)) == ids);
    }
    for (const auto& [cls, ids] : by_class) {
        const auto r = c.Get("/api/kilns", httplib::Params{{"class", cls}, {"limit", "500"}}, httplib::Headers{});
        CHECK(ids_of(body_of(r)) == ids);
    }
    std::set<std::string> discarded;
    for (const auto& k : kilns)
        if (!k.active()) discarded.insert(k.id);
    CHECK(ids_of(body_of(c.Get("/api/kilns?validation_state=discarded"))) == discarded);
    check_error(c.Get("/api/kilns?class=Hoffmann"), 400, "bad_request");
    check_error(c.Get("/api/kilns?validation_state=maybe"), 400, "bad_request");
    check_error(c.Get("/api/kilns?bbox=1,2,3"), 400, "bad_request");
    check_error(c.Get("/api/kilns?bbox=10,0,5,1"), 400, "bad_request");
    check_error(c.Get("/api/nothing/here"), 404, "not_found");
}

TEST_CASE("validation actions: idempotent retries, conflicts, persistence")
{
    crash_trials::TempDir ws;
    const auto kilns = fixture_kilns();
    ValidationStore::initialize(ws.path, kilns);
    const auto id = kilns[1].id;
    const auto already_discarded =
        std::count_if(kilns.begin(), kilns.end(), [](const KilnRecord& k) { return !k.active(); });
    REQUIRE(kilns[1].active());
    {
        Running srv(fixture_config(ws.path));
        auto c = srv.client();

        const json discard{{"action_id", "a-1"}, {"action", "discard"}, {"actor", "ann"}};
        const auto first = c.Post("/api/kilns/" + id + "/action", discard.dump(), "application/json");
        REQUIRE(first);
        CHECK(first->status == 200);
        CHECK(json::parse(first->body)["properties"]["validation_state"] == "discarded");
        const auto again = c.Post("/api/kilns/" + id + "/action", discard.dump(), "application/json");
        REQUIRE(again);
        CHECK(again->status == 200);
        CHECK(again->body == first->body);
        CHECK(srv.server.store().log().size() == 1);

        // Discard is terminal.
        check_error(post(c, "/api/kilns/" + id + "/action", {{"action_id", "a-2"}, {"action", "accept"}}), 409,
                    "conflict");
        // Same id, different request.
        check_error(post(c, "/api/kilns/" + kilns[2].id + "/action", {{"action_id", "a-1"}, {"action", "accept"}}),
                    409, "conflict");
        check_error(post(c, "/api/kilns/zz/action", {{"action_id", "a-3"}, {"action", "accept"}}), 404, "not_found");
        check_error(post(c, "/api/kilns/" + kilns[2].id + "/action", {{"action_id", "a-4"}, {"action", "fly"}}), 400,
                    "bad_request");
        check_error(post(c, "/api/kilns/" + kilns[2].id + "/action", {{"action_id", "a-5"}, {"action", "adjust"}}),
                    400, "bad_request");
        check_error(c.Post("/api/kilns/" + id + "/action", "{not json", "application/json"), 400, "bad_request");
        check_error(post(c, "/api/kilns/" + kilns[2].id + "/action",
                         {{"action_id", "a-6"}, {"action", "accept"}, {"kiln_id", "other"}}),
                    400, "bad_request");
        CHECK(srv.server.store().log().size() == 1);

        const auto rc = body_of(post(c, "/api/kilns/" + kilns[2].id + "/action",
                                     {{"action_id", "a-7"}, {"action", "reclassify"}, {"class", "Zigzag"}}));
        CHECK(rc["properties"]["class"] == "Zigzag");
        CHECK(rc["properties"]["validation_state"] == "reclassified");

        const auto& b = kilns[3].box;
        const json adjust{{"action_id", "a-8"},
                          {"action", "adjust"},
                          {"box", {{"cx_m", b.center.x() + 5}, {"cy_m", b.center.y()}, {"w_m", b.w}, {"h_m", b.h},
                                   {"theta", b.theta}}}};
        const auto adj = body_of(post(c, "/api/kilns/" + kilns[3].id + "/action", adjust));
        CHECK(adj["properties"]["validation_state"] == "adjusted");
        CHECK(adj["properties"]["cx_m"].get<double>() == doctest::Approx(b.center.x() + 5));

        const auto prog = body_of(c.Get("/api/progress"));
        CHECK(prog["total"] == kilns.size());
        CHECK(prog["discarded"] == 1 + already_discarded);
        CHECK(prog["reclassified"] == 1);
        CHECK(prog["adjusted"] == 1);
        CHECK(prog["pending"] == kilns.size() - 3 - already_discarded);
    }
    // A restarted service sees the same dataset.
    Running srv(fixture_config(ws.path));
    auto c = srv.client();
    CHECK(body_of(c.Get("/api/kilns/" + id))["properties"]["validation_state"] == "discarded");
    CHECK(body_of(c.Get("/api/progress"))["discarded"] == 1 + already_discarded);
    CHECK(srv.server.store().log().size() == 3);
}

TEST_CASE("grid status updates and progress")
{
    crash_trials::TempDir ws;
    ValidationStore::initialize(ws.path, fixture_kilns());
    geo::Polygon square{{{80.0, 26.0}, {80.05, 26.0}, {80.05, 26.05}, {80.0, 26.05}, {80.0, 26.0}}, {}};
    const auto cells = tiling::annotation_grid(geo::Geometry{square}, 1.0);
    REQUIRE(cells.size() > 4);
    WorkSession(ws.path / "grid.geojson").reset(cells);

    Running srv(fixture_config(ws.path));
    auto c = srv.client();
    const auto grid = body_of(c.Get("/api/grid"));
    CHECK(grid["features"].size() == cells.size());
    CHECK(grid["progress"]["done"] == 0);

    const auto path = fmt::format("/api/grid/{}/{}/status", cells[0].row, cells[0].col);
    const auto cell = body_of(post(c, path, {{"status", "done"}, {"assignee", "ann"}}));
    CHECK(cell["properties"]["status"] == "done");
    // Repeating the same update is harmless.
    post(c, path, {{"status", "done"}, {"assignee", "ann"}});
    const auto prog = body_of(c.Get("/api/progress"));
    CHECK(prog["cells_done"] == 1);
    CHECK(prog["cells_total"] == cells.size());

    check_error(post(c, path, {{"status", "finished"}}), 400, "bad_request");
    check_error(post(c, path, json::object()), 400, "bad_request");
    check_error(post(c, "/api/grid/1/1/status", {{"status", "done"}}), 404, "not_found");
}

TEST_CASE("reports equal the command line output byte for byte")
{
    crash_trials::TempDir ws;
    const auto kilns = fixture_kilns();
    ValidationStore::initialize(ws.path, kilns);
    Running srv(fixture_config(ws.path));
    auto c = srv.client();

    const auto fx = kFixtures;
    const auto audit_args = fmt::format("audit --rules '{}/siting_rules.cfg' --features '{}/compliance/features' --kilns ", fx,
                                        fx);
    const auto cli = run_cli(audit_args + "'" + fx + "/compliance/kilns.geojson'");
    const auto api = c.Get("/api/reports/compliance");
    REQUIRE(api);
    CHECK(api->status == 200);
    CHECK(api->body == cli);
    const auto table = json::parse(api->body);
    CHECK(table["percentage"].back() == 63);

    // One state's column.
    const auto bihar = body_of(c.Get("/api/reports/compliance?state=Bihar"));
    CHECK(bihar["columns"] == json::array({"Bihar"}));
    CHECK(bihar["percentage"] == json::array({56}));
    check_error(c.Get("/api/reports/compliance?state=Atlantis"), 404, "not_found");

    // After a mutation the report follows the dataset, still equal to the CLI
    // run over the same records.
    post(c, "/api/kilns/" + kilns[0].id + "/action", {{"action_id", "d"}, {"action", "discard"}});
    const auto snap = ws.path / "current.geojson";
    ingest::write_file_atomic(snap.string(), ingest::write_kiln_dataset(*srv.server.store().snapshot()));
    const auto cli2 = run_cli(audit_args + "'" + snap.string() + "'");
    const auto api2 = c.Get("/api/reports/compliance");
    REQUIRE(api2);
    CHECK(api2->body == cli2);
    CHECK(api2->body != api->body);

    const auto em_cli = run_cli(fmt::format("emissions --production '{}/service/production.csv' --kilns '{}'", fx,
                                            snap.string()));
    const auto em = c.Get("/api/reports/emissions");
    REQUIRE(em);
    CHECK(em->body == em_cli);

    const auto ex_cli = run_cli(fmt::format("exposure --population '{}/service/population.asc' --kilns '{}'", fx,
                                            snap.string()));
    const auto ex = c.Get("/api/reports/exposure");
    REQUIRE(ex);
    CHECK(ex->body == ex_cli);
    const auto ex2_cli = run_cli(fmt::format("exposure --population '{}/service/population.asc' --kilns '{}' --radii 2",
                                             fx, snap.string()));
    const auto ex2 = c.Get("/api/reports/exposure?radius_km=2");
    REQUIRE(ex2);
    CHECK(ex2->body == ex2_cli);
    check_error(c.Get("/api/reports/exposure?radius_km=-1"), 400, "bad_request");
}

TEST_CASE("reports without configured inputs answer 404")
{
    crash_trials::TempDir ws;
    ValidationStore::initialize(ws.path, fixture_kilns());
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.workspace = ws.path;
    Running srv(cfg);
    auto c = srv.client();
    check_error(c.Get("/api/reports/compliance"), 404, "not_configured");
    check_error(c.Get("/api/reports/emissions"), 404, "not_configured");
    check_error(c.Get("/api/reports/exposure"), 404, "not_configured");
    check_error(c.Get("/tiles/1/0/0"), 404, "not_configured");
}

TEST_CASE("tile proxy caches upstream tiles and passes failures through")
{
    httplib::Server upstream;
    std::atomic<int> hits{0};
    upstream.Get(R"(/t/(\d+)/(\d+)/(\d+)\.png)", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        if (req.matches[3] == "7") {
            res.status = 500;
            return;
        }
        res.set_content(fmt::format("tile {}/{}/{}", req.matches[1].str(), req.matches[2].str(), req.matches[3].str()),
                        "image/png");
    });
    const int up_port = upstream.bind_to_any_port("127.0.0.1");
    std::thread up_thread([&] { upstream.listen_after_bind(); });
    upstream.wait_until_ready();

    crash_trials::TempDir ws;
    ValidationStore::initialize(ws.path, fixture_kilns());
    auto cfg = fixture_config(ws.path);
    cfg.tile_url = fmt::format("http://127.0.0.1:{}/t/{{z}}/{{x}}/{{y}}.png", up_port);
    {
        Running srv(cfg);
        auto c = srv.client();

        const auto miss = c.Get("/tiles/3/4/5.png");
        REQUIRE(miss);
        CHECK(miss->status == 200);
        CHECK(miss->body == "tile 3/4/5");
        CHECK(miss->get_header_value("Content-Type") == "image/png");
        CHECK(miss->get_header_value("X-Cache") == "MISS");
        const auto hit = c.Get("/tiles/3/4/5");
        REQUIRE(hit);
        CHECK(hit->body == "tile 3/4/5");
        CHECK(hit->get_header_value("X-Cache") == "HIT");
        CHECK(hits == 1);

        // Failures are reported and never cached.
        check_error(c.Get("/tiles/3/4/7.png"), 502, "upstream_error");
        check_error(c.Get("/tiles/3/4/7.png"), 502, "upstream_error");
        CHECK(hits == 3);
        check_error(c.Get("/tiles/3/8/0.png"), 400, "bad_request");
        check_error(c.Get("/tiles/30/0/0.png"), 400, "bad_request");
    }
    upstream.stop();
    up_thread.join();

    // The cache survives the upstream going away.
    Running srv(cfg);
    auto c = srv.client();
    const auto cached = c.Get("/tiles/3/4/5.png");
    REQUIRE(cached);
    CHECK(cached->status == 200);
    CHECK(cached->body == "tile 3/4/5");
    check_error(c.Get("/tiles/3/4/6.png"), 502, "upstream_error");
}

TEST_CASE("configuration file and environment overrides")
{
    crash_trials::TempDir dir;
    const json j{{"listen", "0.0.0.0:9000"},  {"workspace", "ws"},      {"rules", "r.cfg"},
                 {"features_dir", "/abs/f"},  {"page_limit", 50},       {"tile_url", "https://t.example/{z}/{x}/{y}"},
                 {"skip_unknown_states", true}};
    const auto c = config_from_json(j, dir.path);
    CHECK(c.host == "0.0.0.0");
    CHECK(c.port == 9000);
    CHECK(c.workspace == dir.path / "ws");
    CHECK(*c.rules == dir.path / "r.cfg");
    CHECK(*c.features_dir == fs::path("/abs/f"));
    CHECK(c.page_limit == 50);
    CHECK(c.skip_unknown_states);
    CHECK_FALSE(c.production);

    CHECK_THROWS_AS(config_from_json({{"bogus", 1}}, dir.path), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"page_limit", 0}}, dir.path), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"listen", "nohost"}}, dir.path), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"tile_url", "tile.example/{z}"}}, dir.path), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::array(), dir.path), ConfigError);
    CHECK_THROWS_AS(parse_listen("host:99999"), ConfigError);
    CHECK(parse_listen("localhost:8081") == std::pair<std::string, int>{"localhost", 8081});

    const auto file = dir.path / "service.json";
    ingest::write_file_atomic(file.string(), j.dump());
    auto loaded = load_config(file);
    ::setenv("KILNAUDIT_LISTEN", "127.0.0.1:7000", 1);
    ::setenv("KILNAUDIT_WORKSPACE", "/tmp/elsewhere", 1);
    apply_env(loaded);
    ::unsetenv("KILNAUDIT_LISTEN");
    ::unsetenv("KILNAUDIT_WORKSPACE");
    CHECK(loaded.host == "127.0.0.1");
    CHECK(loaded.port == 7000);
    CHECK(loaded.workspace == fs::path("/tmp/elsewhere"));
}

TEST_CASE("concurrent readers during writes see whole datasets")
{
    crash_trials::TempDir ws;
    const auto kilns = fixture_kilns();
    ValidationStore::initialize(ws.path, kilns);
    Running srv(fixture_config(ws.path));

    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 4; ++t) {
        readers.emplace_back([&] {
            auto c = srv.client();
            while (!done) {
                const auto r = c.Get("/api/progress");
                if (!r || r->status != 200) {
                    ++bad;
                    continue;
                }
                const auto p = json::parse(r->body);
                const std::size_t sum = p["pending"].get<std::size_t>() + p["accepted"].get<std::size_t>() +
                                        p["adjusted"].get<std::size_t>() + p["reclassified"].get<std::size_t>() +
                                        p["discarded"].get<std::size_t>();
                if (sum != kilns.size()) ++bad;
            }
        });
    }
    auto c = srv.client();
    std::size_t applied = 0;
    for (std::size_t i = 0; i < kilns.size(); ++i) {
        if (!kilns[i].active()) continue;
        ++applied;
        const auto r = post(c, "/api/kilns/" + kilns[i].id + "/action",
                            {{"action_id", fmt::format("w{}", i)}, {"action", i % 2 ? "accept" : "discard"}});
        REQUIRE(r);
        CHECK(r->status == 200);
    }
    done = true;
    for (auto& t : readers) t.join();
    CHECK(bad == 0);
    CHECK(srv.server.store().log().size() == applied);
}
