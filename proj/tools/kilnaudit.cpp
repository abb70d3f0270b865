// kilnaudit: batch pipeline stages and the HTTP service.

#include "kilnaudit/compliance.hpp"
#include "kilnaudit/error.hpp"
#include "kilnaudit/eval.hpp"
#include "kilnaudit/features.hpp"
#include "kilnaudit/impact.hpp"
#include "kilnaudit/ingest.hpp"
#include "kilnaudit/pipeline.hpp"
#include "kilnaudit/regions.hpp"
#include "kilnaudit/server.hpp"
#include "kilnaudit/store.hpp"
#include "kilnaudit/survey.hpp"
#include "kilnaudit/tiling.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace kilnaudit;
using nlohmann::json;

namespace {

// Writes to `out`, or stdout when empty.
void emit(const std::string& text, const std::string& out)
{
    if (out.empty()) {
        std::cout << text << std::flush;
        return;
    }
    ingest::write_file_atomic(out, text);
}

std::vector<KilnRecord> read_kilns(const std::string& path) { return ingest::read_kiln_dataset(ingest::read_file(path)); }

regions::RegionIndex read_regions(const std::string& path, const std::string& name_key)
{
    const auto layer = features::parse_feature_geojson(ingest::read_file(path), features::FeatureCategory::Habitation,
                                                       features::accept_all());
    if (!layer.issues.empty()) {
        const auto& i = layer.issues.front();
        throw ValidationError(fmt::format("{}: feature {}: {}", path, i.index, i.message));
    }
    return regions::RegionIndex(regions::from_layer(layer, name_key));
}

void assign_states(std::vector<KilnRecord>& kilns, const std::string& states, const std::string& name_key)
{
    const auto outside = compliance::assign_states(kilns, read_regions(states, name_key));
    if (outside > 0) fmt::print(stderr, "warning: {} kilns lie outside every state polygon\n", outside);
}

compliance::DistanceMode parse_mode(const std::string& s)
{
    if (s == "centroid") return compliance::DistanceMode::Centroid;
    if (s == "edge") return compliance::DistanceMode::Edge;
    throw ConfigError(fmt::format("unknown distance mode '{}'", s));
}

// ---- merge ------------------------------------------------------------------
//
// Crop manifest:
//   {"meters_per_pixel": 1.19, "size_px": 640,       (or "zoom": 17)
//    "crops": [{"id": "c0", "origin": [x, y], "labels": "c0.txt"}, ...]}
// `origin` is the Mercator position of the crop's top-left corner; per-crop
// keys override the top-level defaults. Label paths are relative to the
// manifest.

std::vector<obb::Detection> load_crops(const std::string& manifest_path)
{
    const auto doc = json::parse(ingest::read_file(manifest_path));
    const auto base = fs::absolute(manifest_path).parent_path();
    auto georef_of = [&](const json& crop) {
        auto pick = [&](const char* key) -> const json* {
            if (crop.contains(key)) return &crop.at(key);
            if (doc.contains(key)) return &doc.at(key);
            return nullptr;
        };
        obb::CropGeoref g;
        g.crop_id = crop.at("id").get<std::string>();
        if (const auto* s = pick("size_px")) g.size_px = s->get<int>();
        const auto& o = crop.at("origin");
        g.origin = {o.at(0).get<double>(), o.at(1).get<double>()};
        if (const auto* m = pick("meters_per_pixel")) {
            g.meters_per_pixel = m->get<double>();
        } else if (const auto* z = pick("zoom")) {
            g.meters_per_pixel = obb::CropGeoref::at_zoom(g.crop_id, g.origin, z->get<int>()).meters_per_pixel;
        } else {
            throw ConfigError(fmt::format("crop '{}': needs meters_per_pixel or zoom", g.crop_id));
        }
        return g;
    };
    std::vector<obb::Detection> out;
    std::set<std::string> ids;
    for (const auto& crop : doc.at("crops")) {
        const auto g = georef_of(crop);
        if (!ids.insert(g.crop_id).second) throw ConfigError(fmt::format("duplicate crop id '{}'", g.crop_id));
        const auto labels = (base / crop.at("labels").get<std::string>()).string();
        std::vector<obb::Detection> dets;
        try {
            dets = ingest::parse_quad_labels(ingest::read_file(labels), g);
        } catch (const ParseError& e) {
            throw ParseError(fmt::format("{}: {}", labels, e.what()), e.line());
        }
        for (auto& d : dets) {
            d.box = obb::reproject_box(d.box, obb::Frame::Mercator, g);
            out.push_back(std::move(d));
        }
    }
    return out;
}

std::vector<obb::Detection> read_labels(const std::string& path, const obb::CropGeoref& g)
{
    try {
        return ingest::parse_quad_labels(ingest::read_file(path), g);
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", path, e.what()), e.line());
    }
}

// ---- serve ------------------------------------------------------------------

service::Server* g_server = nullptr;

extern "C" void on_signal(int)
{
    if (g_server) g_server->stop();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Brick kiln inventory, compliance and impact toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "kilnaudit 1.0");

    // ingest
    std::string ws, kilns_path, crops_path, features_dir, population_path, rules_path, production_path, states_path;
    std::string name_key = "name";
    double merge_iou = 0.33;
    auto* ingest_cmd = app.add_subcommand("ingest", "Build a service workspace from raw inputs");
    ingest_cmd->add_option("--workspace", ws, "Workspace directory")->required();
    auto* ingest_kilns = ingest_cmd->add_option("--kilns", kilns_path, "Kiln dataset (GeoJSON)");
    ingest_cmd->add_option("--crops", crops_path, "Crop manifest; detections are merged across crops")
        ->excludes(ingest_kilns);
    ingest_cmd->add_option("--iou", merge_iou, "Cross-crop merge IoU threshold");
    ingest_cmd->add_option("--states", states_path, "State polygons used to set each kiln's state");
    ingest_cmd->add_option("--name-key", name_key, "Region name property");
    ingest_cmd->add_option("--features", features_dir, "Directory of <category>.geojson layers");
    ingest_cmd->add_option("--population", population_path, "Population raster (ESRI ASCII grid)");
    ingest_cmd->add_option("--rules", rules_path, "Siting rule table");
    ingest_cmd->add_option("--production", production_path, "Per-state production table");

    // crop-grid
    tiling::CropSpec spec;
    std::vector<double> origin;
    int zoom = 0;
    std::string out;
    auto* crop_cmd = app.add_subcommand("crop-grid", "List the overlapping crops of a mosaic");
    crop_cmd->add_option("--image-size", spec.image_size, "Mosaic side in pixels");
    crop_cmd->add_option("--crop-size", spec.crop_size, "Crop side in pixels");
    crop_cmd->add_option("--overlap", spec.overlap, "Overlap between neighbouring crops in pixels");
    auto* crop_origin = crop_cmd->add_option("--origin", origin, "Mercator x y of the mosaic's top-left corner")
                            ->expected(2);
    crop_cmd->add_option("--zoom", zoom, "Tile zoom of the mosaic")->needs(crop_origin);
    crop_cmd->add_option("--out", out, "Output file (default stdout)");

    // annotation-grid
    std::string region_path;
    double cell_km = 1.0;
    auto* grid_cmd = app.add_subcommand("annotation-grid", "Square sweep cells covering a region");
    grid_cmd->add_option("--region", region_path, "Region polygons (GeoJSON)")->required();
    grid_cmd->add_option("--cell-km", cell_km, "Cell side in Mercator kilometres");
    auto* grid_out = grid_cmd->add_option("--out", out, "Output GeoJSON (default stdout)");
    grid_cmd->add_option("--workspace", ws, "Install the grid as the workspace's sweep session")->excludes(grid_out);

    // merge
    auto* merge_cmd = app.add_subcommand("merge", "Deduplicate detections across overlapping crops");
    merge_cmd->add_option("--crops", crops_path, "Crop manifest")->required();
    merge_cmd->add_option("--iou", merge_iou, "Suppression IoU threshold");
    merge_cmd->add_option("--out", out, "Output kiln GeoJSON (default stdout)");

    // eval
    std::string dets_path, truth_path;
    double eval_iou = 0.5;
    int crop_size = 640;
    bool as_json = false;
    auto* eval_cmd = app.add_subcommand("eval", "Precision, recall and AP of detections against labels");
    eval_cmd->add_option("--dets", dets_path, "Detection label file")->required();
    eval_cmd->add_option("--truth", truth_path, "Ground truth label file")->required();
    eval_cmd->add_option("--iou", eval_iou, "Match IoU threshold");
    eval_cmd->add_option("--crop-size", crop_size, "Crop side in pixels");
    eval_cmd->add_flag("--json", as_json, "JSON instead of a table");

    // audit
    std::string mode = "centroid", violations_path, audit_format = "json";
    bool skip_unknown = false;
    unsigned threads = 0;
    auto* audit_cmd = app.add_subcommand("audit", "Siting compliance per state");
    audit_cmd->add_option("--rules", rules_path, "Siting rule table")->required();
    audit_cmd->add_option("--kilns", kilns_path, "Kiln dataset (GeoJSON)")->required();
    audit_cmd->add_option("--features", features_dir, "Directory of <category>.geojson layers")->required();
    audit_cmd->add_option("--states", states_path, "State polygons; overrides the kilns' state property");
    audit_cmd->add_option("--name-key", name_key, "Region name property");
    audit_cmd->add_option("--mode", mode, "Distance from the kiln centroid or its footprint edge")
        ->check(CLI::IsMember({"centroid", "edge"}));
    audit_cmd->add_option("--violations", violations_path, "Also write per-kiln violations as CSV");
    audit_cmd->add_flag("--skip-unknown-states", skip_unknown, "Leave out kilns of states without rules");
    audit_cmd->add_option("--format", audit_format, "json or table")->check(CLI::IsMember({"json", "table"}));
    audit_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");
    audit_cmd->add_option("--out", out, "Output file (default stdout)");

    // emissions
    std::string counts_path, format = "json";
    auto* em_cmd = app.add_subcommand("emissions", "Daily emissions per state");
    em_cmd->add_option("--production", production_path, "Per-state production table")->required();
    auto* em_counts = em_cmd->add_option("--counts", counts_path, "Per-state class counts (CSV)");
    auto* em_kilns = em_cmd->add_option("--kilns", kilns_path, "Kiln dataset; counts come from its active kilns");
    em_counts->excludes(em_kilns);
    em_cmd->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    em_cmd->add_option("--out", out, "Output file (default stdout)");

    // exposure
    std::vector<double> radii(impact::kExposureRadiiKm.begin(), impact::kExposureRadiiKm.end());
    auto* ex_cmd = app.add_subcommand("exposure", "Population living near active kilns");
    ex_cmd->add_option("--kilns", kilns_path, "Kiln dataset (GeoJSON)")->required();
    ex_cmd->add_option("--population", population_path, "Population raster (ESRI ASCII grid)")->required();
    ex_cmd->add_option("--radii", radii, "Radii in km")->delimiter(',');
    ex_cmd->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    ex_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");
    ex_cmd->add_option("--out", out, "Output file (default stdout)");

    // survey-compare
    std::string survey_path, ours_path, districts_path;
    auto* sv_cmd = app.add_subcommand("survey-compare", "District counts against a field survey");
    sv_cmd->add_option("--survey", survey_path, "Survey counts, CSV district,count")->required();
    auto* sv_ours = sv_cmd->add_option("--ours", ours_path, "Our counts, CSV district,count");
    auto* sv_kilns = sv_cmd->add_option("--kilns", kilns_path, "Kiln dataset counted per district");
    auto* sv_districts = sv_cmd->add_option("--districts", districts_path, "District polygons (GeoJSON)");
    sv_cmd->add_option("--name-key", name_key, "District name property");
    sv_ours->excludes(sv_kilns)->excludes(sv_districts);
    sv_kilns->needs(sv_districts);
    sv_districts->needs(sv_kilns);
    sv_cmd->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sv_cmd->add_option("--out", out, "Output file (default stdout)");

    // date-kilns
    std::string observations_path;
    survey::YearRange years;
    auto* date_cmd = app.add_subcommand("date-kilns", "Establishment and conversion years by binary search");
    date_cmd->add_option("--observations", observations_path, "CSV kiln_id,year,class")->required();
    date_cmd->add_option("--first-year", years.first, "First year of imagery");
    date_cmd->add_option("--last-year", years.last, "Last year of imagery");
    date_cmd->add_option("--out", out, "Output file (default stdout)");

    // serve
    std::string config_path, listen;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP API, validation workflow and tile proxy");
    serve_cmd->add_option("--config", config_path, "Service config (JSON)")->required();
    serve_cmd->add_option("--listen", listen, "host:port, overrides config and environment");
    serve_cmd->add_option("--workspace", ws, "Workspace, overrides config and environment");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest_cmd) {
            if (kilns_path.empty() && crops_path.empty()) throw ConfigError("ingest needs --kilns or --crops");
            fs::create_directories(ws);
            std::vector<KilnRecord> kilns;
            if (!kilns_path.empty()) {
                kilns = read_kilns(kilns_path);
            } else {
                for (const auto& d : obb::merge_cross_tile(load_crops(crops_path), merge_iou))
                    kilns.push_back(kiln_from_detection(d));
            }
            if (!states_path.empty()) assign_states(kilns, states_path, name_key);
            json config{{"workspace", "."}};
            if (!features_dir.empty()) {
                const auto dst = fs::path(ws) / "features";
                fs::create_directories(dst);
                for (const auto& layer : pipeline::load_feature_layers(features_dir)) {
                    const auto name = fmt::format("{}.geojson", features::to_string(layer.category));
                    ingest::write_file_atomic((dst / name).string(), features::write_feature_geojson(layer));
                    fmt::print(stderr, "{}: {} features, {} filtered out, {} unusable\n", name,
                               layer.features.size(), layer.filtered_out, layer.issues.size());
                }
                config["features_dir"] = "features";
            }
            if (!rules_path.empty()) {
                const auto rules = ingest::parse_rule_table(ingest::read_file(rules_path));
                ingest::write_file_atomic((fs::path(ws) / "rules.cfg").string(), ingest::write_rule_table(rules));
                config["rules"] = "rules.cfg";
            }
            if (!production_path.empty()) {
                const auto text = ingest::read_file(production_path);
                impact::parse_production_csv(text);
                ingest::write_file_atomic((fs::path(ws) / "production.csv").string(), text);
                config["production"] = "production.csv";
            }
            if (!population_path.empty()) {
                const auto grid = ingest::parse_population_grid(ingest::read_file(population_path));
                ingest::write_file_atomic((fs::path(ws) / "population.asc").string(),
                                          ingest::write_population_grid(grid));
                config["population"] = "population.asc";
            }
            service::ValidationStore::initialize(ws, kilns);
            ingest::write_file_atomic((fs::path(ws) / "service.json").string(), pipeline::pretty(config));
            fmt::print(stderr, "{}: {} kilns\n", ws, kilns.size());
        } else if (*crop_cmd) {
            const auto origins = tiling::crop_origins(spec);
            json doc{{"image_size", spec.image_size}, {"size_px", spec.crop_size}, {"overlap", spec.overlap}};
            std::optional<obb::CropGeoref> mosaic;
            if (!origin.empty()) {
                if (zoom <= 0) throw ConfigError("--origin needs --zoom");
                mosaic = obb::CropGeoref::at_zoom("mosaic", {origin[0], origin[1]}, zoom, spec.image_size);
                doc["zoom"] = zoom;
                doc["meters_per_pixel"] = mosaic->meters_per_pixel;
            }
            doc["crops"] = json::array();
            for (const auto& o : origins) {
                json c{{"id", fmt::format("y{}_x{}", o.y0, o.x0)}, {"x0", o.x0}, {"y0", o.y0}};
                if (mosaic) {
                    const auto m = mosaic->pixel_to_mercator({o.x0, o.y0});
                    c["origin"] = {m.x(), m.y()};
                }
                doc["crops"].push_back(c);
            }
            emit(pipeline::pretty(doc), out);
        } else if (*grid_cmd) {
            const auto layer = features::parse_feature_geojson(
                ingest::read_file(region_path), features::FeatureCategory::Habitation, features::accept_all());
            if (layer.features.empty()) throw ValidationError(fmt::format("{}: no usable region geometry", region_path));
            std::map<std::pair<int, int>, tiling::GridCell> cells;
            for (const auto& f : layer.features)
                for (auto& c : tiling::annotation_grid(f.geometry, cell_km)) cells.emplace(std::pair{c.row, c.col}, c);
            std::vector<tiling::GridCell> list;
            for (auto& [_, c] : cells) list.push_back(std::move(c));
            if (!ws.empty()) {
                service::WorkSession session(fs::path(ws) / "grid.geojson");
                session.reset(list);
                fmt::print(stderr, "{}: {} cells\n", ws, list.size());
            } else {
                emit(pipeline::pretty(tiling::grid_to_geojson(list)), out);
            }
        } else if (*merge_cmd) {
            const auto dets = load_crops(crops_path);
            const auto kept = obb::merge_cross_tile(dets, merge_iou);
            std::vector<KilnRecord> kilns;
            for (const auto& d : kept) kilns.push_back(kiln_from_detection(d));
            fmt::print(stderr, "{} detections, {} after merge\n", dets.size(), kilns.size());
            emit(ingest::write_kiln_dataset(kilns), out);
        } else if (*eval_cmd) {
            obb::CropGeoref g;
            g.crop_id = "eval";
            g.size_px = crop_size;
            const auto report = eval::evaluate(read_labels(dets_path, g), read_labels(truth_path, g), eval_iou);
            std::cout << (as_json ? pipeline::pretty(report.to_json()) : report.to_table()) << std::flush;
        } else if (*audit_cmd) {
            auto kilns = read_kilns(kilns_path);
            if (!states_path.empty()) assign_states(kilns, states_path, name_key);
            const auto rules = ingest::parse_rule_table(ingest::read_file(rules_path));
            const auto layers = pipeline::load_feature_layers(features_dir);
            compliance::AuditOptions o;
            o.mode = parse_mode(mode);
            o.threads = threads;
            o.skip_unknown_states = skip_unknown;
            const auto audits = compliance::audit_dataset(kilns, layers, rules, o);
            const auto summary = compliance::aggregate(audits, rules);
            if (!violations_path.empty()) ingest::write_file_atomic(violations_path, compliance::violations_csv(audits));
            emit(audit_format == "json" ? pipeline::pretty(summary.to_json()) : summary.to_table(), out);
        } else if (*em_cmd) {
            if (counts_path.empty() && kilns_path.empty()) throw ConfigError("emissions needs --counts or --kilns");
            const auto production = impact::parse_production_csv(ingest::read_file(production_path));
            const auto table = counts_path.empty()
                                   ? pipeline::emissions_from_kilns(production, read_kilns(kilns_path))
                                   : impact::emission_table(production,
                                                            impact::parse_counts_csv(ingest::read_file(counts_path)));
            emit(format == "json" ? pipeline::pretty(table.to_json()) : table.to_csv(), out);
        } else if (*ex_cmd) {
            const auto grid = ingest::parse_population_grid(ingest::read_file(population_path));
            const auto table = impact::exposure_table(read_kilns(kilns_path), grid, radii, threads);
            emit(format == "json" ? pipeline::pretty(table.to_json()) : table.to_csv(), out);
        } else if (*sv_cmd) {
            const auto survey_counts = survey::parse_count_csv(ingest::read_file(survey_path));
            survey::DistrictCounts joined;
            if (!ours_path.empty()) {
                joined = survey::join_counts(survey::parse_count_csv(ingest::read_file(ours_path)), survey_counts);
            } else if (!kilns_path.empty()) {
                joined = survey::district_join(read_kilns(kilns_path), read_regions(districts_path, name_key),
                                               survey_counts);
            } else {
                throw ConfigError("survey-compare needs --ours or --kilns with --districts");
            }
            const auto c = survey::compare(std::move(joined));
            emit(format == "json" ? pipeline::pretty(c.to_json()) : c.to_csv(), out);
        } else if (*date_cmd) {
            if (years.first > years.last) throw ConfigError("--first-year is after --last-year");
            json rows = json::array();
            for (const auto& [id, table] : survey::parse_observation_csv(ingest::read_file(observations_path))) {
                survey::TableOracle oracle(table);
                json r{{"kiln_id", id}};
                try {
                    const auto d = survey::date_kiln(oracle, years);
                    r["kind"] = survey::to_string(d.kind);
                    r["established"] = d.kind == survey::Dating::Kind::AbsentThroughout ? json() : json(d.established);
                    r["converted"] = d.converted ? json(*d.converted) : json();
                    if (d.kind != survey::Dating::Kind::AbsentThroughout) {
                        r["initial_class"] = obb::to_string(d.initial_class);
                        r["final_class"] = obb::to_string(d.final_class);
                    }
                    r["establishment_queries"] = d.establishment_queries;
                    r["conversion_queries"] = d.conversion_queries;
                } catch (const Error& e) {
                    throw ValidationError(fmt::format("kiln '{}': {}", id, e.what()));
                }
                rows.push_back(r);
            }
            emit(pipeline::pretty(rows), out);
        } else if (*serve_cmd) {
            auto config = service::load_config(config_path);
            service::apply_env(config);
            if (!listen.empty()) std::tie(config.host, config.port) = service::parse_listen(listen);
            if (!ws.empty()) config.workspace = ws;
            service::Server server(config);
            const int port = server.bind();
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            fmt::print(stderr, "listening on {}:{}\n", config.host, port);
            std::fflush(stderr);
            server.run();
            g_server = nullptr;
        }
    } catch (const ParseError& e) {
        if (e.byte_offset() > 0) {
            fmt::print(stderr, "kilnaudit: parse error at byte {}: {}\n", e.byte_offset(), e.what());
        } else {
            fmt::print(stderr, "kilnaudit: parse error: {}\n", e.what());
        }
        return 2;
    } catch (const json::exception& e) {
        fmt::print(stderr, "kilnaudit: bad JSON: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "kilnaudit: {}\n", e.what());
        return 1;
    }
    return 0;
}
