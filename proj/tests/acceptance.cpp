// Acceptance run: one PASS/FAIL line per criterion. Arguments select
// criteria by number; no arguments runs all of them.

#include "crash_trials.hpp"
#include "oracles.hpp"
#include "scenes.hpp"

#include "kilnaudit/compliance.hpp"
#include "kilnaudit/eval.hpp"
#include "kilnaudit/geo.hpp"
#include "kilnaudit/impact.hpp"
#include "kilnaudit/ingest.hpp"
#include "kilnaudit/obb.hpp"
#include "kilnaudit/survey.hpp"
#include "kilnaudit/tiling.hpp"

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <numbers>

using namespace kilnaudit;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = KILN_FIXTURE_DIR;

// Collects failed checks; the first few are reported.
struct Outcome {
    std::vector<std::string> failures;
    std::string summary;

    void check(bool ok, const std::string& what)
    {
        if (!ok) failures.push_back(what);
    }
    bool passed() const { return failures.empty(); }
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

// ---- 1 ----------------------------------------------------------------------

void emissions(Outcome& o)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto production = impact::parse_production_csv(ingest::read_file(kFixtures + "/emissions/production.csv"));
    const auto counts = impact::parse_counts_csv(ingest::read_file(kFixtures + "/emissions/counts.csv"));
    const auto table = impact::emission_table(production, counts);
    const double elapsed = seconds_since(t0);

    // Published cells.
    const auto expected = ingest::parse_csv(ingest::read_file(kFixtures + "/emissions/expected.csv"));
    double worst = 0.0;
    std::size_t cells = 0;
    for (const auto& row : expected.rows) {
        const auto& state = row.cells[0];
        const impact::EmissionRow* got = nullptr;
        if (state == "Total") {
            got = &table.total;
        } else {
            for (const auto& r : table.rows)
                if (r.state == state) got = &r;
        }
        o.check(got != nullptr, "missing row " + state);
        if (!got) continue;
        for (int p = 0; p < 4; ++p) {
            const double want = ingest::csv_number(row.cells[2 + p], row.line);
            const double rel = std::abs(got->tonnes_per_day(p) - want) / want;
            worst = std::max(worst, rel);
            ++cells;
            o.check(rel <= 0.01, fmt::format("{} pollutant {}: {:.2f} vs {:.2f}", state, p, got->tonnes_per_day(p), want));
        }
    }
    o.check(cells == 24, fmt::format("{} cells compared, want 24", cells));
    const double up_pm = table.rows.at(0).tonnes_per_day(0);
    o.check(round2(up_pm) == 118.51, fmt::format("UP PM2.5 {:.4f}", up_pm));
    o.check(elapsed < 1.0, fmt::format("runtime {:.3f} s", elapsed));
    o.summary = fmt::format("24 cells, worst relative error {:.4f}%, UP PM2.5 {:.2f} t/day, {:.3f} s", worst * 100,
                            up_pm, elapsed);
}

// ---- 2 ----------------------------------------------------------------------

void precision_recall(Outcome& o)
{
    const auto t0 = std::chrono::steady_clock::now();
    struct Row {
        std::string name;
        eval::Counts counts;
        double p, r;
    };
    const std::vector<Row> rows{{"delhi_airshed", {317, 421, 632}, 0.43, 0.33},
                                {"lucknow_airshed", {221, 206, 275}, 0.52, 0.45},
                                {"west_bengal", {64, 83, 142}, 0.44, 0.31},
                                {"ahmedabad", {18, 47, 131}, 0.28, 0.12}};
    obb::CropGeoref g;
    g.crop_id = "eval";
    std::string detail;
    for (const auto& row : rows) {
        const auto base = kFixtures + "/eval/" + row.name;
        const auto rep = eval::evaluate(ingest::parse_quad_labels(ingest::read_file(base + ".dets.txt"), g),
                                        ingest::parse_quad_labels(ingest::read_file(base + ".truth.txt"), g));
        o.check(rep.total == row.counts, row.name + ": TP/FP/FN differ from the fixture design");
        const double p = rep.total_pr.precision.value_or(-1), r = rep.total_pr.recall.value_or(-1);
        o.check(round2(p) == row.p && round2(r) == row.r,
                fmt::format("{}: P/R {:.2f}/{:.2f}, want {:.2f}/{:.2f}", row.name, p, r, row.p, row.r));
        detail += fmt::format(" {} {:.2f}/{:.2f};", row.name, p, r);
    }
    const double elapsed = seconds_since(t0);
    o.check(elapsed < 1.0, fmt::format("runtime {:.3f} s", elapsed));
    o.summary = fmt::format("P/R{} {:.3f} s", detail, elapsed);
}

// ---- 3 ----------------------------------------------------------------------

void weighted_map(Outcome& o)
{
    const double got = eval::weighted_map({0.73, 0.61, 0.83}, {7, 46, 110});
    // Inverse-count weights written out by hand.
    const double w0 = 1.0 / 7, w1 = 1.0 / 46, w2 = 1.0 / 110;
    const double want = (0.73 * w0 + 0.61 * w1 + 0.83 * w2) / (w0 + w1 + w2);
    o.check(std::abs(got - want) < 1e-12, fmt::format("formula {:.6f} vs {:.6f}", got, want));
    o.check(std::abs(got - 0.72) <= 0.02, fmt::format("weighted mAP {:.4f} outside 0.72 +- 0.02", got));
    o.check(std::abs(got - 0.71) <= 0.02, fmt::format("weighted mAP {:.4f} too far from the published 0.71", got));
    // Equal counts give the plain mean; a single populated class gives its AP.
    const double equal = eval::weighted_map({0.2, 0.5, 0.8}, {10, 10, 10});
    o.check(std::abs(equal - 0.5) < 1e-15, fmt::format("equal counts {:.17g}", equal));
    o.check(eval::weighted_map({0.37, 0.9, 0.1}, {0, 12, 0}) == 0.9, "single class");
    o.summary = fmt::format("weighted mAP {:.4f} (published 0.71); equal-count and single-class cases exact", got);
}

// ---- 4 ----------------------------------------------------------------------

void obb_iou(Outcome& o)
{
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto a = oracle::random_box(rng, 4.0, 1.0, 4.0);
        const auto b = oracle::random_box(rng, 4.0, 1.0, 4.0);
        worst = std::max(worst, std::abs(obb::obb_iou(a, b) - oracle::raster_iou(a, b, 1e-3)));
    }
    o.check(worst <= 5e-3, fmt::format("max |delta| {:.2e}", worst));
    obb::OrientedBox sq{Eigen::Vector2d(0, 0), 1.0, 1.0, 0.0, obb::Frame::Pixel};
    auto rot = sq;
    rot.theta = std::numbers::pi / 4;
    const double r2 = std::numbers::sqrt2;
    const double want = (2 * r2 - 2) / (4 - 2 * r2);
    const double got = obb::obb_iou(sq, rot);
    o.check(std::abs(got - want) <= 1e-3, fmt::format("45 degree case {:.6f} vs {:.6f}", got, want));
    o.summary = fmt::format("1000 pairs, max |IoU - raster| {:.2e}; 45 degree IoU {:.6f} vs {:.6f}", worst, got, want);
}

// ---- 5 ----------------------------------------------------------------------

std::vector<obb::Detection> merge_fixture()
{
    const auto dir = fs::path(kFixtures) / "merge";
    const auto doc = nlohmann::json::parse(ingest::read_file((dir / "crops.json").string()));
    std::vector<obb::Detection> out;
    for (const auto& c : doc.at("crops")) {
        const Eigen::Vector2d origin(c["origin"][0].get<double>(), c["origin"][1].get<double>());
        const auto g = obb::CropGeoref::at_zoom(c.at("id").get<std::string>(), origin, doc.at("zoom").get<int>(),
                                                doc.at("size_px").get<int>());
        for (auto d : ingest::parse_quad_labels(ingest::read_file((dir / c.at("labels").get<std::string>()).string()), g)) {
            d.box = obb::reproject_box(d.box, obb::Frame::Mercator, g);
            out.push_back(d);
        }
    }
    return out;
}

void nms_merge(Outcome& o)
{
    std::mt19937_64 rng(55);
    int sets = 0;
    for (int n = 0; n <= 200; n += 5) {
        for (int rep = 0; rep < 3; ++rep) {
            const auto ds = oracle::random_detections(rng, n, 200.0, 5.0, 40.0);
            for (double thr : {0.1, 0.33, 0.5, 0.7}) {
                for (bool agnostic : {true, false}) {
                    const auto got = obb::nms(ds, {thr, 0.25, agnostic});
                    ++sets;
                    if (oracle::ids(got) != oracle::ids(oracle::reference_nms(ds, thr, 0.25, agnostic))) {
                        o.check(false, fmt::format("n={} thr={} agnostic={}", n, thr, agnostic));
                    }
                    if (oracle::ids(obb::nms(got, {thr, 0.25, agnostic})) != oracle::ids(got)) {
                        o.check(false, fmt::format("NMS not idempotent at n={} thr={}", n, thr));
                    }
                }
            }
        }
    }
    const auto dets = merge_fixture();
    const auto merged = obb::merge_cross_tile(dets);
    o.check(dets.size() == 8 && merged.size() == 4, fmt::format("fixture {} -> {}", dets.size(), merged.size()));
    o.check(oracle::ids(obb::merge_cross_tile(merged)) == oracle::ids(merged), "merge not idempotent");
    o.summary = fmt::format("{} random sets (n <= 200) equal the O(n^2) reference; fixture {} -> {} detections",
                            sets, dets.size(), merged.size());
}

// ---- 6 ----------------------------------------------------------------------

void compliance_oracle(Outcome& o)
{
    std::mt19937_64 rng(606);
    std::size_t kilns = 0, violations = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int nk = 50 + static_cast<int>(rng() % 451);
        const int nf = 100 + static_cast<int>(rng() % 1901);
        const auto scene = scenes::random_scene(rng, nk, nf);
        for (auto mode : {compliance::DistanceMode::Centroid, compliance::DistanceMode::Edge}) {
            compliance::AuditOptions opts;
            opts.mode = mode;
            const auto got = compliance::audit_dataset(scene.kilns, scene.layers, scene.rules, opts);
            const auto want = scenes::brute_force_audit(scene, mode);
            bool same = got.size() == want.size();
            for (std::size_t i = 0; same && i < got.size(); ++i) {
                auto a = got[i].violations, b = want[i].violations;
                auto by_criterion = [](const auto& x, const auto& y) { return x.criterion < y.criterion; };
                std::sort(a.begin(), a.end(), by_criterion);
                std::sort(b.begin(), b.end(), by_criterion);
                same = got[i].kiln_id == want[i].kiln_id && a == b;
                violations += a.size();
            }
            kilns += got.size();
            o.check(same, fmt::format("scene {} ({} kilns, {} features) differs from brute force", trial, nk, nf));
        }
    }
    const int pct = compliance::percentage(13296, 17335);
    o.check(pct == 77, fmt::format("13296/17335 -> {}%", pct));
    o.summary = fmt::format("50 scenes x 2 modes, {} kiln audits, {} violations identical; 13296/17335 -> {}%",
                            kilns, violations, pct);
}

// ---- 7 ----------------------------------------------------------------------

void exposure_oracle(Outcome& o)
{
    std::mt19937_64 rng(707);
    std::uniform_real_distribution<double> rad(0.1, 8.0);
    int evaluations = 0;
    for (int trial = 0; trial < 8; ++trial) {
        const auto g = scenes::random_grid(rng, 30 + trial * 3, 40, 0.01);
        std::vector<geo::GeoPoint> ks;
        for (int i = 0; i < 12; ++i) {
            ks.push_back({g.xllcorner + std::uniform_real_distribution<double>(-0.05, 0.45)(rng),
                          g.yllcorner + std::uniform_real_distribution<double>(-0.05, 0.35)(rng)});
        }
        std::vector<double> radii;
        for (int i = 0; i < 20; ++i) radii.push_back(rad(rng));
        std::sort(radii.begin(), radii.end());
        double prev = 0.0;
        for (double r : radii) {
            const double got = impact::population_within(ks, g, r, 1 + trial % 4);
            const double want = scenes::brute_force_population(ks, g, r);
            ++evaluations;
            o.check(got == want, fmt::format("grid {} radius {:.3f}: {} vs {}", trial, r, got, want));
            o.check(got >= prev, fmt::format("grid {}: not monotone at radius {:.3f}", trial, r));
            prev = got;
        }
    }
    o.summary = fmt::format("{} grid/radius evaluations equal the visited-set scan bit for bit; monotone in radius",
                            evaluations);
}

// ---- 8 ----------------------------------------------------------------------

// Coverage count of every pixel, by brute force.
bool covers_everything(const tiling::CropSpec& spec)
{
    std::vector<unsigned char> cover(static_cast<std::size_t>(spec.image_size) * spec.image_size, 0);
    for (const auto& c : tiling::crop_origins(spec)) {
        if (c.x0 < 0 || c.y0 < 0 || c.x0 + spec.crop_size > spec.image_size || c.y0 + spec.crop_size > spec.image_size)
            return false;
        for (int y = c.y0; y < c.y0 + spec.crop_size; ++y)
            for (int x = c.x0; x < c.x0 + spec.crop_size; ++x) cover[static_cast<std::size_t>(y) * spec.image_size + x] = 1;
    }
    return std::all_of(cover.begin(), cover.end(), [](unsigned char v) { return v == 1; });
}

void tile_geo(Outcome& o)
{
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> lon(-180.0, 180.0), lat(-85.05, 85.05);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const geo::GeoPoint p{lon(rng), lat(rng)};
        const auto q = geo::mercator_to_wgs84(geo::wgs84_to_mercator(p));
        worst = std::max({worst, std::abs(q.lon - p.lon), std::abs(q.lat - p.lat)});
    }
    o.check(worst < 1e-9, fmt::format("round trip error {:.2e} deg", worst));
    const double res = geo::ground_resolution(15, 0.0);
    o.check(std::abs(res - 4.777) <= 0.001, fmt::format("zoom 15 resolution {:.4f}", res));

    const tiling::CropSpec mosaic{4096, 640, 64};
    const auto n = tiling::crop_origins(mosaic).size();
    o.check(n == 49, fmt::format("{} crops", n));
    o.check(covers_everything(mosaic), "4096/640/64 leaves pixels uncovered");
    int specs = 0;
    for (int size = 20; size <= 120; size += 7) {
        for (int crop = 4; crop <= size; crop += 5) {
            for (int overlap = 0; overlap < crop; overlap += 3) {
                ++specs;
                o.check(covers_everything({size, crop, overlap}), fmt::format("{}/{}/{} uncovered", size, crop, overlap));
            }
        }
    }
    o.summary = fmt::format("round trip {:.1e} deg, zoom 15 {:.4f} m/px, {} crops, coverage exhaustive over {} specs",
                            worst, res, n, specs + 1);
}

// ---- 9 ----------------------------------------------------------------------

survey::Comparison published(const std::string& region)
{
    const auto s = survey::parse_count_csv(ingest::read_file(kFixtures + "/survey/" + region + "_survey.csv"));
    const auto ours = survey::parse_count_csv(ingest::read_file(kFixtures + "/survey/" + region + "_ours.csv"));
    return survey::compare(survey::join_counts(ours, s));
}

void survey_stats(Outcome& o)
{
    const auto delhi = published("delhi_ncr");
    const auto wb = published("west_bengal");
    const double rd = delhi.r.value_or(NAN), rw = wb.r.value_or(NAN);
    o.check(delhi.paired == 21, fmt::format("Delhi-NCR has {} paired districts", delhi.paired));
    o.check(std::abs(rd - 0.76) <= 0.01, fmt::format("Delhi-NCR r = {:.4f}, want 0.76 +- 0.01", rd));
    o.check(std::abs(rw - 0.84) <= 0.01, fmt::format("West Bengal r = {:.4f}, want 0.84 +- 0.01", rw));

    const std::vector<double> v{3, 9, 1, 44, 12, 7};
    const auto r = survey::pearson_r(v, v);
    const auto e = survey::error_stats(v, v);
    o.check(r && *r == 1.0, "identical vectors: r != 1");
    o.check(e.mean == 0 && e.median == 0 && e.stddev == 0, "identical vectors: non-zero errors");
    o.summary = fmt::format("Delhi-NCR r = {:.4f} (21 districts), West Bengal r = {:.4f}, identical vectors r = 1", rd,
                            rw);
}

// ---- 10 ---------------------------------------------------------------------

void dating(Outcome& o)
{
    int cases = 0, worst_est = 0, worst_conv = 0;
    const auto classes = {obb::KilnClass::CFCBK, obb::KilnClass::FCBK};
    for (auto initial : classes) {
        // 2023 stands for "never present"; conversions past 2022 for "never".
        for (int est = 2010; est <= 2023; ++est) {
            for (int conv = est + 1; conv <= 2024; ++conv) {
                const std::optional<int> e = est <= 2022 ? std::optional<int>(est) : std::nullopt;
                const std::optional<int> c = conv <= 2022 ? std::optional<int>(conv) : std::nullopt;
                scenes::ScriptedOracle oracle(e, initial, c, obb::KilnClass::Zigzag);
                const auto d = survey::date_kiln(oracle);
                ++cases;
                worst_est = std::max(worst_est, d.establishment_queries);
                worst_conv = std::max(worst_conv, d.conversion_queries);
                bool ok = d.establishment_queries <= 5 && d.conversion_queries <= 5;
                if (!e) {
                    ok = ok && d.kind == survey::Dating::Kind::AbsentThroughout;
                } else {
                    ok = ok && d.established == est && d.converted == c && d.initial_class == initial &&
                         d.kind == (est == 2010 ? survey::Dating::Kind::BeforeRange : survey::Dating::Kind::InRange);
                }
                o.check(ok, fmt::format("established {} converted {}: got {} / {} after {}+{} queries", est, conv,
                                        d.established, d.converted ? *d.converted : 0, d.establishment_queries,
                                        d.conversion_queries));
            }
        }
    }
    o.summary = fmt::format("{} histories exact; worst {} establishment and {} conversion queries", cases, worst_est,
                            worst_conv);
}

// ---- 11 ---------------------------------------------------------------------

void persistence(Outcome& o)
{
    int crashes = 0, retries = 0;
    const int trials = 60;
    for (std::uint64_t seed = 1; seed <= trials; ++seed) {
        const auto r = crash_trials::run_trial(seed * 7919, 80);
        o.check(r.ok, r.message);
        crashes += r.crashes;
        retries += r.retries;
    }
    o.check(crashes > 0 && retries > 0, "no crashes or retries were exercised");
    o.summary = fmt::format("{} trials, {} injected crashes, {} retries; replay matched and no duplicate log lines",
                            trials, crashes, retries);
}

const std::map<int, std::pair<std::string, std::function<void(Outcome&)>>> kCriteria{
    {1, {"emissions reproduction", emissions}},
    {2, {"precision/recall reproduction", precision_recall}},
    {3, {"weighted mAP", weighted_map}},
    {4, {"OBB IoU vs rasterization", obb_iou}},
    {5, {"NMS/merge oracle equivalence", nms_merge}},
    {6, {"compliance oracle equivalence", compliance_oracle}},
    {7, {"exposure oracle", exposure_oracle}},
    {8, {"tile/geo math", tile_geo}},
    {9, {"survey statistics", survey_stats}},
    {10, {"binary-search dating", dating}},
    {11, {"persistence under crashes", persistence}},
};

} // namespace

int main(int argc, char** argv)
{
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        const int n = std::atoi(argv[i]);
        if (!kCriteria.count(n)) {
            fmt::print(stderr, "unknown criterion '{}'\n", argv[i]);
            return 2;
        }
        selected.push_back(n);
    }
    if (selected.empty())
        for (const auto& [n, _] : kCriteria) selected.push_back(n);

    int failed = 0;
    for (int n : selected) {
        const auto& [name, run] = kCriteria.at(n);
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            run(o);
        } catch (const std::exception& e) {
            o.failures.push_back(fmt::format("exception: {}", e.what()));
        }
        const double elapsed = seconds_since(t0);
        fmt::print("criterion {:>2}: {} {} - {} [{:.2f} s]\n", n, o.passed() ? "PASS" : "FAIL", name, o.summary, elapsed);
        for (std::size_t i = 0; i < o.failures.size() && i < 5; ++i) fmt::print("    {}\n", o.failures[i]);
        if (o.failures.size() > 5) fmt::print("    ... {} more\n", o.failures.size() - 5);
        failed += !o.passed();
    }
    return failed == 0 ? 0 : 1;
}
