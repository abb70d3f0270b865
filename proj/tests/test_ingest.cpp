#include <doctest.h>

#include "kilnaudit/error.hpp"
#include "kilnaudit/features.hpp"
#include "kilnaudit/ingest.hpp"

#include "oracles.hpp"

#include <fmt/core.h>

#include <cmath>
#include <random>

using namespace kilnaudit;
using features::FeatureCategory;

namespace {

std::string collection(const std::vector<std::string>& features)
{
    std::string out = R"({"type":"FeatureCollection","features":[)";
    for (std::size_t i = 0; i < features.size(); ++i) out += (i ? "," : "") + features[i];
    return out + "]}";
}

std::string landuse(const std::string& fclass, double lon)
{
    return R"({"type":"Feature","properties":{"fclass":")" + fclass +
           R"("},"geometry":{"type":"Polygon","coordinates":[[[)" + std::to_string(lon) + ",28],[" +
           std::to_string(lon + 0.01) + ",28],[" + std::to_string(lon + 0.01) + ",28.01],[" + std::to_string(lon) +
           ",28]]]}}";
}

std::string road(const std::string& ref)
{
    return R"({"type":"Feature","properties":{"ref":")" + ref +
           R"("},"geometry":{"type":"LineString","coordinates":[[77,28],[77.1,28.1]]}})";
}

obb::CropGeoref test_georef()
{
    return obb::CropGeoref::at_zoom("c7", geo::wgs84_to_mercator({77.0, 28.6}).vec(), 15);
}

} // namespace

TEST_CASE("OSM attribute filters")
{
    const auto habitation = features::parse_feature_geojson(
        collection({landuse("residential", 77.0), landuse("residential", 77.1), landuse("industrial", 77.2)}),
        FeatureCategory::Habitation);
    CHECK(habitation.features.size() == 2);
    CHECK(habitation.filtered_out == 1);
    CHECK(habitation.issues.empty());

    CHECK(features::parse_feature_geojson(collection({}), FeatureCategory::River).features.empty());

    const auto nh = features::parse_feature_geojson(collection({road("NH48"), road("SH12"), road("NE4")}),
                                                    FeatureCategory::NationalHighway);
    CHECK(nh.features.size() == 2);
    CHECK(nh.features[0].properties["ref"] == "NH48");
    CHECK(nh.features[1].properties["ref"] == "NE4");

    using features::siting_accepts;
    CHECK(siting_accepts(FeatureCategory::StateHighway, {{"ref", "SH12"}}));
    CHECK(siting_accepts(FeatureCategory::DistrictHighway, {{"ref", "MDR 3"}}));
    CHECK_FALSE(siting_accepts(FeatureCategory::DistrictHighway, {{"ref", "SH12"}}));
    CHECK(siting_accepts(FeatureCategory::Religious, {{"type", "mosque"}}));
    CHECK_FALSE(siting_accepts(FeatureCategory::Religious, {{"type", "school"}}));
    CHECK(siting_accepts(FeatureCategory::Hospital, {{"type", "hospital"}}));
    CHECK(siting_accepts(FeatureCategory::Orchard, {{"fclass", "orchard"}}));
    CHECK(siting_accepts(FeatureCategory::NatureReserve, {{"fclass", "nature_reserve"}}));
    CHECK(siting_accepts(FeatureCategory::Wetland, {{"fclass", "wetland"}}));

    // Total over arbitrary property maps; railway takes everything.
    for (const nlohmann::json& p : {nlohmann::json(), nlohmann::json::object(), nlohmann::json({{"fclass", 3}}),
                                    nlohmann::json::array({1, 2}), nlohmann::json({{"ref", nullptr}})}) {
        for (auto c : features::kAllCategories) {
            const bool accepted = siting_accepts(c, p);
            CHECK(accepted == (c == FeatureCategory::Railway || c == FeatureCategory::Kiln));
        }
    }
    CHECK(features::category_from_string("nature_reserve") == FeatureCategory::NatureReserve);
    CHECK_FALSE(features::category_from_string("lake"));
}

TEST_CASE("feature parsing reports problems instead of dropping them")
{
    const std::string bad = R"({"type":"FeatureCollection","features":[{"type":"Feature","properties":{}, )";
    try {
        features::parse_feature_geojson(bad, FeatureCategory::Railway);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.byte_offset() == bad.size());
    }
    CHECK_THROWS_AS(features::parse_feature_geojson(R"({"type":"Feature"})", FeatureCategory::Railway), ParseError);

    const auto layer = features::parse_feature_geojson(
        collection({R"({"type":"Feature","id":"g1","properties":{},"geometry":{"type":"GeometryCollection","geometries":[]}})",
                    R"({"type":"Feature","properties":{"osm_id":17},"geometry":{"type":"Polygon","coordinates":[[[77,28],[77.1,28],[77,28.1]]]}})",
                    R"({"type":"Feature","properties":{},"geometry":null})",
                    R"({"type":"Feature","properties":{"id":"m"},"geometry":{"type":"MultiLineString","coordinates":[[[77,28],[77.1,28]],[[78,28],[78.1,28]]]}})",
                    R"({"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[77.5,91]}})"}),
        FeatureCategory::Railway);
    REQUIRE(layer.issues.size() == 4);
    CHECK(layer.issues[0].id == "g1");
    CHECK(layer.issues[0].message.find("GeometryCollection") != std::string::npos);
    CHECK(layer.issues[1].id == "17");
    CHECK(layer.issues[2].index == 2);
    CHECK(layer.issues[3].index == 4);
    REQUIRE(layer.features.size() == 2);
    CHECK(layer.features[0].id == "m#0");
    CHECK(layer.features[1].id == "m#1");
}

TEST_CASE("feature layers round trip")
{
    const auto layer = features::parse_feature_geojson(
        collection({landuse("residential", 77.0), road("NH1"),
                    R"({"type":"Feature","properties":{"name":"AIIMS"},"geometry":{"type":"Point","coordinates":[77.21,28.57]}})"}),
        FeatureCategory::Railway);
    REQUIRE(layer.features.size() == 3);
    const auto text = features::write_feature_geojson(layer);
    const auto again = features::parse_feature_geojson(text, FeatureCategory::Railway);
    CHECK(features::write_feature_geojson(again) == text);
    CHECK(again.features[2].properties["name"] == "AIIMS");
}

TEST_CASE("quad label lines")
{
    const auto georef = test_georef();
    const auto ds = ingest::parse_quad_labels("2 0.4 0.4 0.6 0.4 0.6 0.6 0.4 0.6\n", georef);
    REQUIRE(ds.size() == 1);
    CHECK(ds[0].cls == obb::KilnClass::Zigzag);
    CHECK(ds[0].confidence == 1.0);
    CHECK(ds[0].box.frame == obb::Frame::Pixel);
    CHECK(ds[0].box.center.x() == doctest::Approx(320.0));
    CHECK(ds[0].box.center.y() == doctest::Approx(320.0));
    CHECK(ds[0].box.w == doctest::Approx(128.0));
    CHECK(ds[0].box.h == doctest::Approx(128.0));
    CHECK(ds[0].id == "c7:1");
    CHECK(ds[0].source_crop == "c7");

    // Square rotated by 45 degrees.
    const double r = 0.1;
    const double c = 0.5;
    const std::string diamond = fmt::format("1 {} {} {} {} {} {} {} {} 0.8", c + r, c, c, c + r, c - r, c, c, c - r);
    const auto rot = ingest::parse_quad_labels(diamond, georef);
    REQUIRE(rot.size() == 1);
    CHECK(std::abs(std::abs(rot[0].box.theta) - geo::kPi / 4) < 1e-9);
    CHECK(rot[0].box.w == doctest::Approx(r * std::sqrt(2.0) * 640));
    CHECK(rot[0].confidence == 0.8);

    const auto skip = ingest::parse_quad_labels("# header\n\n0 0.1 0.1 0.2 0.1 0.2 0.3 0.1 0.3\n", georef);
    REQUIRE(skip.size() == 1);
    CHECK(skip[0].id == "c7:3");
    CHECK(skip[0].box.w == doctest::Approx(128.0));
    CHECK(skip[0].box.h == doctest::Approx(64.0));
}

TEST_CASE("quad label errors carry line numbers")
{
    const auto georef = test_georef();
    auto line_of = [&](const std::string& text) -> std::size_t {
        try {
            ingest::parse_quad_labels(text, georef);
        } catch (const ParseError& e) {
            return e.line();
        }
        return 0;
    };
    CHECK(line_of("0 0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2\n0 0.1 0.1 0.2\n") == 2);
    CHECK(line_of("\n\n0 0.1 0.1 0.2 0.1 0.2 1.2 0.1 0.2\n") == 3);
    CHECK(line_of("3 0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2\n") == 1);
    CHECK(line_of("x 0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2\n") == 1);
    CHECK(line_of("0 0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2 1.5\n") == 1);
    CHECK(line_of("0 0.1 0.1 0.1 0.1 0.1 0.1 0.1 0.1\n") == 1);
    CHECK(line_of("0 0.1 0.1 0.2 0.1 0.2 0.2 0.1 nan\n") == 1);
}

TEST_CASE("quad labels round trip through the writer")
{
    const auto georef = test_georef();
    std::mt19937_64 rng(5);
    std::vector<obb::Detection> ds;
    for (int i = 0; i < 200; ++i) {
        obb::Detection d;
        d.box = obb::canonical(oracle::random_box(rng, 400.0, 5.0, 80.0));
        d.box.center += Eigen::Vector2d(120.0, 120.0);
        d.cls = obb::class_from_index(i % 3).value();
        d.confidence = (i % 20) / 20.0;
        ds.push_back(d);
    }
    const auto text = ingest::write_quad_labels(ds, georef);
    const auto back = ingest::parse_quad_labels(text, georef);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back[i].cls == ds[i].cls);
        CHECK(back[i].confidence == ds[i].confidence);
        CHECK(obb::obb_iou(back[i].box, ds[i].box) > 1.0 - 1e-9);
        CHECK((back[i].box.center - ds[i].box.center).norm() < 1e-6);
        CHECK(std::abs(back[i].box.w - ds[i].box.w) < 1e-6);
        CHECK(std::abs(back[i].box.h - ds[i].box.h) < 1e-6);
    }
}

TEST_CASE("rectangle fit is exact for rotated rectangles")
{
    std::mt19937_64 rng(9);
    for (int i = 0; i < 500; ++i) {
        const auto b = obb::canonical(oracle::random_box(rng, 100.0, 1.0, 30.0));
        auto q = obb::corners(b);
        // Any cyclic start or winding describes the same rectangle.
        if (i % 2) q = q.rowwise().reverse().eval();
        const auto f = ingest::fit_box(q);
        CHECK((f.center - b.center).norm() < 1e-9);
        CHECK(std::abs(f.w - b.w) < 1e-9);
        CHECK(std::abs(f.h - b.h) < 1e-9);
        CHECK(obb::obb_iou(f, b) > 1.0 - 1e-9);
    }
}

TEST_CASE("population grid")
{
    const auto one = ingest::parse_population_grid("ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n42\n");
    CHECK(one.total() == 42.0);
    CHECK(one.nodata == -9999.0);

    const auto g = ingest::parse_population_grid(ingest::read_file(KILN_FIXTURE_DIR "/population_3x3.asc"));
    CHECK(g.nrows() == 3);
    CHECK(g.ncols() == 3);
    CHECK(g.total() == 40.0);
    CHECK(g.is_nodata(g.values(1, 1)));
    // Row 0 is the north row: its centre is yll + 2.5 cells.
    const auto nw = g.cell_center(0, 0);
    CHECK(nw.lon == doctest::Approx(77.00415));
    CHECK(nw.lat == doctest::Approx(28.02075));
    const auto se = g.cell_center(2, 2);
    CHECK(se.lon == doctest::Approx(77.02075));
    CHECK(se.lat == doctest::Approx(28.00415));
    CHECK(g.values(2, 0) == 7.0);

    const auto text = ingest::write_population_grid(g);
    const auto back = ingest::parse_population_grid(text);
    CHECK(back.values == g.values);
    CHECK(ingest::write_population_grid(back) == text);

    const auto centered = ingest::parse_population_grid("ncols 1\nnrows 1\nxllcenter 0.5\nyllcenter 0.5\ncellsize 1\n3\n");
    CHECK(centered.xllcorner == 0.0);
}

TEST_CASE("population grid errors")
{
    auto line_of = [](const std::string& text) -> std::size_t {
        try {
            ingest::parse_population_grid(text);
        } catch (const ParseError& e) {
            return e.line() == 0 ? 999 : e.line();
        }
        return 0;
    };
    const std::string head = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n";
    CHECK(line_of(head + "1 2\n3\n") == 7);
    CHECK(line_of(head + "1 2\n3 4\n5 6\n") == 8);
    CHECK(line_of(head + "1 2\n") != 0);
    CHECK(line_of(head + "1 2\n3 -4\n") == 7);
    CHECK(line_of("ncols 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n") != 0);
    CHECK(line_of("ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 0\n1\n") != 0);
    CHECK(line_of(head + "1 2\n3 x\n") == 7);
}

TEST_CASE("rule table in the published orientation")
{
    const auto rules = ingest::parse_rule_table(ingest::read_file(KILN_FIXTURE_DIR "/siting_rules.cfg"));
    using compliance::Criterion;
    CHECK(rules.states() == std::vector<std::string>{"Uttar Pradesh", "Bihar", "West Bengal", "Haryana", "Punjab"});
    CHECK(rules.threshold("Uttar Pradesh", Criterion::InterKiln) == 800.0);
    CHECK_FALSE(rules.threshold("Haryana", Criterion::River));
    CHECK(rules.threshold("Punjab", Criterion::Habitation) == 500.0);
    CHECK(rules.threshold("West Bengal", Criterion::NatureReserve) == 5000.0);
    CHECK(rules.threshold("Bihar", Criterion::Wetland) == 500.0);
    CHECK(rules.threshold("Uttar Pradesh", Criterion::DistrictHighway) == 100.0);
    CHECK_FALSE(rules.threshold("Punjab", Criterion::Hospital));
    CHECK_FALSE(rules.threshold("Kerala", Criterion::Habitation));
    CHECK(rules.criteria().size() == 13);
    CHECK(rules.max_threshold(Criterion::NatureReserve) == 5000.0);

    // 12 published criteria x 5 states minus 22 dashes.
    int defined = 0;
    for (const auto& s : rules.states()) {
        for (auto c : compliance::kAllCriteria) {
            if (c != Criterion::Hospital && rules.threshold(s, c)) ++defined;
        }
    }
    CHECK(defined == 38);

    const auto text = ingest::write_rule_table(rules);
    CHECK(ingest::parse_rule_table(text) == rules);
    CHECK(ingest::write_rule_table(ingest::parse_rule_table(text)) == text);
}

TEST_CASE("rule table in the state-per-row orientation")
{
    const auto a = ingest::parse_rule_table("state,Inter kiln,Religious places,river\nBihar,1000,-,500\nPunjab,1000,,-\n");
    const auto b = ingest::parse_rule_table("criterion,Bihar,Punjab\ninter_kiln,1000,1000\nreligious,-,-\nriver,500,-\n");
    CHECK(a == b);
}

TEST_CASE("rule table errors")
{
    CHECK_THROWS_AS(ingest::parse_rule_table(""), ConfigError);
    CHECK_THROWS_AS(ingest::parse_rule_table("criterion,UP\nriver,-5\n"), ConfigError);
    CHECK_THROWS_AS(ingest::parse_rule_table("criterion,UP\nriver,0\n"), ConfigError);
    CHECK_THROWS_AS(ingest::parse_rule_table("criterion,UP\nlake,100\n"), ConfigError);
    CHECK_THROWS_AS(ingest::parse_rule_table("state,lake\nUP,100\n"), ConfigError);
    CHECK_THROWS_AS(ingest::parse_rule_table("criterion,UP\nriver,100,200\n"), ConfigError);
    CHECK_THROWS_AS(ingest::parse_rule_table("criterion,UP\nriver,abc\n"), ConfigError);
    CHECK_THROWS_AS(ingest::parse_rule_table("criterion,UP\nriver,100\nriver,200\n"), ConfigError);
    CHECK_THROWS_AS(ingest::parse_rule_table("district,UP\nriver,100\n"), ConfigError);
    try {
        ingest::parse_rule_table("# c\ncriterion,UP\nriver,100\nlake,5\n");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
}

namespace {

std::vector<KilnRecord> three_kilns()
{
    std::vector<KilnRecord> ks;
    const std::vector<geo::GeoPoint> at{{77.2, 28.6}, {80.9, 26.8}, {88.4, 22.6}};
    const std::vector<std::string> states{"Delhi", "Uttar Pradesh", "West Bengal"};
    for (std::size_t i = 0; i < at.size(); ++i) {
        KilnRecord k;
        k.id = "k" + std::to_string(i + 1);
        k.box.center = geo::wgs84_to_mercator(at[i]).vec();
        k.box.w = 160.0 + 13.3 * static_cast<double>(i);
        k.box.h = 90.0 + 0.1 * static_cast<double>(i);
        k.box.theta = -0.3 + 0.41 * static_cast<double>(i);
        k.cls = obb::class_from_index(static_cast<int>(i)).value();
        k.confidence = 0.55 + 0.1 * static_cast<double>(i);
        k.state = states[i];
        k.validation_state = i == 2 ? ValidationState::Adjusted : ValidationState::Pending;
        k.provenance = {"crop-" + std::to_string(i), "run-1", "2024-01-0" + std::to_string(i + 1) + "T00:00:00Z", ""};
        ks.push_back(k);
    }
    return ks;
}

} // namespace

TEST_CASE("kiln dataset round trip")
{
    CHECK(ingest::read_kiln_dataset(ingest::write_kiln_dataset({})).empty());

    const auto ks = three_kilns();
    const auto text = ingest::write_kiln_dataset(ks);
    const auto back = ingest::read_kiln_dataset(text);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < ks.size(); ++i) CHECK(back[i] == ks[i]);
    CHECK(ingest::write_kiln_dataset(back) == text);
}

TEST_CASE("kiln corner polygon agrees with the stored box")
{
    for (const auto& k : three_kilns()) {
        const auto f = ingest::kiln_to_feature(k);
        const auto& ring = f["geometry"]["coordinates"][0];
        REQUIRE(ring.size() == 5);
        Eigen::Matrix<double, 2, 4> q;
        for (int i = 0; i < 4; ++i) {
            q.col(i) = geo::wgs84_to_mercator({ring[i][0].get<double>(), ring[i][1].get<double>()}).vec();
        }
        const double area = std::abs(obb::signed_area(q.colwise() - q.rowwise().mean()));
        CHECK(std::abs(area / (k.box.w * k.box.h) - 1.0) < 1e-3);

        // Without the explicit box fields the box is recovered from the corners.
        auto stripped = f;
        for (const char* key : {"cx_m", "cy_m", "w_m", "h_m", "theta"}) stripped["properties"].erase(key);
        const auto fitted = ingest::kiln_from_feature(stripped);
        CHECK(obb::obb_iou(fitted.box, k.box) > 1.0 - 1e-6);
    }
}

TEST_CASE("kiln dataset schema violations name the feature")
{
    auto message_of = [](const std::string& text) -> std::string {
        try {
            ingest::read_kiln_dataset(text);
        } catch (const ParseError& e) {
            return e.what();
        }
        return "";
    };
    auto ks = three_kilns();
    auto doc = nlohmann::json::parse(ingest::write_kiln_dataset(ks));
    auto bad_class = doc;
    bad_class["features"][1]["properties"]["class"] = "Hoffmann";
    CHECK(message_of(bad_class.dump()).find("feature 1") != std::string::npos);
    auto bad_state = doc;
    bad_state["features"][2]["properties"]["validation_state"] = "maybe";
    CHECK(message_of(bad_state.dump()).find("feature 2") != std::string::npos);
    auto dup = doc;
    dup["features"][2]["properties"]["id"] = "k1";
    CHECK(message_of(dup.dump()).find("duplicate") != std::string::npos);
    auto neg = doc;
    neg["features"][0]["properties"]["w_m"] = -3.0;
    CHECK(message_of(neg.dump()).find("feature 0") != std::string::npos);
    CHECK(message_of("{\"type\":\"FeatureCollection\",\"features\":[}").find("byte") != std::string::npos);
}
