#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "calibrax/calibration.hpp"
#include "calibrax/io.hpp"
#include "commands.hpp"

using namespace calibrax;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream o, e;
    int code = cli::run(args, o, e);
    return {code, o.str(), e.str()};
}

std::string tmp(const std::string& name, const std::string& content = "") {
    auto p = std::filesystem::temp_directory_path() / ("calibrax_cli_" + name);
    if (!content.empty()) std::ofstream(p) << content;
    return p.string();
}

}  // namespace

TEST_CASE("binary calibration curve from a CSV loss") {
    const std::string loss = tmp("01.csv", "0,1\n1,0\n");
    Run r = run({"calibration", "--loss", loss, "--scores", "identity", "--eps", "0:1:11"});
    REQUIRE(r.code == cli::kExitOk);
    CalibrationCurve c = parse_curve_csv(r.out);
    CHECK(c.meta == CurveKind::exact_qp);
    REQUIRE(c.points.size() == 11);
    for (auto& p : c.points) CHECK(p.value == doctest::Approx(p.epsilon * p.epsilon / 8).epsilon(1e-7).scale(1e-9));
}

TEST_CASE("configuration errors exit with code 2") {
    const std::string loss = tmp("01b.csv", "0,1\n1,0\n");
    const std::string basis = tmp("basis3.csv", "1\n1\n1\n");
    CHECK(run({"calibration", "--loss", loss, "--scores", basis}).code == cli::kExitConfig);
    CHECK(run({"calibration", "--loss", "/nonexistent.csv", "--scores", "identity"}).code == cli::kExitConfig);
    CHECK(run({"calibration", "--loss", loss, "--scores", "identity", "--eps", "1:0:3"}).code == cli::kExitConfig);
    CHECK(run({"calibration", "--scores", "identity"}).code == cli::kExitConfig);
    CHECK(run({"frobnicate"}).code == cli::kExitConfig);
    CHECK(run({"bound", "--loss", loss, "--scores", "identity", "--v-mode", "sideways"}).code == cli::kExitConfig);
    CHECK(run({"calibration", "--loss", "map:3", "--scores", "tree:1"}).code == cli::kExitConfig);
    Run bad = run({"calibration", "--loss", tmp("neg.csv", "0,-1\n1,0\n"), "--scores", "identity"});
    CHECK(bad.code == cli::kExitConfig);
    CHECK(bad.err.find("row 1") != std::string::npos);
}

TEST_CASE("bound modes and tree closed form") {
    const std::string tree = tmp("tree.json", "{\"children\":[2,2],\"weights\":[0.5,0.5]}");
    Run opt = run({"bound", "--loss", tree, "--scores", "tree:1", "--eps", "0:1:21"});
    Run one = run({"bound", "--loss", tree, "--scores", "tree:1", "--eps", "0:1:21", "--v-mode", "fixed_one"});
    Run closed = run({"bound", "--loss", tree, "--scores", "tree:1", "--eps", "0:1:21", "--tree-closed"});
    Run tb = run({"tree-bound", "--tree", tree, "--t", "1", "--eps", "0:1:21"});
    REQUIRE(opt.code == 0);
    REQUIRE(one.code == 0);
    REQUIRE(closed.code == 0);
    REQUIRE(tb.code == 0);
    auto co = parse_curve_csv(opt.out), c1 = parse_curve_csv(one.out), cc = parse_curve_csv(closed.out),
         ct = parse_curve_csv(tb.out);
    CHECK(co.meta == CurveKind::bound_vopt);
    for (size_t t = 0; t < co.points.size(); ++t) {
        CHECK(c1.points[t].value <= co.points[t].value + 1e-12);
        CHECK(cc.points[t].value == doctest::Approx(co.points[t].value).epsilon(1e-9).scale(1e-12));
        CHECK(ct.points[t].value == cc.points[t].value);
    }
    CHECK(co.points.back().value == doctest::Approx(0.0703125).epsilon(1e-9));
    CHECK(run({"bound", "--loss", "map:3", "--scores", "map_sort", "--tree-closed"}).code == cli::kExitConfig);
}

TEST_CASE("consistency report") {
    const std::string tree = tmp("tree2.json", "{\"children\":[2,2],\"weights\":[0.5,0.5]}");
    Run full = run({"consistency", "--loss", tree, "--scores", "tree:2"});
    REQUIRE(full.code == 0);
    auto j = nlohmann::json::parse(full.out);
    CHECK(j["eta_lower"].get<double>() == 0.0);
    CHECK(j["eta_upper"].get<double>() == 0.0);
    Run part = run({"consistency", "--loss", tree, "--scores", "tree:1"});
    REQUIRE(part.code == 0);
    auto k = nlohmann::json::parse(part.out);
    CHECK(k["eta_lower"].get<double>() == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(k["eta_upper"].get<double>() >= 0.5 - 1e-9);
    CHECK(k.contains("witness"));
}

TEST_CASE("sample complexity") {
    const std::string curve = tmp("quad.csv");
    {
        CalibrationCurve c;
        c.meta = CurveKind::exact_qp;
        for (double e : uniform_grid(0.0, 1.0, 101)) c.points.push_back({e, e * e / 8});
        write_text_file(curve, curve_csv(c));
    }
    Run r = run({"sample-complexity", "--curve", curve, "--eps", "0.1", "--dm", "1"});
    REQUIRE(r.code == 0);
    auto j = nlohmann::json::parse(r.out);
    // convex minorant at 0.1 is exactly 0.00125
    CHECK(j["n_star"].get<long long>() == 2560000);
    Run two = run({"sample-complexity", "--curve", curve, "--eps", "0.1", "--dm", "2"});
    CHECK(nlohmann::json::parse(two.out)["n_star"].get<long long>() == 4 * 2560000);
    const std::string flat = tmp("flat.csv");
    {
        CalibrationCurve c;
        c.meta = CurveKind::exact_qp;
        for (double e : uniform_grid(0.0, 1.0, 11)) c.points.push_back({e, e < 0.55 ? 0.0 : e - 0.5});
        write_text_file(flat, curve_csv(c));
    }
    CHECK(run({"sample-complexity", "--curve", flat, "--eps", "0.2", "--dm", "1"}).code == cli::kExitBelowLevel);
    CHECK(run({"sample-complexity", "--curve", curve, "--eps", "0.1"}).code == cli::kExitConfig);
}

TEST_CASE("map analysis") {
    const std::string table = tmp("table.csv"), asym = tmp("asym.csv");
    Run r = run({"map-analysis", "--r", "5", "--r-values", "10,100,10000", "--out", asym, "--table-out", table});
    REQUIRE(r.code == 0);
    const std::string t = read_text_file(table);
    const auto pos = t.find("kappa=");
    REQUIRE(pos != std::string::npos);
    double kappa = 0.0;
    REQUIRE(parse_real(trim(split(t.substr(pos + 6), '\n')[0]), kappa));
    CHECK(kappa == doctest::Approx(3.148).epsilon(1e-3));
    Table a = parse_table_csv(read_text_file(asym));
    REQUIRE(a.rows.size() == 3);
    CHECK(a.rows.back()[0] == 10000.0);
    CHECK(std::isfinite(a.rows.back()[3]));
    CHECK(run({"map-analysis", "--r", "2"}).code == cli::kExitConfig);
}

TEST_CASE("curve files round-trip through the CLI") {
    const std::string out = tmp("rt.csv");
    REQUIRE(run({"calibration", "--loss", "map:3", "--scores", "map_sort", "--eps", "0:1:11", "--out", out}).code == 0);
    Run again = run({"calibration", "--loss", "map:3", "--scores", "map_sort", "--eps", "0:1:11"});
    CHECK(read_text_file(out) == again.out);
    CalibrationCurve c = parse_curve_csv(again.out);
    CHECK(curve_csv(c, "loss=map:3 scores=map_sort pairs=all") == again.out);
}

TEST_CASE("help") {
    Run h = run({"--help"});
    CHECK(h.code == 0);
    CHECK(h.out.find("calibration") != std::string::npos);
    CHECK(run({"calibration", "--help"}).code == 0);
}
