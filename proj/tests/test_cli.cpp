#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "skemb/cli.hpp"
#include "skemb/error.hpp"
#include "skemb/randomize.hpp"

using namespace skemb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("skemb_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

nlohmann::json report(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "report.json")); }

RunConfig config(const std::string& text, const fs::path& out) {
    Overrides ov;
    ov.out = out;
    return parse_config(text, out, ov);
}

const char* kWald = R"({
  "problem": {"x_min": -2, "x_max": 2, "dx": 1, "eps_residual": 1e-6,
              "nu": [[-2, 0.25], [0, 0.5], [2, 0.25]]},
  "reward": {"form": "time"}
})";

const char* kCave = R"({
  "problem": {"x_min": -2, "x_max": 2, "dx": 1, "eps_residual": 1e-6,
              "nu": [[-2, 0.25], [-1, 0.25], [1, 0.25], [2, 0.25]]},
  "reward": {"form": "cave-exp", "t_p": 1.0, "a": 0.5}
})";

std::string parse_error(const std::string& text) {
    try {
        parse_config(text, ".");
    } catch (const InvalidInput& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("gap report on the Wald instance") {
    const fs::path out = scratch("wald");
    std::ostringstream err;
    REQUIRE(run("gap-report", config(kWald, out), err) == 0);
    const nlohmann::json r = report(out);
    CHECK(r["primal"].get<double>() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(r["primal"].get<double>() - r["second_moment"].get<double>()) <= 1e-9);
    CHECK(std::abs(r["dual"].get<double>() - 2.0) <= 1e-9);
    CHECK(std::abs(r["gap"].get<double>()) <= 1e-9);
    CHECK(r["certificate"]["optimal"].get<bool>());
    CHECK(r["verdict"] == "pass");
    // Field order is fixed.
    const std::string text = slurp(out / "report.json");
    CHECK(text.find("\"primal\"") < text.find("\"dual\""));
    CHECK(text.find("\"dual\"") < text.find("\"gap\""));
    CHECK(fs::exists(out / "surface.csv"));
    const nlohmann::json m = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(m["subcommand"] == "gap-report");
    CHECK(m["exit_status"] == 0);
    CHECK(m["config_hash"].get<std::string>().rfind("fnv1a64:", 0) == 0);
    CHECK(m["artifacts"].size() == 2);
}

TEST_CASE("cave writes a barrier and per-level verdicts") {
    const fs::path out = scratch("cave");
    std::ostringstream err;
    REQUIRE(run("cave", config(kCave, out), err) == 0);
    const std::string bar = slurp(out / "barrier.csv");
    CHECK(bar.rfind("level,x,l,r,nu_l,nu_r\r\n", 0) == 0);
    CHECK(std::count(bar.begin(), bar.end(), '\n') == 6);
    const nlohmann::json lv = nlohmann::json::parse(slurp(out / "levels.json"));
    CHECK(lv["levels"].size() == 5);
    for (const auto& e : lv["levels"]) CHECK(e["verdict"] != "fail");
    const nlohmann::json r = report(out);
    CHECK(r["lp_value"].get<double>() == doctest::Approx(r["barrier_value"].get<double>()).epsilon(1e-9));
    CHECK(r["verdict"] == "pass");
}

TEST_CASE("infeasible target exits with status 1") {
    const fs::path out = scratch("infeasible");
    std::ostringstream err;
    const RunConfig cfg = config(R"({"problem": {"x_min": -2, "x_max": 2, "dx": 1, "nu": [[-3, 0.25], [1, 0.75]]}})", out);
    CHECK(run("solve-primal", cfg, err) == 1);
    CHECK(err.str().find("outside [-2, 2]") != std::string::npos);
    CHECK_FALSE(fs::exists(out / "manifest.json"));
}

TEST_CASE("a failed verdict exits with status 2") {
    const fs::path out = scratch("verdict");
    const std::string text = R"({
      "problem": {"x_min": -2, "x_max": 2, "dx": 0.5, "nu": [[-2, 0.1], [-1, 0.2], [0, 0.4], [1, 0.2], [2, 0.1]]},
      "reward": {"form": "cave-bowl", "t_p": 1.0, "a": 1.0},
      "solver": {"mode": "both", "iters": 20, "gap_tol": 1e-9}})";
    std::ostringstream err;
    CHECK(run("solve-dual", config(text, out), err) == 2);
    CHECK(report(out)["verdict"] == "fail");
    CHECK(nlohmann::json::parse(slurp(out / "manifest.json"))["exit_status"] == 2);
    CHECK(run("no-such-command", config(text, out), err) == 1);
}

TEST_CASE("config diagnostics name the line or the field") {
    CHECK(parse_error("{\n  \"problem\": {\n    \"dx\": ,\n  }\n}").find("line 3, column 11") != std::string::npos);
    CHECK(parse_error(R"({"problem": {"dx": "one", "nu": [[0, 1]]}})").find("'problem.dx': expected a number") !=
          std::string::npos);
    CHECK(parse_error(R"({"problme": {}})").find("'problme': unknown field") != std::string::npos);
    CHECK(parse_error(R"({"problem": {"nu": [[0, 1, 2]]}})").find("'problem.nu[0]'") != std::string::npos);
    CHECK(parse_error(R"({"solver": {"mode": "fast"}})").find("'solver.mode': 'fast' is not one of") != std::string::npos);
    CHECK(parse_error(R"({"solver": {"tol": 0}})").find("'solver.tol': must be positive") != std::string::npos);
    CHECK(parse_error(R"({"problem": {"nu_csv": "missing.csv"}})").find("cannot open") != std::string::npos);
    CHECK(parse_error(R"({"tree": {"prefix_depths": [4, 2]}})").find("tree.prefix_depths[1]") != std::string::npos);
    CHECK(parse_error(R"({"simulation": {"confidence": 1.5}})").find("'simulation'") != std::string::npos);
}

TEST_CASE("target from a CSV file") {
    const fs::path dir = scratch("nucsv");
    {
        std::ofstream f(dir / "nu.csv");
        f << "x,p\n-2,0.25\n0,0.5\n2,0.25\n";
    }
    const RunConfig c = parse_config(R"({"problem": {"nu_csv": "nu.csv"}})", dir);
    REQUIRE(c.problem.nu.size() == 3);
    CHECK(c.problem.nu[1].x == 0.0);
    CHECK(c.problem.nu[1].p == 0.5);
    {
        std::ofstream f(dir / "bad.csv");
        f << "x,p\n-2,0.25\n0,half\n";
    }
    CHECK_THROWS_WITH_AS(parse_config(R"({"problem": {"nu_csv": "bad.csv"}})", dir), doctest::Contains("line 3"),
                         InvalidInput);
}

TEST_CASE("overrides and the thread variable") {
    Overrides ov;
    ov.has_seed = true;
    ov.seed = 99;
    ov.has_tol = true;
    ov.tol = 1e-6;
    const RunConfig a = parse_config(kWald, ".", ov);
    CHECK(a.solver.seed == 99);
    CHECK(a.solver.tol == 1e-6);
    const RunConfig b = parse_config(kWald, ".");
    CHECK(a.canonical != b.canonical);
    ov = {};
    ov.out = "/elsewhere";
    CHECK(parse_config(kWald, ".", ov).canonical == b.canonical);

    setenv("SKEMB_THREADS", "3", 1);
    CHECK(threads_from_env() == 3);
    setenv("SKEMB_THREADS", "zero", 1);
    CHECK_THROWS_AS(threads_from_env(), InvalidInput);
    unsetenv("SKEMB_THREADS");
    CHECK(threads_from_env() == 1);
}

TEST_CASE("command line entry point") {
    const fs::path dir = scratch("main");
    {
        std::ofstream f(dir / "wald.json");
        f << kWald;
    }
    const std::string cfg = (dir / "wald.json").string();
    const std::string out = (dir / "out").string();
    {
        const char* argv[] = {"skemb", "solve-primal", "--config", cfg.c_str(), "--out", out.c_str(), "--seed", "5"};
        CHECK(cli_main(8, const_cast<char**>(argv)) == 0);
        CHECK(nlohmann::json::parse(slurp(dir / "out" / "manifest.json"))["seed"] == 5);
        CHECK(report(dir / "out")["value"].get<double>() == doctest::Approx(2.0).epsilon(1e-12));
    }
    {
        const char* argv[] = {"skemb", "solve-primal", "--out", out.c_str()};
        CHECK(cli_main(4, const_cast<char**>(argv)) == 1);
    }
    {
        const char* argv[] = {"skemb", "solve-primal", "--config", cfg.c_str(), "--tol", "-1"};
        CHECK(cli_main(6, const_cast<char**>(argv)) == 1);
    }
    {
        const char* argv[] = {"skemb"};
        CHECK(cli_main(1, const_cast<char**>(argv)) == 1);
    }
}

TEST_CASE("kernel CSV round trip") {
    const WalkTree tree(6);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> stop(tree.size());
    for (double& s : stop) s = U(rng) < 0.4 ? 0.0 : U(rng);
    const TreeKernel xi(tree, stop);
    const std::string text = kernel_csv(xi);
    CHECK(text.rfind("path_id,index,mass\r\n", 0) == 0);
    const TreeKernel back = read_kernel_csv(text, 6);
    for (std::uint32_t id = 0; id < tree.path_count(); ++id) {
        for (int k = 0; k <= 6; ++k) CHECK(back.cdf(id, k) == doctest::Approx(xi.cdf(id, k)).epsilon(1e-12));
    }
    CHECK(kernel_csv(back) == text);

    // Two paths that share their first step disagree on the root.
    CHECK_THROWS_WITH_AS(read_kernel_csv("0,0,1\n1,6,1\n", 1), doctest::Contains("index out of range"), InvalidInput);
    std::string split;
    for (std::uint32_t id = 0; id < 4; ++id) split += std::to_string(id) + "," + (id == 0 ? "0" : "2") + ",1\n";
    CHECK_THROWS_WITH_AS(read_kernel_csv(split, 2), doctest::Contains("depends on the future"), InvalidInput);
    CHECK_THROWS_WITH_AS(read_kernel_csv("0,0,0.5\n1,1,1\n", 1), doctest::Contains("path 0: masses sum"), InvalidInput);
    CHECK_THROWS_WITH_AS(read_kernel_csv("0,0,1\n0,0,1\n", 1), doctest::Contains("duplicate of line 1"), InvalidInput);
}
