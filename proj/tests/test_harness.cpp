#include "doctest.h"

#include "follmer/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace follmer;
namespace fs = std::filesystem;

namespace {

std::string base_config(const std::string& extra = "") {
  return R"({"schema": "follmer-lab/scenario/1", "name": "t",
    "measure_x": {"kind": "gaussian", "cov": 2.0},
    "measure_y": {"kind": "gaussian", "cov": 0.5},
    "grid": {"nodes": 40, "epsilon": 1e-3}, "paths": 400, "checks": false)" +
         extra + "}";
}

std::string config_error(const std::string& text) {
  try {
    parse_scenario(text, "inline");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ConfigInvalid);
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config errors name the offending key") {
    CHECK(config_error(base_config(R"(, "pathz": 3)")).find("'pathz'") != std::string::npos);
    CHECK(config_error(base_config(R"(, "lambdas": [0.5, 1.5])")).find("'lambdas[1]'") != std::string::npos);
    auto g = base_config();
    g.replace(g.find(R"("nodes": 40)"), 11, R"("nodes": "many")");
    CHECK(config_error(g).find("'grid.nodes'") != std::string::npos);
    auto m = base_config();
    m.replace(m.find(R"("cov": 2.0)"), 10, R"("cov": -1)");
    CHECK(config_error(m).find("'measure_x.cov'") != std::string::npos);
    CHECK(config_error(base_config(R"(, "bounds": ["thm9"])")).find("'bounds[0]'") != std::string::npos);
    CHECK(config_error(R"({"schema": "other", "name": "x"})").find("'schema'") != std::string::npos);
    CHECK(config_error("{not json").find("not valid JSON") != std::string::npos);
    const std::string fam = R"({"schema": "follmer-lab/scenario/1", "name": "t",
      "measure_x": {"kind": "product", "factors": [{"family": "cubic", "params": [1]}]},
      "measure_y": {"kind": "gaussian", "cov": 1.0}})";
    CHECK(config_error(fam).find("'measure_x.factors[0].family'") != std::string::npos);
  }

  TEST_CASE("measure declarations") {
    auto s = parse_scenario(R"({"schema": "follmer-lab/scenario/1", "name": "t",
      "measure_x": {"kind": "product", "factors": [{"family": "quartic", "params": [1, 0.05]}], "isotropize": true},
      "measure_y": {"kind": "mixture", "weights": [1, 3], "components": [{"mean": [-1], "cov": 0.5}, {"mean": [1], "cov": 0.5}]}})",
                            "inline");
    CHECK(s.x.covariance()(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(s.x.log_concave());
    CHECK_FALSE(s.y.log_concave());
    CHECK(s.y.dim() == 1);
    CHECK(s.lambdas.size() == 5);
    CHECK(s.bounds == known_bounds());
  }

  TEST_CASE("gaussian pair deficit and byte-identical reports") {
    const auto s = parse_scenario(base_config(R"(, "lambdas": [0.5])"), "inline");
    const fs::path root = fs::temp_directory_path() / "follmer_harness_test";
    fs::remove_all(root);
    RunOptions o;
    o.out = (root / "a").string();
    const auto a = run_scenario(s, o);
    o.out = (root / "b").string();
    o.use_cache = false;
    const auto b = run_scenario(s, o);
    const auto& d = a.report.at("deficits")[0];
    // (ln(1.25) - ln(2)/2) closed form for N(0,2) and N(0,1/2) at lambda = 1/2
    CHECK(d.at("deficit").get<double>() == doctest::Approx(0.11157177565710488).epsilon(1e-10));
    CHECK(slurp(root / "a" / "report.json") == slurp(root / "b" / "report.json"));
    CHECK(slurp(root / "a" / "summary.csv") == slurp(root / "b" / "summary.csv"));
    CHECK(a.ok);
    // Cached rerun.
    o.out = (root / "a").string();
    o.use_cache = true;
    const auto c = run_scenario(s, o);
    CHECK(c.report.dump() == a.report.dump());
    for (const char* f : {"summary.csv", "entropies.csv", "checks.csv", "checks.txt", "curve_X.csv", "curve_Y.csv",
                          "plot_curves.dat", "plot_deficit.dat"})
      CHECK(fs::exists(root / "a" / f));
    fs::remove_all(root);
  }

  TEST_CASE("identical measures have zero deficit and zero bounds") {
    auto s = parse_scenario(R"({"schema": "follmer-lab/scenario/1", "name": "eq",
      "measure_x": {"kind": "gaussian", "cov": 1.0}, "measure_y": {"kind": "gaussian", "cov": 1.0},
      "grid": {"nodes": 40}, "paths": 400, "checks": false})",
                            "inline");
    const auto r = run_scenario(s, {});
    for (const auto& d : r.report.at("deficits")) {
      CHECK(std::abs(d.at("deficit").get<double>()) <= 1e-8);
      for (const auto& b : d.at("bounds"))
        if (b.at("applicable").get<bool>()) CHECK(std::abs(b.at("rhs").get<double>()) <= 1e-8);
    }
    CHECK(r.ok);
  }

  TEST_CASE("module errors carry the scenario name") {
    auto s = parse_scenario(base_config(R"(, "bounds": ["thm4"], "thm4_cp": 1.0)"), "inline");
    s.name = "ctx-test";
    RunOptions o;
    o.paths = 400;
    bool threw = false;
    try {
      auto x = s;
      x.x = Measure::gaussian(Mat::Identity(2, 2));
      run_scenario(x, o);
    } catch (const std::exception& e) {
      threw = true;
      CHECK(std::string(e.what()).find("scenario 'ctx-test'") != std::string::npos);
    }
    CHECK(threw);
  }
}
