#include "follmer/core.hpp"
#include "follmer/harness.hpp"
#include "follmer/parallel.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace follmer;

namespace {

struct Flags {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<double> epsilon;
  std::string out;
  int threads = 0;
  bool no_cache = false;
};

void add_flags(CLI::App* sub, Flags& f, bool out_required = false) {
  sub->add_option("--seed", f.seed, "master seed (overrides the config)");
  sub->add_option("--paths", f.paths, "number of Monte Carlo paths (overrides the config)");
  sub->add_option("--epsilon", f.epsilon, "terminal truncation epsilon (overrides the config)");
  auto* o = sub->add_option("--out", f.out, "output directory");
  if (out_required) o->required();
  sub->add_option("--threads", f.threads, "worker cap; 0 uses every core")->check(CLI::NonNegativeNumber);
  sub->add_flag("--no-cache", f.no_cache, "ignore and do not write the ensemble cache");
}

RunOptions options(const Flags& f) {
  RunOptions o;
  o.seed = f.seed;
  o.paths = f.paths;
  o.epsilon = f.epsilon;
  o.out = f.out;
  o.use_cache = !f.no_cache;
  return o;
}

Json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::InvalidArgument, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return Json::parse(ss.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo laboratory for Shannon-Stam deficits along the Follmer process"};
  app.set_version_flag("--version", kLibraryVersion);
  app.require_subcommand(1);

  Flags f;
  std::string config, which = "X";

  auto* run = app.add_subcommand("run", "run a scenario end to end");
  run->add_option("config", config, "scenario JSON")->required();
  add_flags(run, f);

  auto* ent = app.add_subcommand("entropy", "relative entropy of one measure by all routes");
  ent->add_option("config", config, "scenario JSON")->required();
  ent->add_option("--measure", which, "X or Y")->check(CLI::IsMember({"X", "Y"}));
  add_flags(ent, f);

  auto* curve = app.add_subcommand("curve", "moment curves only");
  curve->add_option("config", config, "scenario JSON")->required();
  add_flags(curve, f);

  auto* chk = app.add_subcommand("checks", "diagnostics ledger only");
  chk->add_option("config", config, "scenario JSON")->required();
  add_flags(chk, f);

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "re-render CSV, table and plot files from <dir>/report.json");
  rep->add_option("dir", report_dir, "output directory of an earlier run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    set_max_threads(f.threads);
    if (rep->parsed()) {
      const Json report = read_json((std::filesystem::path(report_dir) / "report.json").string());
      write_report_files(report, report_dir);
      std::cout << render_summary(report);
      return report.at("summary").at("ok").get<bool>() ? 0 : 1;
    }
    const Scenario s = with_overrides(load_scenario(config), options(f));
    const RunOptions o = options(f);
    if (run->parsed()) {
      const auto r = run_scenario(s, o);
      std::cout << render_summary(r.report);
      return r.exit_code();
    }
    if (ent->parsed()) {
      std::cout << entropy_only(s, o, which).dump(2) << '\n';
      return 0;
    }
    if (curve->parsed()) {
      std::cout << curves_only(s, o).dump(2) << '\n';
      return 0;
    }
    const auto r = checks_only(s, o);
    if (!o.out.empty()) {
      std::filesystem::create_directories(o.out);
      std::ofstream(std::filesystem::path(o.out) / "checks.json", std::ios::binary) << r.report.dump(2) << '\n';
    }
    std::cout << r.report.dump(2) << '\n';
    return r.exit_code();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == Errc::ConfigInvalid || e.code() == Errc::InvalidArgument ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
