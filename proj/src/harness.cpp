#include "follmer/harness.hpp"

#include "follmer/bounds.hpp"
#include "follmer/linalg.hpp"
#include "follmer/util.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace follmer {
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  fail(Errc::ConfigInvalid, "key '" + key + "': " + what);
}

void only_keys(const Json& obj, const std::string& where, const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) bad(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
}

const Json& need(const Json& obj, const std::string& where, const std::string& key) {
  if (!obj.contains(key)) bad(where.empty() ? key : where + "." + key, "missing");
  return obj.at(key);
}

double num(const Json& j, const std::string& key) {
  if (!j.is_number()) bad(key, "must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad(key, "must be finite");
  return v;
}

double positive(const Json& j, const std::string& key) {
  const double v = num(j, key);
  if (!(v > 0)) bad(key, "must be positive");
  return v;
}

std::vector<double> num_list(const Json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) bad(key, "must be a nonempty array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(num(j[i], key + "[" + std::to_string(i) + "]"));
  return out;
}

Vec vec_of(const Json& j, const std::string& key, int dim) {
  auto v = num_list(j, key);
  if (static_cast<int>(v.size()) != dim) bad(key, "expected length " + std::to_string(dim));
  Vec out(dim);
  for (int i = 0; i < dim; ++i) out(i) = v[i];
  return out;
}

// A bare number is a 1x1 matrix.
Mat mat_of(const Json& j, const std::string& key) {
  if (j.is_number()) return Mat::Constant(1, 1, num(j, key));
  if (!j.is_array() || j.empty() || j.size() > static_cast<std::size_t>(kMaxDim))
    bad(key, "must be a square matrix (array of rows) of size 1 to " + std::to_string(kMaxDim));
  const int n = static_cast<int>(j.size());
  Mat m(n, n);
  for (int r = 0; r < n; ++r) {
    const std::string rk = key + "[" + std::to_string(r) + "]";
    auto row = num_list(j[r], rk);
    if (static_cast<int>(row.size()) != n) bad(rk, "row length differs from the number of rows");
    for (int c = 0; c < n; ++c) m(r, c) = row[c];
  }
  return m;
}

Mat spd_of(const Json& j, const std::string& key) {
  Mat m = mat_of(j, key);
  if (!linalg::is_spd(m)) bad(key, "must be symmetric positive definite");
  return m;
}

Json mat_json(const Mat& m) {
  Json a = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(row);
  }
  return a;
}

Json est_json(const EntropyEstimate& e) {
  return Json{{"route", std::string(entropy_route_name(e.route))},
              {"value", e.value},
              {"stderr", e.stderr_},
              {"tail_bound", e.tail_bound},
              {"residual", e.residual},
              {"tail_certified", e.tail_certified},
              {"budget", e.budget()}};
}

bool certified(const BoundResult& b, double deficit, double budget) {
  return b.applicable && !b.display_only && b.rhs - 2.0 * b.stderr_ - b.residual <= deficit + budget;
}

Json bound_json(const BoundResult& b, double deficit, double budget) {
  Json inputs = Json::object();
  for (const auto& [k, v] : b.inputs) inputs[k] = v;
  return Json{{"name", b.name},
              {"applicable", b.applicable},
              {"display_only", b.display_only},
              {"certified", certified(b, deficit, budget)},
              {"rhs", b.applicable ? Json(b.rhs) : Json(nullptr)},
              {"stderr", b.stderr_},
              {"residual", b.residual},
              {"margin", b.applicable ? Json(b.margin) : Json(nullptr)},
              {"reason", b.reason},
              {"inputs", inputs}};
}

Json check_json(const CheckResult& r, const std::string& subject) {
  return Json{{"subject", subject},
              {"name", r.name},
              {"applicable", r.applicable},
              {"advisory", r.advisory},
              {"passed", r.passed},
              {"statistic", r.statistic},
              {"threshold", r.threshold},
              {"t", r.at_t},
              {"detail", r.detail},
              {"context", {{"fingerprint", r.context.fingerprint}, {"grid", r.context.grid}, {"seeds", r.context.seeds}}}};
}

CheckResult check_from_json(const Json& j) {
  CheckResult r;
  r.name = j.at("name").get<std::string>();
  r.applicable = j.at("applicable").get<bool>();
  r.advisory = j.at("advisory").get<bool>();
  r.passed = j.at("passed").get<bool>();
  r.statistic = j.at("statistic").get<double>();
  r.threshold = j.at("threshold").get<double>();
  r.at_t = j.at("t").get<double>();
  r.detail = j.at("detail").get<std::string>();
  return r;
}

std::string csv_num(const Json& j) { return j.is_number() ? fmt17(j.get<double>()) : "nan"; }
std::string csv_bool(const Json& j) { return j.get<bool>() ? "1" : "0"; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) fail(Errc::InvalidArgument, "cannot write " + p.string());
  f << text;
}

PathEnsemble ensemble(const Measure& m, const TimeGrid& g, std::size_t n, std::uint64_t seed, const std::string& cache) {
  if (cache.empty()) return simulate_bridge(m, g, n, seed);
  PathEnsemble probe;
  probe.fingerprint = m.fingerprint();
  probe.grid = g;
  probe.n_paths = n;
  probe.seed = seed;
  probe.method = SimMethod::Bridge;
  const std::string key = probe.cache_key();
  const fs::path file = fs::path(cache) / (key + ".ens");
  PathEnsemble out;
  if (load_ensemble(file.string(), key, out)) return out;
  out = simulate_bridge(m, g, n, seed);
  fs::create_directories(cache);
  save_ensemble(out, file.string());
  return out;
}

std::string cache_dir_of(const RunOptions& o) {
  if (!o.use_cache) return {};
  if (!o.cache_dir.empty()) return o.cache_dir;
  if (!o.out.empty()) return (fs::path(o.out) / "cache").string();
  return {};
}

bool is_standard_gaussian(const Measure& m) {
  return m.kind() == MeasureKind::Gaussian &&
         (m.covariance() - Mat::Identity(m.dim(), m.dim())).cwiseAbs().maxCoeff() <= 1e-12;
}

bool isotropic(const Measure& m) {
  return (m.covariance() - Mat::Identity(m.dim(), m.dim())).cwiseAbs().maxCoeff() <= 1e-6;
}

bool whitened(const Measure& x, const Measure& y) {
  return (x.covariance() + y.covariance() - 2.0 * Mat::Identity(x.dim(), x.dim())).cwiseAbs().maxCoeff() <= 1e-6;
}

BoundResult na(const std::string& name, const std::string& reason) {
  BoundResult r;
  r.name = name;
  r.reason = reason;
  return r;
}

Json measure_json(const Measure& m, const Json& decl, const PathEnsemble& e) {
  Json j{{"label", m.label()},
         {"kind", m.kind() == MeasureKind::Gaussian ? "gaussian" : m.kind() == MeasureKind::Mixture ? "mixture" : "potential"},
         {"dim", m.dim()},
         {"fingerprint", m.fingerprint()},
         {"declaration", decl},
         {"covariance", mat_json(m.covariance())},
         {"log_concave", m.log_concave()}};
  j["xi"] = m.xi() ? Json(*m.xi()) : Json(nullptr);
  try {
    const auto p = poincare_bound(m);
    j["poincare"] = {{"value", p.value}, {"flag", std::string(poincare_flag_name(p.flag))}};
  } catch (const Error&) {
    j["poincare"] = nullptr;
  }
  j["ensemble"] = {{"seed", e.seed}, {"paths", e.n_paths}, {"cache_key", e.cache_key()}};
  return j;
}

void write_plot_curves(const MomentCurve& cx, const MomentCurve& cy, const fs::path& p) {
  std::ostringstream os;
  os << "# t trEGammaX/d trEGammaY/d EvX2 EvY2 trVarGammaX trVarGammaY se_EvX2 se_EvY2\n";
  for (std::size_t k = 0; k < cx.grid.size(); ++k) {
    os << fmt17(cx.grid[k]) << ' ' << fmt17(cx.e_gamma[k].trace() / cx.dim) << ' '
       << fmt17(cy.e_gamma[k].trace() / cy.dim) << ' ' << fmt17(cx.e_v2[k]) << ' ' << fmt17(cy.e_v2[k]) << ' '
       << fmt17(cx.tr_var[k]) << ' ' << fmt17(cy.tr_var[k]) << ' ' << fmt17(cx.se_v2[k]) << ' ' << fmt17(cy.se_v2[k])
       << '\n';
  }
  write_text(p, os.str());
}

template <typename F>
auto with_context(const std::string& scenario, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    std::string msg = e.what();
    const auto pos = msg.find(": ");
    if (pos != std::string::npos) msg = msg.substr(pos + 2);
    throw Error(e.code(), "scenario '" + scenario + "': " + msg);
  }
}

struct Prepared {
  Measure x, y;
  Mat map;
  bool whitened_input = false;
  TimeGrid grid;
  PathEnsemble ex, ey;
  MomentCurve cx, cy;
};

Prepared prepare(const Scenario& s, const RunOptions& o) {
  Prepared p{s.x, s.y, Mat::Identity(s.x.dim(), s.x.dim()), false, s.grid.make(), {}, {}, {}, {}};
  if (s.whiten) {
    auto w = joint_whiten(s.x, s.y);
    p.x = w.x.with_label(s.x.label());
    p.y = w.y.with_label(s.y.label());
    p.map = w.map;
    p.whitened_input = true;
  }
  const std::string cache = cache_dir_of(o);
  p.ex = ensemble(p.x, p.grid, s.paths, splitmix64(s.seed, 1), cache);
  p.ey = ensemble(p.y, p.grid, s.paths, splitmix64(s.seed, 2), cache);
  p.cx = moment_curve(p.ex);
  p.cy = moment_curve(p.ey);
  return p;
}

}  // namespace

TimeGrid GridSpec::make() const {
  if (scheme == "uniform") return TimeGrid::uniform(nodes, epsilon);
  if (rho) return TimeGrid::geometric_ratio(*rho, epsilon);
  return TimeGrid::geometric(nodes, epsilon);
}

const std::vector<std::string>& known_bounds() {
  static const std::vector<std::string> names = {"lemma-jump", "jump-ct", "thm1", "cor2", "thm3",
                                                 "thm4", "thm5", "wasserstein-thm", "entropy-jump-display"};
  return names;
}

Measure parse_measure(const Json& decl, const std::string& where) {
  if (!decl.is_object()) bad(where, "must be an object");
  const std::string kind = need(decl, where, "kind").is_string() ? decl.at("kind").get<std::string>() : "";
  const std::set<std::string> common = {"kind", "label", "xi", "poincare", "isotropize", "scale"};
  auto allowed = [&](std::initializer_list<const char*> extra) {
    auto s = common;
    for (auto e : extra) s.insert(e);
    only_keys(decl, where, s);
  };
  const std::string k = where + ".";
  std::optional<Measure> m;
  try {
    if (kind == "gaussian") {
      allowed({"cov"});
      m = Measure::gaussian(spd_of(need(decl, where, "cov"), k + "cov"));
    } else if (kind == "mixture") {
      allowed({"weights", "components"});
      auto w = num_list(need(decl, where, "weights"), k + "weights");
      const Json& cs = need(decl, where, "components");
      if (!cs.is_array() || cs.size() != w.size()) bad(k + "components", "must be an array matching weights");
      std::vector<GaussianComponent> comps;
      for (std::size_t i = 0; i < cs.size(); ++i) {
        const std::string ck = k + "components[" + std::to_string(i) + "]";
        if (!cs[i].is_object()) bad(ck, "must be an object");
        only_keys(cs[i], ck, {"mean", "cov"});
        Mat c = spd_of(need(cs[i], ck, "cov"), ck + ".cov");
        comps.push_back({vec_of(need(cs[i], ck, "mean"), ck + ".mean", static_cast<int>(c.rows())), c});
      }
      for (std::size_t i = 0; i < w.size(); ++i)
        if (!(w[i] > 0)) bad(k + "weights[" + std::to_string(i) + "]", "must be positive");
      double total = 0;
      for (double wi : w) total += wi;
      for (double& wi : w) wi /= total;
      m = Measure::mixture(w, comps);
    } else if (kind == "product") {
      allowed({"factors", "map"});
      const Json& fs = need(decl, where, "factors");
      if (!fs.is_array() || fs.empty() || fs.size() > static_cast<std::size_t>(kMaxDim))
        bad(k + "factors", "must be an array of 1 to " + std::to_string(kMaxDim) + " factors");
      std::vector<std::shared_ptr<const Family1D>> factors;
      for (std::size_t i = 0; i < fs.size(); ++i) {
        const std::string fk = k + "factors[" + std::to_string(i) + "]";
        if (!fs[i].is_object()) bad(fk, "must be an object");
        only_keys(fs[i], fk, {"family", "params"});
        const Json& fam = need(fs[i], fk, "family");
        if (!fam.is_string()) bad(fk + ".family", "must be a string");
        const std::string name = fam.get<std::string>();
        if (name != "quartic" && name != "logistic") bad(fk + ".family", "unknown family '" + name + "'");
        auto params = num_list(need(fs[i], fk, "params"), fk + ".params");
        try {
          factors.push_back(Family1D::make(name, params));
        } catch (const Error& e) {
          bad(fk + ".params", e.what());
        }
      }
      const int d = static_cast<int>(factors.size());
      Mat map = Mat::Identity(d, d);
      if (decl.contains("map")) {
        map = mat_of(decl.at("map"), k + "map");
        if (map.rows() != d) bad(k + "map", "size must equal the number of factors");
      }
      m = Measure::product(factors, map);
    } else if (kind == "radial_quartic") {
      allowed({"dim", "a", "b"});
      const Json& dj = need(decl, where, "dim");
      if (!dj.is_number_integer() || dj.get<int>() < 2 || dj.get<int>() > 3) bad(k + "dim", "must be 2 or 3");
      const double a = num(need(decl, where, "a"), k + "a"), b = num(need(decl, where, "b"), k + "b");
      if (a < 0 || b < 0 || a + b <= 0) bad(k + "a", "need a, b >= 0, not both zero");
      m = Measure::radial_quartic(dj.get<int>(), a, b);
    } else {
      bad(k + "kind", "must be one of gaussian, mixture, product, radial_quartic");
    }
    if (decl.contains("scale")) {
      const double c = positive(decl.at("scale"), k + "scale");
      m = m->transformed(Mat(c * Mat::Identity(m->dim(), m->dim())));
    }
    if (decl.contains("isotropize")) {
      if (!decl.at("isotropize").is_boolean()) bad(k + "isotropize", "must be a boolean");
      if (decl.at("isotropize").get<bool>()) m = m->transformed(linalg::inv_sqrtm_spd(m->covariance()));
    }
    if (decl.contains("xi")) m = m->with_xi(positive(decl.at("xi"), k + "xi"));
    if (decl.contains("poincare")) m = m->with_poincare(positive(decl.at("poincare"), k + "poincare"));
    if (decl.contains("label")) {
      if (!decl.at("label").is_string()) bad(k + "label", "must be a string");
      m = m->with_label(decl.at("label").get<std::string>());
    }
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigInvalid) throw;
    bad(where, e.what());
  }
  return *m;
}

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::ConfigInvalid, origin + ": not valid JSON: " + e.what());
  }
  if (!j.is_object()) fail(Errc::ConfigInvalid, origin + ": top level must be an object");
  only_keys(j, "", {"schema", "name", "description", "measure_x", "measure_y", "lambdas", "grid", "paths", "seed",
                    "whiten", "bounds", "checks", "thm4_cp"});
  const Json& schema = need(j, "", "schema");
  if (!schema.is_string() || schema.get<std::string>() != kScenarioSchema)
    bad("schema", std::string("must be \"") + kScenarioSchema + "\"");
  Scenario s;
  const Json& name = need(j, "", "name");
  if (!name.is_string() || name.get<std::string>().empty()) bad("name", "must be a nonempty string");
  s.name = name.get<std::string>();
  if (j.contains("description")) {
    if (!j.at("description").is_string()) bad("description", "must be a string");
    s.description = j.at("description").get<std::string>();
  }
  s.measure_x = need(j, "", "measure_x");
  s.measure_y = need(j, "", "measure_y");
  s.x = parse_measure(s.measure_x, "measure_x");
  s.y = parse_measure(s.measure_y, "measure_y");
  if (s.x.dim() != s.y.dim()) bad("measure_y", "dimension differs from measure_x");
  if (j.contains("lambdas")) {
    s.lambdas = num_list(j.at("lambdas"), "lambdas");
    for (std::size_t i = 0; i < s.lambdas.size(); ++i)
      if (!(s.lambdas[i] > 0 && s.lambdas[i] < 1)) bad("lambdas[" + std::to_string(i) + "]", "must lie in (0, 1)");
  }
  if (j.contains("grid")) {
    const Json& g = j.at("grid");
    if (!g.is_object()) bad("grid", "must be an object");
    only_keys(g, "grid", {"scheme", "nodes", "epsilon", "rho"});
    if (g.contains("scheme")) {
      if (!g.at("scheme").is_string()) bad("grid.scheme", "must be a string");
      s.grid.scheme = g.at("scheme").get<std::string>();
      if (s.grid.scheme != "geometric" && s.grid.scheme != "uniform") bad("grid.scheme", "must be geometric or uniform");
    }
    if (g.contains("nodes")) {
      if (!g.at("nodes").is_number_integer() || g.at("nodes").get<int>() < 5) bad("grid.nodes", "must be an integer >= 5");
      s.grid.nodes = g.at("nodes").get<int>();
    }
    if (g.contains("epsilon")) {
      s.grid.epsilon = positive(g.at("epsilon"), "grid.epsilon");
      if (s.grid.epsilon > 0.01) bad("grid.epsilon", "must be at most 0.01");
    }
    if (g.contains("rho")) {
      const double r = num(g.at("rho"), "grid.rho");
      if (!(r > 0 && r < 1)) bad("grid.rho", "must lie in (0, 1)");
      if (s.grid.scheme != "geometric") bad("grid.rho", "only valid for the geometric scheme");
      s.grid.rho = r;
    }
  }
  if (j.contains("paths")) {
    const Json& p = j.at("paths");
    if (!p.is_number_unsigned() || p.get<std::size_t>() < 100) bad("paths", "must be an integer >= 100");
    s.paths = p.get<std::size_t>();
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) bad("seed", "must be a nonnegative integer");
    s.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("whiten")) {
    if (!j.at("whiten").is_boolean()) bad("whiten", "must be a boolean");
    s.whiten = j.at("whiten").get<bool>();
  }
  if (j.contains("bounds")) {
    const Json& b = j.at("bounds");
    if (!b.is_array()) bad("bounds", "must be an array of bound names");
    s.bounds.clear();
    for (std::size_t i = 0; i < b.size(); ++i) {
      const std::string key = "bounds[" + std::to_string(i) + "]";
      if (!b[i].is_string()) bad(key, "must be a string");
      const auto n = b[i].get<std::string>();
      if (std::find(known_bounds().begin(), known_bounds().end(), n) == known_bounds().end())
        bad(key, "unknown bound '" + n + "'");
      s.bounds.push_back(n);
    }
  }
  if (j.contains("checks")) {
    if (!j.at("checks").is_boolean()) bad("checks", "must be a boolean");
    s.checks = j.at("checks").get<bool>();
  }
  if (j.contains("thm4_cp")) s.thm4_cp = positive(j.at("thm4_cp"), "thm4_cp");
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::ConfigInvalid, "cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_scenario(ss.str(), path);
}

Scenario with_overrides(Scenario s, const RunOptions& o) {
  if (o.seed) s.seed = *o.seed;
  if (o.paths) {
    require(*o.paths >= 100, Errc::ConfigInvalid, "key 'paths': must be an integer >= 100");
    s.paths = *o.paths;
  }
  if (o.epsilon) {
    require(*o.epsilon > 0 && *o.epsilon <= 0.01, Errc::ConfigInvalid, "key 'grid.epsilon': must lie in (0, 0.01]");
    s.grid.epsilon = *o.epsilon;
  }
  return s;
}

RunResult run_scenario(const Scenario& s, const RunOptions& o) {
  return with_context(s.name, [&]() -> RunResult {
    auto p = prepare(s, o);
    const std::string cache = cache_dir_of(o);
    const auto wanted = [&](const std::string& n) { return std::find(s.bounds.begin(), s.bounds.end(), n) != s.bounds.end(); };

    // Entropies by all routes; the direct route is the reference.
    const EntropyEstimate dx = relative_entropy_direct(p.x), dy = relative_entropy_direct(p.y);
    Json ent{{"X", {{"direct", est_json(dx)}, {"drift", est_json(relative_entropy_drift(p.x, p.cx))},
                    {"gamma", est_json(relative_entropy_gamma(p.x, p.cx))}}},
             {"Y", {{"direct", est_json(dy)}, {"drift", est_json(relative_entropy_drift(p.y, p.cy))},
                    {"gamma", est_json(relative_entropy_gamma(p.y, p.cy))}}}};

    // thm3 needs Cov X + Cov Y = 2I; otherwise it is evaluated on the jointly whitened pair
    // against that pair's own deficit.
    std::optional<WhitenedPair> wp;
    EntropyEstimate wdx, wdy;
    if (wanted("thm3") && !whitened(p.x, p.y) && p.x.log_concave() && p.y.log_concave()) {
      wp = joint_whiten(p.x, p.y);
      wdx = relative_entropy_direct(wp->x);
      wdy = relative_entropy_direct(wp->y);
    }

    // cor2 works on sqrt(xi) X and sqrt(xi) Y.
    std::optional<MomentCurve> sx, sy;
    double cor2_xi = 0;
    if (wanted("cor2") && isotropic(p.x) && isotropic(p.y) && p.x.xi() && p.y.xi()) {
      cor2_xi = std::min(*p.x.xi(), *p.y.xi());
      const Mat a = std::sqrt(cor2_xi) * Mat::Identity(p.x.dim(), p.x.dim());
      sx = moment_curve(ensemble(p.x.transformed(a), p.grid, s.paths, splitmix64(s.seed, 3), cache));
      sy = moment_curve(ensemble(p.y.transformed(a), p.grid, s.paths, splitmix64(s.seed, 4), cache));
    }

    bool ok = true;
    int n_app = 0, n_cert = 0;
    Json defs = Json::array();
    for (double lam : s.lambdas) {
      auto rep = deficit_from(p.x, p.y, lam, dx, dy);
      const double budget = rep.budget();
      Json rows = Json::array();
      for (const auto& name : known_bounds()) {
        if (!wanted(name)) continue;
        BoundResult b;
        double ref = rep.deficit, ref_budget = budget;
        try {
          if (name == "lemma-jump") {
            b = jump_bound(p.ex, p.ey, lam);
          } else if (name == "jump-ct") {
            if (p.x.xi() && p.y.xi())
              b = jump_bound_ct(p.ex, p.ey, lam, CtRule::Uniform, std::min(*p.x.xi(), *p.y.xi()));
            else if (p.x.log_concave() && p.y.log_concave())
              b = jump_bound_ct(p.ex, p.ey, lam, CtRule::LogConcave);
            else
              b = na(name, "needs log-concave inputs");
          } else if (name == "thm1") {
            b = thm1_rhs(p.x, p.y, p.cx, p.cy, lam);
          } else if (name == "cor2") {
            b = sx ? cor2_rhs(p.x, p.y, *sx, *sy, lam, cor2_xi)
                   : na(name, "needs isotropic inputs with declared uniform log-concavity");
          } else if (name == "thm3") {
            if (wp) {
              b = thm3_rhs(wp->x, wp->y, lam, wdx, wdy);
              auto wr = deficit_from(wp->x, wp->y, lam, wdx, wdy);
              ref = wr.deficit;
              ref_budget = wr.budget();
              b.inputs["evaluated_on_whitened_pair"] = 1.0;
              b.inputs["deficit_whitened"] = ref;
              b.inputs["budget_whitened"] = ref_budget;
            } else {
              b = thm3_rhs(p.x, p.y, lam, dx, dy);
            }
          } else if (name == "thm4") {
            const double cp = s.thm4_cp ? *s.thm4_cp
                                        : std::max(poincare_bound(p.x).value, poincare_bound(p.y).value);
            b = thm4_rhs(p.x, p.y, lam, dx, dy, cp);
          } else if (name == "thm5") {
            if (is_standard_gaussian(p.y)) {
              const auto pb = poincare_bound(p.x);
              b = thm5_rhs(p.x, lam, dx, pb.value);
              b.inputs["cp_certified"] = pb.flag == PoincareFlag::Numerical ? 0.0 : 1.0;
            } else {
              b = na(name, "needs Y to be the standard Gaussian");
            }
          } else if (name == "wasserstein-thm") {
            b = wasserstein_thm_rhs(p.x, p.y, p.cx, p.cy, lam);
          } else if (name == "entropy-jump-display") {
            if (p.x.fingerprint() == p.y.fingerprint() && std::abs(lam - 0.5) < 1e-12)
              b = entropy_jump_display(p.x, dx);
            else
              b = na(name, "display line needs X = Y and lambda = 1/2");
            b.display_only = true;
          }
        } catch (const Error& e) {
          if (e.code() != Errc::HypothesisViolated && e.code() != Errc::PoincareUnavailable) throw;
          b = na(name, e.what());
        }
        b.name = name;
        b.margin = ref - b.rhs;
        const bool cert = certified(b, ref, ref_budget);
        if (b.applicable && !b.display_only) {
          ++n_app;
          if (cert) ++n_cert;
          ok = ok && cert;
        }
        rows.push_back(bound_json(b, ref, ref_budget));
      }
      const bool nonneg = rep.deficit >= -budget;
      ok = ok && nonneg;
      defs.push_back(Json{{"lambda", lam},
                          {"dX", est_json(rep.dX)},
                          {"dY", est_json(rep.dY)},
                          {"dConv", est_json(rep.dConv)},
                          {"deficit", rep.deficit},
                          {"budget", budget},
                          {"nonnegative", nonneg},
                          {"bounds", rows}});
    }

    Json checks = Json::array();
    int n_gating = 0, n_failed = 0;
    if (s.checks) {
      auto add = [&](const std::vector<CheckResult>& rows, const std::string& subject) {
        for (const auto& r : rows) {
          checks.push_back(check_json(r, subject));
          if (r.applicable && !r.advisory) {
            ++n_gating;
            if (!r.passed) ++n_failed;
          }
        }
      };
      add(run_checks(p.x, p.ex, p.cx, dx), "X");
      add(run_checks(p.y, p.ey, p.cy, dy), "Y");
      add(run_pair_checks(p.x, p.y, p.ex, p.ey, p.cx, p.cy, dx, dy), "pair");
      ok = ok && n_failed == 0;
    }

    Json report;
    report["schema"] = kReportSchema;
    report["version"] = kLibraryVersion;
    report["checks_version"] = kChecksVersion;
    report["scenario"] = {{"name", s.name}, {"description", s.description}};
    report["settings"] = {{"paths", s.paths},
                          {"seed", s.seed},
                          {"lambdas", s.lambdas},
                          {"bounds", s.bounds},
                          {"checks", s.checks},
                          {"grid", {{"scheme", s.grid.scheme}, {"nodes", p.grid.size()}, {"epsilon", p.grid.epsilon()},
                                    {"rho", p.grid.rho()}, {"key", p.grid.key()}}}};
    report["whitening"] = {{"applied", p.whitened_input}, {"map", mat_json(p.map)}};
    report["measures"] = {{"X", measure_json(p.x, s.measure_x, p.ex)}, {"Y", measure_json(p.y, s.measure_y, p.ey)}};
    report["entropies"] = ent;
    report["deficits"] = defs;
    report["checks"] = checks;
    report["summary"] = {{"bounds_applicable", n_app}, {"bounds_certified", n_cert}, {"checks_gating", n_gating},
                         {"checks_failed", n_failed}, {"ok", ok}};

    if (!o.out.empty()) {
      fs::create_directories(o.out);
      write_report_files(report, o.out);
      write_curve_csv(p.cx, (fs::path(o.out) / "curve_X.csv").string());
      write_curve_csv(p.cy, (fs::path(o.out) / "curve_Y.csv").string());
      write_plot_curves(p.cx, p.cy, fs::path(o.out) / "plot_curves.dat");
    }
    return RunResult{report, ok};
  });
}

Json entropy_only(const Scenario& s, const RunOptions& o, const std::string& which) {
  return with_context(s.name, [&]() -> Json {
    require(which == "X" || which == "Y", Errc::InvalidArgument, "measure must be X or Y");
    const Measure m = which == "X" ? s.x : s.y;
    const auto e = ensemble(m, s.grid.make(), s.paths, splitmix64(s.seed, which == "X" ? 1 : 2), cache_dir_of(o));
    const auto c = moment_curve(e);
    return Json{{"scenario", s.name},
                {"measure", which},
                {"fingerprint", m.fingerprint()},
                {"direct", est_json(relative_entropy_direct(m))},
                {"drift", est_json(relative_entropy_drift(m, c))},
                {"gamma", est_json(relative_entropy_gamma(m, c))}};
  });
}

Json curves_only(const Scenario& s, const RunOptions& o) {
  return with_context(s.name, [&]() -> Json {
    auto p = prepare(s, o);
    if (!o.out.empty()) {
      fs::create_directories(o.out);
      write_curve_csv(p.cx, (fs::path(o.out) / "curve_X.csv").string());
      write_curve_csv(p.cy, (fs::path(o.out) / "curve_Y.csv").string());
      write_plot_curves(p.cx, p.cy, fs::path(o.out) / "plot_curves.dat");
    }
    return Json{{"scenario", s.name}, {"nodes", p.grid.size()}, {"grid", p.grid.key()},
                {"EvX2_last", p.cx.e_v2.back()}, {"EvY2_last", p.cy.e_v2.back()}};
  });
}

RunResult checks_only(const Scenario& s, const RunOptions& o) {
  return with_context(s.name, [&]() -> RunResult {
    auto p = prepare(s, o);
    const auto dx = relative_entropy_direct(p.x), dy = relative_entropy_direct(p.y);
    Json checks = Json::array();
    bool ok = true;
    auto add = [&](const std::vector<CheckResult>& rows, const std::string& subject) {
      for (const auto& r : rows) checks.push_back(check_json(r, subject));
      ok = ok && all_gating_passed(rows);
    };
    add(run_checks(p.x, p.ex, p.cx, dx), "X");
    add(run_checks(p.y, p.ey, p.cy, dy), "Y");
    add(run_pair_checks(p.x, p.y, p.ex, p.ey, p.cx, p.cy, dx, dy), "pair");
    return RunResult{Json{{"scenario", s.name}, {"checks_version", kChecksVersion}, {"checks", checks}}, ok};
  });
}

void write_report_files(const Json& report, const std::string& dir) {
  const fs::path d(dir);
  fs::create_directories(d);
  write_text(d / "report.json", report.dump(2) + "\n");

  std::ostringstream sum, plot;
  sum << "lambda,bound,applicable,display_only,certified,rhs,stderr,residual,deficit,budget,margin\n";
  plot << "# lambda deficit budget";
  const auto& defs = report.at("deficits");
  if (!defs.empty())
    for (const auto& b : defs[0].at("bounds")) plot << ' ' << b.at("name").get<std::string>();
  plot << '\n';
  for (const auto& df : defs) {
    const std::string lam = csv_num(df.at("lambda"));
    plot << lam << ' ' << csv_num(df.at("deficit")) << ' ' << csv_num(df.at("budget"));
    for (const auto& b : df.at("bounds")) {
      sum << lam << ',' << b.at("name").get<std::string>() << ',' << csv_bool(b.at("applicable")) << ','
          << csv_bool(b.at("display_only")) << ',' << csv_bool(b.at("certified")) << ',' << csv_num(b.at("rhs")) << ','
          << csv_num(b.at("stderr")) << ',' << csv_num(b.at("residual")) << ',' << csv_num(df.at("deficit")) << ','
          << csv_num(df.at("budget")) << ',' << csv_num(b.at("margin")) << '\n';
      plot << ' ' << (b.at("applicable").get<bool>() ? csv_num(b.at("rhs")) : "nan");
    }
    plot << '\n';
  }
  write_text(d / "summary.csv", sum.str());
  write_text(d / "plot_deficit.dat", plot.str());

  std::ostringstream ent;
  ent << "measure,route,value,stderr,tail_bound,residual,budget\n";
  for (const auto& [who, routes] : report.at("entropies").items())
    for (const auto& [route, e] : routes.items())
      ent << who << ',' << route << ',' << csv_num(e.at("value")) << ',' << csv_num(e.at("stderr")) << ','
          << csv_num(e.at("tail_bound")) << ',' << csv_num(e.at("residual")) << ',' << csv_num(e.at("budget")) << '\n';
  write_text(d / "entropies.csv", ent.str());

  std::ostringstream cc, table;
  cc << "subject,name,applicable,advisory,passed,statistic,threshold,t\n";
  std::vector<CheckResult> rows;
  std::string subject;
  auto flush = [&]() {
    if (rows.empty()) return;
    table << "[" << subject << "]\n" << checks_table(rows) << '\n';
    rows.clear();
  };
  for (const auto& c : report.at("checks")) {
    const auto sj = c.at("subject").get<std::string>();
    if (sj != subject) {
      flush();
      subject = sj;
    }
    rows.push_back(check_from_json(c));
    cc << sj << ',' << c.at("name").get<std::string>() << ',' << csv_bool(c.at("applicable")) << ','
       << csv_bool(c.at("advisory")) << ',' << csv_bool(c.at("passed")) << ',' << csv_num(c.at("statistic")) << ','
       << csv_num(c.at("threshold")) << ',' << csv_num(c.at("t")) << '\n';
  }
  flush();
  write_text(d / "checks.csv", cc.str());
  write_text(d / "checks.txt", table.str());
}

std::string render_summary(const Json& report) {
  std::ostringstream os;
  char buf[256];
  os << "scenario " << report.at("scenario").at("name").get<std::string>() << '\n';
  for (const auto& [who, routes] : report.at("entropies").items()) {
    std::snprintf(buf, sizeof buf, "  D(%s||G): direct %.6g  drift %.6g  gamma %.6g\n", who.c_str(),
                  routes.at("direct").at("value").get<double>(), routes.at("drift").at("value").get<double>(),
                  routes.at("gamma").at("value").get<double>());
    os << buf;
  }
  for (const auto& df : report.at("deficits")) {
    std::snprintf(buf, sizeof buf, "  lambda %.3g: deficit %.8g (budget %.2g)%s\n", df.at("lambda").get<double>(),
                  df.at("deficit").get<double>(), df.at("budget").get<double>(),
                  df.at("nonnegative").get<bool>() ? "" : "  NEGATIVE");
    os << buf;
    for (const auto& b : df.at("bounds")) {
      const bool app = b.at("applicable").get<bool>();
      const char* status = !app ? "n/a" : b.at("display_only").get<bool>() ? "display" : b.at("certified").get<bool>() ? "ok" : "FAIL";
      std::snprintf(buf, sizeof buf, "    %-22s %-8s", b.at("name").get<std::string>().c_str(), status);
      os << buf;
      if (app) {
        std::snprintf(buf, sizeof buf, " rhs %.6g  margin %.6g", b.at("rhs").get<double>(), b.at("margin").get<double>());
        os << buf;
      } else {
        os << ' ' << b.at("reason").get<std::string>();
      }
      os << '\n';
    }
  }
  int failed = 0, advisory_failed = 0;
  for (const auto& c : report.at("checks")) {
    if (!c.at("applicable").get<bool>() || c.at("passed").get<bool>()) continue;
    if (c.at("advisory").get<bool>()) {
      ++advisory_failed;
    } else {
      ++failed;
      os << "  check FAILED: " << c.at("subject").get<std::string>() << '/' << c.at("name").get<std::string>() << "  "
         << c.at("detail").get<std::string>() << '\n';
    }
  }
  const auto& s = report.at("summary");
  os << "  bounds certified " << s.at("bounds_certified").get<int>() << '/' << s.at("bounds_applicable").get<int>()
     << ", checks failed " << failed << '/' << s.at("checks_gating").get<int>() << " (advisory failures "
     << advisory_failed << ")\n";
  os << (s.at("ok").get<bool>() ? "OK\n" : "NOT OK\n");
  return os.str();
}

}  // namespace follmer
