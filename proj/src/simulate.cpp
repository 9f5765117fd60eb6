#include "follmer/simulate.hpp"

#include "follmer/parallel.hpp"
#include "follmer/util.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace follmer {

std::string_view grid_scheme_name(GridScheme s) { return s == GridScheme::Uniform ? "uniform" : "geometric"; }
std::string_view sim_method_name(SimMethod m) { return m == SimMethod::Bridge ? "bridge" : "euler"; }

// ---------------------------------------------------------------- TimeGrid

namespace {

void check_eps(double eps) {
  require(eps > 0.0 && eps <= 0.01, Errc::InvalidArgument, "grid epsilon must lie in (0, 0.01]");
}

}  // namespace

TimeGrid TimeGrid::geometric(int n, double eps) {
  check_eps(eps);
  require(n >= 3, Errc::InvalidArgument, "grid needs at least 3 nodes");
  TimeGrid g;
  g.eps_ = eps;
  g.scheme_ = GridScheme::Geometric;
  g.rho_ = std::pow(eps, 1.0 / (n - 1));
  const double ls = std::log(eps) / (n - 1);
  for (int k = 0; k < n; ++k) g.nodes_.push_back(-std::expm1(ls * k));
  g.nodes_.back() = 1.0 - eps;
  return g;
}

TimeGrid TimeGrid::geometric_ratio(double rho, double eps) {
  require(rho > 0.0 && rho < 1.0, Errc::InvalidArgument, "grid ratio must lie in (0, 1)");
  check_eps(eps);
  const int n = static_cast<int>(std::ceil(std::log(eps) / std::log(rho) - 1e-9)) + 1;
  return geometric(std::max(n, 3), eps);
}

TimeGrid TimeGrid::uniform(int n, double eps) {
  check_eps(eps);
  require(n >= 3, Errc::InvalidArgument, "grid needs at least 3 nodes");
  TimeGrid g;
  g.eps_ = eps;
  g.scheme_ = GridScheme::Uniform;
  for (int k = 0; k < n; ++k) g.nodes_.push_back((1.0 - eps) * k / (n - 1));
  return g;
}

std::string TimeGrid::key() const {
  std::string s = std::string(grid_scheme_name(scheme_)) + "|" + fmt17(eps_) + "|" + std::to_string(size());
  for (double t : nodes_) s += "," + fmt17(t);
  return hex64(fnv1a64(s));
}

std::size_t TimeGrid::first_at_or_after(double t0) const {
  for (std::size_t k = 0; k < size(); ++k)
    if (nodes_[k] >= t0) return k;
  return size() - 1;
}

namespace {

constexpr int kPanel = 4;  // intervals per panel; the local interpolant has degree kPanel

// Moments int_a^b u^j w(s_c + u) du, j = 0..kPanel, with w = 1 (S) or w = e^{-s} (T).
std::array<double, kPanel + 1> panel_moments(double a, double b, double sc, IntegrateIn kind) {
  std::array<double, kPanel + 1> m{};
  if (kind == IntegrateIn::S) {
    for (int j = 0; j <= kPanel; ++j) m[j] = (std::pow(b, j + 1) - std::pow(a, j + 1)) / (j + 1);
    return m;
  }
  const double scale = std::exp(-sc);
  if (std::max(std::abs(a), std::abs(b)) <= 2.0) {
    // Series in e^{-u}; avoids cancellation on short panels.
    double fact = 1.0;
    for (int n = 0; n < 60; ++n) {
      if (n > 0) fact *= -1.0 / n;
      for (int j = 0; j <= kPanel; ++j)
        m[j] += fact * (std::pow(b, n + j + 1) - std::pow(a, n + j + 1)) / (n + j + 1);
    }
  } else {
    // int u^j e^{-u} du = -e^{-u} sum_i j!/i! u^i.
    auto P = [](int j, double u) {
      double acc = 0, term = 1;
      for (int i = j; i >= 0; --i) {
        acc += term * std::pow(u, i);
        term *= i;
      }
      return acc;
    };
    for (int j = 0; j <= kPanel; ++j) m[j] = P(j, a) * std::exp(-a) - P(j, b) * std::exp(-b);
  }
  for (auto& v : m) v *= scale;
  return m;
}

// Product weights of composite Newton-Cotes-type rules in s over abscissae s[0..m-1] (uneven
// allowed): each panel of kPanel intervals integrates its interpolating polynomial against the
// weight exactly. Leftover intervals at the end reuse the last kPanel + 1 points.
std::vector<double> panel_weights(const std::vector<double>& s, IntegrateIn kind) {
  const std::size_t m = s.size();
  std::vector<double> w(m, 0.0);
  if (m == 1) return w;
  // Adds the weights of int_{s[lo]}^{s[hi]} of the interpolant through s[p0 .. p0+q].
  auto panel = [&](std::size_t p0, std::size_t q, std::size_t lo, std::size_t hi) {
    const double c = s[p0];
    Eigen::MatrixXd V(q + 1, q + 1);
    for (std::size_t r = 0; r <= q; ++r)
      for (std::size_t j = 0; j <= q; ++j) V(j, r) = std::pow(s[p0 + r] - c, double(j));
    auto M = panel_moments(s[lo] - c, s[hi] - c, c, kind);
    Eigen::VectorXd mom(q + 1);
    for (std::size_t j = 0; j <= q; ++j) mom(j) = M[j];
    // Weights solve V w = moments (exactness on 1, u, ..., u^q).
    const Eigen::VectorXd pw = V.fullPivLu().solve(mom);
    for (std::size_t r = 0; r <= q; ++r) w[p0 + r] += pw(r);
  };
  const std::size_t q = std::min<std::size_t>(kPanel, m - 1);
  std::size_t i = 0;
  for (; i + q <= m - 1; i += q) panel(i, q, i, i + q);
  if (i < m - 1) panel(m - 1 - q, q, i, m - 1);
  return w;
}

double s_of(double t) { return -std::log1p(-t); }

}  // namespace

std::vector<double> TimeGrid::weights(IntegrateIn kind, std::size_t i0, std::size_t i1) const {
  require(i0 <= i1 && i1 < size(), Errc::InvalidArgument, "bad node range");
  std::vector<double> s;
  for (std::size_t k = i0; k <= i1; ++k) s.push_back(s_of(nodes_[k]));
  return panel_weights(s, kind);
}

GridIntegral TimeGrid::integrate(const std::vector<double>& values, IntegrateIn kind, std::size_t i0,
                                 std::size_t i1) const {
  require(values.size() == size(), Errc::GridMismatch, "values do not match the grid");
  GridIntegral r;
  const auto w = weights(kind, i0, i1);
  for (std::size_t k = i0; k <= i1; ++k) r.value += w[k - i0] * values[k];
  // Coarse rule on every other node (always keeping the end node).
  std::vector<std::size_t> idx;
  for (std::size_t k = i0; k <= i1; k += 2) idx.push_back(k);
  if (idx.back() != i1) idx.push_back(i1);
  if (idx.size() >= 2) {
    std::vector<double> s;
    for (auto k : idx) s.push_back(s_of(nodes_[k]));
    auto wc = panel_weights(s, kind);
    double coarse = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) coarse += wc[j] * values[idx[j]];
    r.residual = std::abs(r.value - coarse);
  }
  return r;
}

// ---------------------------------------------------------------- PathEnsemble

Mat unpack_sym(const double* p, int dim) {
  Mat a(dim, dim);
  int k = 0;
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) a(i, j) = a(j, i) = p[k++];
  return a;
}

void pack_sym(const Mat& a, double* out) {
  int k = 0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = i; j < a.cols(); ++j) out[k++] = 0.5 * (a(i, j) + a(j, i));
}

Vec PathEnsemble::x(std::size_t node, std::size_t path) const {
  Vec out(dim);
  if (method == SimMethod::Euler) {
    const double* p = &xt[(node * n_paths + path) * dim];
    for (int a = 0; a < dim; ++a) out(a) = p[a];
    return out;
  }
  const double t = grid[node];
  const double c = std::sqrt(t * (1.0 - t));
  for (int a = 0; a < dim; ++a) out(a) = t * x1[path * dim + a] + c * g[path * dim + a];
  return out;
}

Mat PathEnsemble::gamma_at(std::size_t node, std::size_t path) const {
  return unpack_sym(&gamma[(node * n_paths + path) * packed()], dim);
}

Vec PathEnsemble::drift_at(std::size_t node, std::size_t path) const {
  Vec out(dim);
  const double* p = &drift[(node * n_paths + path) * dim];
  for (int a = 0; a < dim; ++a) out(a) = p[a];
  return out;
}

std::string PathEnsemble::cache_key() const {
  return hex64(fnv1a64(fingerprint + "|" + grid.key() + "|" + std::to_string(n_paths) + "|" + std::to_string(seed) +
                       "|" + std::string(sim_method_name(method))));
}

namespace {

PathEnsemble empty_ensemble(const Measure& m, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                            SimMethod method) {
  require(n_paths >= 100, Errc::InvalidArgument, "ensembles need at least 100 paths");
  PathEnsemble e;
  e.grid = grid;
  e.n_paths = n_paths;
  e.dim = m.dim();
  e.seed = seed;
  e.method = method;
  e.fingerprint = m.fingerprint();
  e.gamma.assign(grid.size() * n_paths * e.packed(), 0.0);
  e.drift.assign(grid.size() * n_paths * e.dim, 0.0);
  return e;
}

void store(PathEnsemble& e, std::size_t node, std::size_t path, const PosteriorStats& p) {
  pack_sym(p.gamma, &e.gamma[(node * e.n_paths + path) * e.packed()]);
  double* d = &e.drift[(node * e.n_paths + path) * e.dim];
  for (int a = 0; a < e.dim; ++a) d[a] = p.drift(a);
}

}  // namespace

PathEnsemble simulate_bridge(const Measure& m, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed) {
  auto e = empty_ensemble(m, grid, n_paths, seed, SimMethod::Bridge);
  const int d = e.dim;
  const auto ends = sample(m, n_paths, splitmix64(seed, 1));
  e.x1.resize(n_paths * d);
  e.g.resize(n_paths * d);
  const std::uint64_t gseed = splitmix64(seed, 2);
  for (std::size_t i = 0; i < n_paths; ++i) {
    std::mt19937_64 rng(splitmix64(gseed, i));
    std::normal_distribution<double> nd;
    for (int a = 0; a < d; ++a) {
      e.x1[i * d + a] = ends[i](a);
      e.g[i * d + a] = nd(rng);
    }
  }
  const PosteriorEngine eng(m);
  parallel_for(n_paths, [&](std::size_t b, std::size_t end) {
    for (std::size_t i = b; i < end; ++i)
      for (std::size_t k = 0; k < grid.size(); ++k) store(e, k, i, eng(grid[k], e.x(k, i)));
  }, 64);
  return e;
}

PathEnsemble simulate_euler(const Measure& m, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed) {
  auto e = empty_ensemble(m, grid, n_paths, seed, SimMethod::Euler);
  const int d = e.dim;
  e.xt.assign(grid.size() * n_paths * d, 0.0);
  const std::uint64_t master = splitmix64(seed, 3);
  const PosteriorEngine eng(m);
  parallel_for(n_paths, [&](std::size_t b, std::size_t end) {
    for (std::size_t i = b; i < end; ++i) {
      std::mt19937_64 rng(splitmix64(master, i));
      std::normal_distribution<double> nd;
      Vec x = Vec::Zero(d);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        double* xs = &e.xt[(k * n_paths + i) * d];
        for (int a = 0; a < d; ++a) xs[a] = x(a);
        const auto p = eng(grid[k], x);
        if (!(p.drift.norm() <= 1e6))
          fail(Errc::DriftBlowup, "drift norm exceeds 1e6 at t = " + fmt17(grid[k]));
        store(e, k, i, p);
        if (k + 1 == grid.size()) break;
        const double dt = grid[k + 1] - grid[k];
        const double sq = std::sqrt(dt);
        for (int a = 0; a < d; ++a) x(a) += p.drift(a) * dt + sq * nd(rng);
      }
    }
  }, 64);
  return e;
}

// ---------------------------------------------------------------- MomentCurve

namespace {

// Batch means over the path axis; means[b] holds batch b's mean.
struct BatchStat {
  double mean = 0;
  double se = 0;
};

BatchStat from_batches(const std::vector<double>& sums, const std::vector<std::size_t>& counts) {
  const int B = static_cast<int>(sums.size());
  double tot = 0;
  std::size_t n = 0;
  for (int b = 0; b < B; ++b) {
    tot += sums[b];
    n += counts[b];
  }
  BatchStat r;
  r.mean = tot / double(n);
  double ss = 0;
  for (int b = 0; b < B; ++b) {
    const double dm = sums[b] / double(counts[b]) - r.mean;
    ss += dm * dm;
  }
  r.se = std::sqrt(ss / (B - 1) / B);
  return r;
}

}  // namespace

MomentCurve moment_curve(const PathEnsemble& e) {
  MomentCurve c;
  c.grid = e.grid;
  c.dim = e.dim;
  c.n_paths = e.n_paths;
  const std::size_t K = e.grid.size();
  const int d = e.dim;
  const int B = MomentCurve::kBatches;
  c.e_gamma.resize(K);
  c.e_gamma2.resize(K);
  c.var_gamma.resize(K);
  c.e_vv.resize(K);
  c.se_gamma.resize(K);
  c.se_gamma2.resize(K);
  c.se_vv.resize(K);
  c.e_v.resize(K);
  c.se_v.resize(K);
  c.e_v2.resize(K);
  c.se_v2.resize(K);
  c.tr_dev2.resize(K);
  c.se_tr_dev2.resize(K);
  c.tr_var.resize(K);
  c.se_tr_var.resize(K);
  c.e_id.resize(K);
  c.se_id.resize(K);
  c.e_ode.resize(K);
  c.se_ode.resize(K);
  c.batch_v2.assign(K, std::vector<double>(B));
  c.batch_dev2.assign(K, std::vector<double>(B));
  c.batch_gamma.assign(K, std::vector<Mat>(B));
  c.batch_gamma2.assign(K, std::vector<Mat>(B));
  c.batch_vv.assign(K, std::vector<Mat>(B));

  std::vector<std::size_t> counts(B);
  std::vector<std::size_t> starts(B + 1);
  for (int b = 0; b <= B; ++b) starts[b] = e.n_paths * b / B;
  for (int b = 0; b < B; ++b) counts[b] = starts[b + 1] - starts[b];

  // Scalar channels per node: Gamma (d*d), Gamma^2 (d*d), vv (d*d), id (d*d), ode (d*d), v (d), |v|^2, dev2.
  const int dd = d * d;
  const int nch = 5 * dd + d + 2;
  parallel_for(K, [&](std::size_t kb, std::size_t ke) {
    std::vector<double> sums(static_cast<std::size_t>(B) * nch);
    for (std::size_t k = kb; k < ke; ++k) {
      std::fill(sums.begin(), sums.end(), 0.0);
      const double t = e.grid[k];
      const Mat I = Mat::Identity(d, d);
      for (int b = 0; b < B; ++b) {
        double* s = &sums[static_cast<std::size_t>(b) * nch];
        for (std::size_t i = starts[b]; i < starts[b + 1]; ++i) {
          const Mat g = e.gamma_at(k, i);
          const Vec v = e.drift_at(k, i);
          const Mat g2 = g * g;
          const Mat vv = v * v.transpose();
          const Mat id = vv + g / (1.0 - t);
          const Mat ode = g - g2;
          const Mat dev = g - I;
          for (int a = 0; a < dd; ++a) {
            s[a] += g.data()[a];
            s[dd + a] += g2.data()[a];
            s[2 * dd + a] += vv.data()[a];
            s[3 * dd + a] += id.data()[a];
            s[4 * dd + a] += ode.data()[a];
          }
          for (int a = 0; a < d; ++a) s[5 * dd + a] += v(a);
          s[5 * dd + d] += v.squaredNorm();
          s[5 * dd + d + 1] += (dev * dev).trace();
        }
      }
      std::vector<double> ch(B);
      auto stat = [&](int channel) {
        for (int b = 0; b < B; ++b) ch[b] = sums[static_cast<std::size_t>(b) * nch + channel];
        return from_batches(ch, counts);
      };
      auto mat = [&](int base, Mat& mean, Mat& se) {
        mean.resize(d, d);
        se.resize(d, d);
        for (int a = 0; a < dd; ++a) {
          auto r = stat(base + a);
          mean.data()[a] = r.mean;
          se.data()[a] = r.se;
        }
      };
      mat(0, c.e_gamma[k], c.se_gamma[k]);
      mat(dd, c.e_gamma2[k], c.se_gamma2[k]);
      mat(2 * dd, c.e_vv[k], c.se_vv[k]);
      mat(3 * dd, c.e_id[k], c.se_id[k]);
      mat(4 * dd, c.e_ode[k], c.se_ode[k]);
      c.e_v[k].resize(d);
      c.se_v[k].resize(d);
      for (int a = 0; a < d; ++a) {
        auto r = stat(5 * dd + a);
        c.e_v[k](a) = r.mean;
        c.se_v[k](a) = r.se;
      }
      auto v2 = stat(5 * dd + d);
      c.e_v2[k] = v2.mean;
      c.se_v2[k] = v2.se;
      auto dv = stat(5 * dd + d + 1);
      c.tr_dev2[k] = dv.mean;
      c.se_tr_dev2[k] = dv.se;
      c.var_gamma[k] = c.e_gamma2[k] - c.e_gamma[k] * c.e_gamma[k];
      c.tr_var[k] = c.var_gamma[k].trace();
      // Spread of the within-batch trace variances.
      double ss = 0;
      for (int b = 0; b < B; ++b) {
        const double* s = &sums[static_cast<std::size_t>(b) * nch];
        Mat mg(d, d), mg2(d, d), mvv(d, d);
        for (int a = 0; a < dd; ++a) {
          mg.data()[a] = s[a] / double(counts[b]);
          mg2.data()[a] = s[dd + a] / double(counts[b]);
          mvv.data()[a] = s[2 * dd + a] / double(counts[b]);
        }
        c.batch_vv[k][b] = mvv;
        c.batch_gamma[k][b] = mg;
        c.batch_gamma2[k][b] = mg2;
        c.batch_v2[k][b] = s[5 * dd + d] / double(counts[b]);
        c.batch_dev2[k][b] = s[5 * dd + d + 1] / double(counts[b]);
        const double tv = (mg2 - mg * mg).trace();
        ss += (tv - c.tr_var[k]) * (tv - c.tr_var[k]);
      }
      c.se_tr_var[k] = std::sqrt(ss / (B - 1) / B);
    }
  });
  return c;
}

void write_curve_csv(const MomentCurve& c, const std::string& path) {
  std::ofstream out(path);
  require(bool(out), Errc::InvalidArgument, "cannot write " + path);
  const int d = c.dim;
  std::string head = "t";
  for (const char* pre : {"EGamma_", "VarGamma_"})
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) head += "," + std::string(pre) + std::to_string(i) + std::to_string(j);
  head += ",Evnorm2";
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) head += ",se_EGamma_" + std::to_string(i) + std::to_string(j);
  head += ",se_Evnorm2";
  out << head << "\n";
  for (std::size_t k = 0; k < c.grid.size(); ++k) {
    out << fmt17(c.grid[k]);
    for (const auto* m : {&c.e_gamma[k], &c.var_gamma[k]})
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) out << "," << fmt17((*m)(i, j));
    out << "," << fmt17(c.e_v2[k]);
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) out << "," << fmt17(c.se_gamma[k](i, j));
    out << "," << fmt17(c.se_v2[k]) << "\n";
  }
}

// ---------------------------------------------------------------- binary cache

namespace {

constexpr char kMagic[8] = {'F', 'L', 'M', 'R', 'E', 'N', 'S', '1'};

template <typename T>
void put(std::ofstream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
void put_str(std::ofstream& o, const std::string& s) {
  put<std::uint64_t>(o, s.size());
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_vec(std::ofstream& o, const std::vector<double>& v) {
  put<std::uint64_t>(o, v.size());
  o.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

struct Reader {
  std::ifstream& in;
  const std::string& path;
  template <typename T>
  T get() {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(bool(in), Errc::CacheCorrupt, "truncated cache file " + path);
    return v;
  }
  std::string get_str() {
    const auto n = get<std::uint64_t>();
    require(n < (1u << 20), Errc::CacheCorrupt, "bad string length in " + path);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    require(bool(in), Errc::CacheCorrupt, "truncated cache file " + path);
    return s;
  }
  std::vector<double> get_vec() {
    const auto n = get<std::uint64_t>();
    require(n < (std::uint64_t{1} << 36), Errc::CacheCorrupt, "bad array length in " + path);
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    require(bool(in), Errc::CacheCorrupt, "truncated cache file " + path);
    return v;
  }
};

}  // namespace

void save_ensemble(const PathEnsemble& e, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream o(tmp, std::ios::binary);
    require(bool(o), Errc::InvalidArgument, "cannot write " + tmp);
    o.write(kMagic, sizeof kMagic);
    put_str(o, e.cache_key());
    put_str(o, e.fingerprint);
    put<std::int32_t>(o, e.dim);
    put<std::uint64_t>(o, e.n_paths);
    put<std::uint64_t>(o, e.seed);
    put<std::int32_t>(o, static_cast<std::int32_t>(e.method));
    put<std::int32_t>(o, static_cast<std::int32_t>(e.grid.scheme()));
    put<double>(o, e.grid.epsilon());
    put<std::uint64_t>(o, e.grid.size());
    put_vec(o, e.x1);
    put_vec(o, e.g);
    put_vec(o, e.xt);
    put_vec(o, e.gamma);
    put_vec(o, e.drift);
    require(bool(o), Errc::InvalidArgument, "failed writing " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

bool load_ensemble(const std::string& path, const std::string& expected_key, PathEnsemble& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  Reader r{in, path};
  char magic[8];
  in.read(magic, sizeof magic);
  require(bool(in) && std::memcmp(magic, kMagic, sizeof kMagic) == 0, Errc::CacheCorrupt, "bad magic in " + path);
  const std::string key = r.get_str();
  require(key == expected_key, Errc::CacheCorrupt, "cache key mismatch in " + path);
  PathEnsemble e;
  e.fingerprint = r.get_str();
  e.dim = r.get<std::int32_t>();
  e.n_paths = r.get<std::uint64_t>();
  e.seed = r.get<std::uint64_t>();
  e.method = static_cast<SimMethod>(r.get<std::int32_t>());
  const auto scheme = static_cast<GridScheme>(r.get<std::int32_t>());
  const double eps = r.get<double>();
  const auto n = r.get<std::uint64_t>();
  e.grid = scheme == GridScheme::Uniform ? TimeGrid::uniform(static_cast<int>(n), eps)
                                         : TimeGrid::geometric(static_cast<int>(n), eps);
  e.x1 = r.get_vec();
  e.g = r.get_vec();
  e.xt = r.get_vec();
  e.gamma = r.get_vec();
  e.drift = r.get_vec();
  require(e.dim >= 1 && e.dim <= kMaxDim, Errc::CacheCorrupt, "bad dimension in " + path);
  require(e.gamma.size() == n * e.n_paths * e.packed() && e.drift.size() == n * e.n_paths * e.dim,
          Errc::CacheCorrupt, "array sizes do not match in " + path);
  require(e.cache_key() == key, Errc::CacheCorrupt, "cache contents do not reproduce the key in " + path);
  out = std::move(e);
  return true;
}

}  // namespace follmer
