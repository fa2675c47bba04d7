#pragma once

// Manifest-driven experiment runners. Each runner writes CSV tables into an
// output directory; every row carries the manifest hash and every derived
// seed is listed in seeds.csv. Re-running a manifest reproduces the CSV bytes.

#include "cdiff/common.hpp"
#include "cdiff/csv.hpp"
#include "cdiff/density_io.hpp"
#include "cdiff/densities.hpp"
#include "cdiff/diffused_poly.hpp"
#include "cdiff/eval.hpp"
#include "cdiff/inverse.hpp"
#include "cdiff/sampler.hpp"
#include "cdiff/score_net.hpp"
#include "cdiff/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace cdiff {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest

struct Manifest {
  nlohmann::json doc;  // density references resolved inline; output directory removed
  std::string kind;
  std::uint64_t seed = 0;
  fs::path out;

  /// FNV-1a of the canonical JSON text.
  std::string hash() const { return fmt_hex(fnv1a(doc.dump())); }

  const nlohmann::json& section(const std::string& name) const {
    static const nlohmann::json empty = nlohmann::json::object();
    return doc.contains(name) ? doc[name] : empty;
  }

  ConditionalDensitySpec density() const {
    require(doc.contains("density"), "manifest: missing density");
    return density_from_json(doc["density"]);
  }
  std::optional<FastRateDensitySpec> fast_density() const {
    require(doc.contains("density"), "manifest: missing density");
    return fast_rate_from_json(doc["density"]);
  }
  double t0() const { return section("schedule").value("t0", 0.05); }
  double T() const { return section("schedule").value("T", 3.0); }
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"approx-rate", "train-risk", "tv-sweep", "inverse", "reward", "validate"};
  return k;
}

inline Manifest manifest_from_json(nlohmann::json doc, const fs::path& base_dir = {},
                                   std::optional<std::uint64_t> seed_override = std::nullopt) {
  Manifest m;
  m.kind = doc.at("kind").get<std::string>();
  require(std::find(experiment_kinds().begin(), experiment_kinds().end(), m.kind) != experiment_kinds().end(),
          "manifest: unknown experiment kind " + m.kind);
  if (doc.contains("density_file")) {
    fs::path p = doc["density_file"].get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    doc["density"] = read_json_file(p.string());
    doc.erase("density_file");
  }
  if (doc.contains("out")) {
    m.out = doc["out"].get<std::string>();
    if (m.out.is_relative()) m.out = base_dir / m.out;
    doc.erase("out");
  }
  if (seed_override) doc["seed"] = *seed_override;
  m.seed = doc.value("seed", std::uint64_t{0});
  doc["seed"] = m.seed;
  doc["seed_rule"] = std::string(kSeedRuleId);
  m.doc = std::move(doc);
  return m;
}

inline Manifest load_manifest(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
  return manifest_from_json(read_json_file(path), fs::path(path).parent_path(), seed_override);
}

/// Every seed derived during a run, in derivation order.
class SeedLog {
 public:
  SeedLog(std::uint64_t master, std::string kind) : master_(master), kind_(std::move(kind)) {}

  /// master -> tag -> path elements, recorded under `label`.
  std::uint64_t derive(const std::string& label, const std::string& tag,
                       std::initializer_list<std::uint64_t> path = {}) {
    std::uint64_t s = derive_seed(derive_seed(master_, kind_), tag);
    for (auto e : path) s = derive_seed(s, e);
    entries_.emplace_back(label, s);
    return s;
  }

  void write(std::ostream& os, const std::string& hash) const {
    CsvWriter w(os, {"manifest_hash", "label", "seed"});
    w.row({hash, "master", static_cast<unsigned long long>(master_)});
    for (const auto& [l, s] : entries_) w.row({hash, l, static_cast<unsigned long long>(s)});
  }

 private:
  std::uint64_t master_;
  std::string kind_;
  std::vector<std::pair<std::string, std::uint64_t>> entries_;
};

struct RunOptions {
  unsigned jobs = 1;
};

struct RunResult {
  int exit_code = 0;  // 0 ok, 1 validation failure
  std::vector<fs::path> files;
  std::string summary;
};

namespace detail {

inline std::vector<double> doubles(const nlohmann::json& j, const std::string& key, std::vector<double> dflt) {
  if (!j.contains(key)) return dflt;
  return j[key].get<std::vector<double>>();
}

inline std::string label(std::initializer_list<std::pair<const char*, std::string>> parts) {
  std::string s;
  for (const auto& [k, v] : parts) s += (s.empty() ? "" : ",") + std::string(k) + "=" + v;
  return s;
}

inline std::string num(double v) { return fmt_double(v); }

class OutputDir {
 public:
  OutputDir(fs::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {
    require(!dir_.empty(), "no output directory given");
    fs::create_directories(dir_);
  }
  std::ofstream open(const std::string& name, RunResult& rr) const {
    const fs::path p = dir_ / name;
    std::ofstream os(p, std::ios::binary);
    require(static_cast<bool>(os), "cannot write " + p.string());
    rr.files.push_back(p);
    return os;
  }
  const fs::path& path() const { return dir_; }
  const std::string& hash() const { return hash_; }

 private:
  fs::path dir_;
  std::string hash_;
};

inline ScoreNetConfig net_config(const Manifest& m, const ConditionalDensitySpec& spec) {
  ScoreNetConfig c;
  c.d = spec.dim();
  c.d_y = spec.guidance_dim();
  c.t0 = m.t0();
  c.T = m.T();
  c = score_net_config_from_json(m.section("net"), c);
  c.d = spec.dim();
  c.d_y = spec.guidance_dim();
  return c;
}

inline TrainConfig train_config(const Manifest& m) {
  const auto& j = m.section("train");
  TrainConfig c;
  c.batch = j.value("batch", c.batch);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.t_samples_per_datum = j.value("t_samples_per_datum", c.t_samples_per_datum);
  c.null_rate = j.value("null_rate", c.null_rate);
  const std::string mask = j.value("mask", std::string("random"));
  require(mask == "random" || mask == "null" || mask == "id", "manifest: train.mask must be random, null or id");
  c.mask = mask == "null" ? MaskPolicy::always_null : mask == "id" ? MaskPolicy::always_id : MaskPolicy::random;
  c.t0 = m.t0();
  c.T = m.T();
  return c;
}

inline BackwardConfig sampler_config(const Manifest& m, int d) {
  const auto& j = m.section("sampler");
  BackwardConfig c;
  c.d = d;
  c.t0 = m.t0();
  c.T = m.T();
  c.steps = j.value("steps", std::size_t{200});
  const std::string g = j.value("grid", std::string("geometric"));
  require(g == "geometric" || g == "uniform", "manifest: sampler.grid must be geometric or uniform");
  c.grid = g == "uniform" ? TimeGrid::uniform : TimeGrid::geometric;
  return c;
}

inline Bounds tv_bounds(const nlohmann::json& j, int d) {
  const auto b = doubles(j, "tv_bounds", {-5.0, 6.0});
  require(b.size() == 2 && b[1] > b[0], "manifest: tv_bounds must be [lo, hi]");
  return {Vec::Constant(d, b[0]), Vec::Constant(d, b[1])};
}

inline std::vector<Vec> direct_samples(const ConditionalDensitySpec& spec, const Vec& y, std::size_t n,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> xs;
  xs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) xs.push_back(spec.sample(y, rng));
  return xs;
}

inline std::vector<Vec> gaussian_samples(const Vec& mean, const Mat& cov, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const Mat L = cov.llt().matrixL();
  std::vector<Vec> xs;
  xs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) xs.push_back(mean + L * rng.normal_vec(mean.size()));
  return xs;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// approx-rate

/// Weighted L2 error of f3 (and the fast-rate approximator when the density
/// declares one) at each (N, t), on the evaluation window of the smallest N.
inline RunResult run_approx_rate(const Manifest& m, const fs::path& out, const RunOptions& = {}) {
  RunResult rr;
  const auto spec = m.density();
  const auto fast = m.fast_density();
  const auto& j = m.section("approx");
  std::vector<int> Ns = j.value("N", std::vector<int>{4, 8, 16, 32});
  require(!Ns.empty() && std::is_sorted(Ns.begin(), Ns.end()), "approx-rate: N list must be ascending");
  const auto ts = detail::doubles(j, "t", {0.25, 1.0, 3.0});
  const double beta = j.value("beta", spec.declared().beta);
  const bool use_fast = j.value("fast", true) && fast.has_value();
  const std::size_t panels = j.value("panels", std::size_t{40});
  const double window = PolyApproxConfig::defaults(Ns.front(), beta).cube_radius();

  detail::OutputDir dir(out, m.hash());
  auto os = dir.open("approx_rate.csv", rr);
  CsvWriter w(os, {"manifest_hash", "kind", "method", "N", "t", "value", "se", "r2"});
  std::map<std::pair<std::string, double>, std::vector<double>> series;
  for (int N : Ns) {
    const auto f3 = make_score_approximator(spec, PolyApproxConfig::defaults(N, beta), ts);
    std::optional<FastScoreApproximator> ff;
    if (use_fast) ff.emplace(make_fast_score_approximator(*fast, PolyApproxConfig::fast_defaults(N, beta, fast->C2)));
    for (double t : ts) {
      const double e = weighted_l2_score_error(f3, spec, t, window, panels);
      w.row({dir.hash(), "error", "f3", N, t, e, 0.0, ""});
      series[{"f3", t}].push_back(e);
      if (ff) {
        const double ef = weighted_l2_score_error(*ff, spec, t, window, panels);
        w.row({dir.hash(), "error", "fast", N, t, ef, 0.0, ""});
        series[{"fast", t}].push_back(ef);
      }
    }
  }
  if (Ns.size() >= 3) {
    const std::vector<double> sizes(Ns.begin(), Ns.end());
    for (const auto& [key, errs] : series) {
      const auto fit = rate_fit(sizes, errs);
      w.row({dir.hash(), "slope", key.first, "", key.second, fit.slope, "", fit.r2});
    }
  }
  os.close();
  SeedLog seeds(m.seed, m.kind);
  auto ss = dir.open("seeds.csv", rr);
  seeds.write(ss, dir.hash());
  return rr;
}

// ---------------------------------------------------------------------------
// train-risk and tv-sweep

struct SweepCell {
  std::size_t n = 0;
  std::size_t seed_index = 0;
  std::uint64_t train_seed = 0;
  bool failed = false;
  std::string failure;
  RiskEstimate risk;
  std::vector<double> tv;  // one entry per y in the grid
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<double> y_grid;
  std::vector<double> control_tv;  // exact-score sampler, per y
};

/// Trains one network per (n, seed index) and evaluates risk and/or TV.
/// Cell seeds depend only on (master, n, seed index).
inline SweepResult run_estimation_sweep(const Manifest& m, SeedLog& seeds, bool want_risk, bool want_tv,
                                        unsigned jobs = 1) {
  const auto spec = m.density();
  require(spec.guidance_dim() == 1, "sweep: needs d_y = 1");
  const auto& sw = m.section("sweep");
  const auto ns = sw.value("n", std::vector<std::size_t>{500, 2000, 8000});
  require(!ns.empty() && std::is_sorted(ns.begin(), ns.end()), "sweep: n list must be ascending");
  const std::size_t reps = sw.value("seeds", std::size_t{3});
  require(reps >= 1, "sweep: need at least one seed per n");
  const auto& ev = m.section("eval");
  const std::size_t risk_draws = ev.value("risk_draws", std::size_t{32 * 200});
  const std::size_t nsamp = ev.value("samples", std::size_t{10000});
  const std::size_t nref = ev.value("reference_samples", nsamp);
  const int bins = ev.value("bins", 64);
  const Bounds bounds = detail::tv_bounds(ev, spec.dim());
  SweepResult out;
  if (want_tv) {
    out.y_grid = detail::doubles(ev, "y_grid", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
    require(!out.y_grid.empty(), "sweep: empty y grid");
  }
  const auto nc = detail::net_config(m, spec);
  auto tc = detail::train_config(m);
  auto bc = detail::sampler_config(m, spec.dim());

  std::vector<std::vector<Vec>> refs;
  for (std::size_t k = 0; k < out.y_grid.size(); ++k) {
    const Vec y = Vec::Constant(1, out.y_grid[k]);
    refs.push_back(detail::direct_samples(spec, y, nref, seeds.derive("reference y=" + detail::num(y[0]), "reference", {k})));
  }
  if (want_tv && ev.value("control", true)) {
    for (std::size_t k = 0; k < out.y_grid.size(); ++k) {
      const Vec y = Vec::Constant(1, out.y_grid[k]);
      bc.seed = seeds.derive("control sampler y=" + detail::num(y[0]), "control", {k});
      auto exact = [&spec](const Vec& x, const Vec& yy, double t) { return spec.exact_score(x, yy, t); };
      const auto xs = batch_sample(exact, y, bc, nsamp, 0, jobs);
      out.control_tv.push_back(tv_histogram(xs, refs[k], bounds, bins));
    }
  }
  for (std::size_t ni = 0; ni < ns.size(); ++ni) {
    for (std::size_t r = 0; r < reps; ++r) {
      SweepCell cell;
      cell.n = ns[ni];
      cell.seed_index = r;
      const std::string tag = "n=" + std::to_string(cell.n) + ",rep=" + std::to_string(r);
      const auto ds = seeds.derive("dataset " + tag, "dataset", {cell.n, r});
      tc.seed = cell.train_seed = seeds.derive("train " + tag, "train", {cell.n, r});
      const auto es = seeds.derive("risk " + tag, "risk", {cell.n, r});
      try {
        Rng drng(ds);
        const auto data = sample_dataset(spec, cell.n, drng);
        const auto res = train(data, nc, tc);
        const ScoreNet& net = res.net;
        if (want_risk) {
          Rng rr(es);
          cell.risk = score_risk([&net](const Vec& x, const Vec& y, double t) { return net(x, y, t); }, spec, tc.t0,
                                 tc.T, risk_draws, rr);
        }
        for (std::size_t k = 0; k < out.y_grid.size(); ++k) {
          const Vec y = Vec::Constant(1, out.y_grid[k]);
          bc.seed = seeds.derive("sampler " + tag + ",y=" + detail::num(y[0]), "sampler", {cell.n, r, k});
          BlockScore bs = [&net, y](const Mat& X, double t) { return net.forward_batch(X, GuidanceMask::id, y, t); };
          const auto xs = batch_sample(bs, bc, nsamp, 0, jobs);
          cell.tv.push_back(tv_histogram(xs, refs[k], bounds, bins));
        }
      } catch (const numerical_abort& e) {
        cell.failed = true;
        cell.failure = e.what();
      }
      out.cells.push_back(std::move(cell));
    }
  }
  return out;
}

/// Mean over seeds (successful cells only) for each n, in ascending n.
inline std::vector<std::pair<std::size_t, double>> sweep_means(const SweepResult& r, bool tv) {
  std::map<std::size_t, std::pair<double, int>> acc;
  for (const auto& c : r.cells) {
    if (c.failed) continue;
    double v = c.risk.value;
    if (tv) {
      v = 0.0;
      for (double x : c.tv) v += x;
      v /= static_cast<double>(c.tv.size());
    }
    acc[c.n].first += v;
    acc[c.n].second += 1;
  }
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& [n, s] : acc) out.emplace_back(n, s.first / s.second);
  return out;
}

namespace detail {

inline void write_fit_row(CsvWriter& w, const std::string& hash, const std::vector<std::pair<std::size_t, double>>& means,
                          std::size_t ncols_before) {
  if (means.size() < 3) return;
  std::vector<double> sz, v;
  for (const auto& [n, x] : means) {
    sz.push_back(static_cast<double>(n));
    v.push_back(x);
  }
  const auto fit = rate_fit(sz, v);
  std::vector<CsvField> row{hash, "slope"};
  for (std::size_t i = 0; i < ncols_before; ++i) row.emplace_back("");
  row.emplace_back(fit.slope);
  row.emplace_back("");
  row.emplace_back(fit.r2);
  w.row(row);
}

}  // namespace detail

inline RunResult run_train_risk(const Manifest& m, const fs::path& out, const RunOptions& opt = {}) {
  RunResult rr;
  SeedLog seeds(m.seed, "estimation");
  const auto res = run_estimation_sweep(m, seeds, true, false, opt.jobs);
  detail::OutputDir dir(out, m.hash());
  auto os = dir.open("train_risk.csv", rr);
  CsvWriter w(os, {"manifest_hash", "kind", "n", "rep", "train_seed", "value", "se", "r2", "status"});
  for (const auto& c : res.cells)
    w.row({dir.hash(), "cell", static_cast<unsigned long long>(c.n), static_cast<unsigned long long>(c.seed_index),
           static_cast<unsigned long long>(c.train_seed), c.failed ? std::numeric_limits<double>::quiet_NaN() : c.risk.value,
           c.failed ? std::numeric_limits<double>::quiet_NaN() : c.risk.mc_std_error, "", c.failed ? "failed" : "ok"});
  const auto means = sweep_means(res, false);
  for (const auto& [n, v] : means)
    w.row({dir.hash(), "mean", static_cast<unsigned long long>(n), "", "", v, "", "", "ok"});
  detail::write_fit_row(w, dir.hash(), means, 3);
  os.close();
  auto ss = dir.open("seeds.csv", rr);
  seeds.write(ss, dir.hash());
  return rr;
}

inline RunResult run_tv_sweep(const Manifest& m, const fs::path& out, const RunOptions& opt = {}) {
  RunResult rr;
  SeedLog seeds(m.seed, "estimation");
  const auto res = run_estimation_sweep(m, seeds, false, true, opt.jobs);
  detail::OutputDir dir(out, m.hash());
  auto os = dir.open("tv_sweep.csv", rr);
  CsvWriter w(os, {"manifest_hash", "kind", "n", "rep", "y", "tv", "status"});
  for (std::size_t k = 0; k < res.control_tv.size(); ++k)
    w.row({dir.hash(), "control", "", "", res.y_grid[k], res.control_tv[k], "ok"});
  for (const auto& c : res.cells) {
    if (c.failed) {
      w.row({dir.hash(), "cell", static_cast<unsigned long long>(c.n), static_cast<unsigned long long>(c.seed_index), "",
             std::numeric_limits<double>::quiet_NaN(), "failed"});
      continue;
    }
    for (std::size_t k = 0; k < c.tv.size(); ++k)
      w.row({dir.hash(), "cell", static_cast<unsigned long long>(c.n), static_cast<unsigned long long>(c.seed_index),
             res.y_grid[k], c.tv[k], "ok"});
  }
  for (const auto& [n, v] : sweep_means(res, true))
    w.row({dir.hash(), "mean", static_cast<unsigned long long>(n), "", "", v, "ok"});
  os.close();
  auto ss = dir.open("seeds.csv", rr);
  seeds.write(ss, dir.hash());
  return rr;
}

// ---------------------------------------------------------------------------
// inverse

struct InverseRouteResult {
  std::string route;
  Vec sample_mean;
  std::vector<double> marginal_tv;
};

struct InverseResult {
  GaussianPosterior oracle;
  std::vector<InverseRouteResult> routes;
  std::vector<int> eigenvalue_warnings;
};

/// Posterior sampling with a Gaussian prior. Route "exact" uses the
/// prior-aware likelihood score, route "prior_free" the SVD formula.
inline InverseResult run_inverse_experiment(const Manifest& m, SeedLog& seeds, unsigned jobs = 1) {
  const auto& j = m.section("inverse");
  const LinearMeasurement meas = measurement_from_json(j.at("measurement"));
  const Vec y = io::vec_from_json(j.at("y"));
  const auto& jp = j.at("prior");
  const int d = meas.d();
  const GaussianPrior prior(io::vec_from_json(jp.at("mean")), io::mat_from_json(jp.at("cov"), d, d));
  const std::size_t nsamp = j.value("samples", std::size_t{10000});
  const std::size_t nref = j.value("reference_samples", nsamp);
  const int bins = j.value("bins", 64);
  const auto routes = j.value("routes", std::vector<std::string>{"exact", "prior_free"});
  auto bc = detail::sampler_config(m, d);

  InverseResult out;
  out.oracle = gaussian_posterior_oracle(meas, prior, y);
  out.eigenvalue_warnings = meas.eigenvalue_condition_violations();
  const auto ref = detail::gaussian_samples(out.oracle.mean, out.oracle.cov, nref, seeds.derive("posterior reference", "reference"));
  const Bounds b1 = detail::tv_bounds(j, 1);
  const GaussianPriorLikelihood exact_lik(meas, prior);
  for (const auto& route : routes) {
    require(route == "exact" || route == "prior_free", "inverse: unknown route " + route);
    bc.seed = seeds.derive("sampler route=" + route, "sampler", {fnv1a(route)});
    std::vector<Vec> xs;
    if (route == "exact") {
      auto f = [&](const Vec& x, const Vec& yy, double t) { return guided_score(exact_lik, prior, x, yy, t); };
      xs = batch_sample(f, y, bc, nsamp, 0, jobs);
    } else {
      auto f = [&](const Vec& x, const Vec& yy, double t) { return guided_score(meas, prior, x, yy, t); };
      xs = batch_sample(f, y, bc, nsamp, 0, jobs);
    }
    InverseRouteResult r;
    r.route = route;
    r.sample_mean = sample_mean(xs);
    for (int k = 0; k < d; ++k)
      r.marginal_tv.push_back(tv_histogram(marginal_samples(xs, k), marginal_samples(ref, k), b1, bins));
    out.routes.push_back(std::move(r));
  }
  return out;
}

inline RunResult run_inverse(const Manifest& m, const fs::path& out, const RunOptions& opt = {}) {
  RunResult rr;
  SeedLog seeds(m.seed, m.kind);
  const auto res = run_inverse_experiment(m, seeds, opt.jobs);
  detail::OutputDir dir(out, m.hash());
  {
    auto os = dir.open("posterior_oracle.csv", rr);
    write_posterior_csv(os, res.oracle);
  }
  auto os = dir.open("inverse.csv", rr);
  CsvWriter w(os, {"manifest_hash", "route", "coordinate", "sample_mean", "oracle_mean", "abs_error", "marginal_tv"});
  for (const auto& r : res.routes)
    for (Eigen::Index k = 0; k < r.sample_mean.size(); ++k)
      w.row({dir.hash(), r.route, static_cast<long long>(k), r.sample_mean[k], res.oracle.mean[k],
             std::abs(r.sample_mean[k] - res.oracle.mean[k]), r.marginal_tv[static_cast<std::size_t>(k)]});
  os.close();
  auto ss = dir.open("seeds.csv", rr);
  seeds.write(ss, dir.hash());
  if (!res.eigenvalue_warnings.empty())
    rr.summary = "warning: " + std::to_string(res.eigenvalue_warnings.size()) +
                 " eigenvalue(s) of H H^T outside [sigma2, sigma2^2]";
  return rr;
}

// ---------------------------------------------------------------------------
// reward

struct RewardFn {
  std::string type = "clamp";
  double lo = -10.0, hi = 10.0, value = 0.0;

  double operator()(const Vec& x) const {
    if (type == "constant") return value;
    return std::clamp(x[0], lo, hi);
  }
};

struct RewardResult {
  std::string method;
  SubOptResult subopt;
};

inline std::vector<RewardResult> run_reward_experiment(const Manifest& m, SeedLog& seeds, unsigned jobs = 1) {
  const auto spec = m.density();
  require(spec.guidance_dim() == 1, "reward: needs d_y = 1");
  const auto& j = m.section("reward");
  const double a = j.value("target", 0.5);
  const double L = j.value("L", 10.0);
  RewardFn r;
  r.type = j.value("type", r.type);
  require(r.type == "clamp" || r.type == "constant", "reward: type must be clamp or constant");
  r.lo = j.value("lo", r.lo);
  r.hi = j.value("hi", r.hi);
  r.value = j.value("value", r.value);
  const std::size_t nsamp = j.value("samples", std::size_t{10000});
  const auto methods = j.value("methods", std::vector<std::string>{"exact", "trained"});
  auto bc = detail::sampler_config(m, spec.dim());
  const Vec y = Vec::Constant(1, a);

  std::vector<RewardResult> out;
  for (const auto& method : methods) {
    require(method == "exact" || method == "trained", "reward: unknown method " + method);
    std::vector<Vec> xs;
    if (method == "exact") {
      bc.seed = seeds.derive("sampler exact", "sampler", {0});
      auto f = [&spec](const Vec& x, const Vec& yy, double t) { return spec.exact_score(x, yy, t); };
      xs = batch_sample(f, y, bc, nsamp, 0, jobs);
    } else {
      const std::size_t n = j.value("n", std::size_t{10000});
      Rng drng(seeds.derive("dataset", "dataset", {n}));
      const auto data = sample_dataset(spec, n, drng);
      auto tc = detail::train_config(m);
      tc.seed = seeds.derive("train", "train", {n});
      const auto res = train(data, detail::net_config(m, spec), tc);
      const ScoreNet& net = res.net;
      bc.seed = seeds.derive("sampler trained", "sampler", {1});
      BlockScore bs = [&net, y](const Mat& X, double t) { return net.forward_batch(X, GuidanceMask::id, y, t); };
      xs = batch_sample(bs, bc, nsamp, 0, jobs);
    }
    out.push_back({method, subopt(xs, r, a, L)});
  }
  return out;
}

inline RunResult run_reward(const Manifest& m, const fs::path& out, const RunOptions& opt = {}) {
  RunResult rr;
  SeedLog seeds(m.seed, m.kind);
  const auto res = run_reward_experiment(m, seeds, opt.jobs);
  detail::OutputDir dir(out, m.hash());
  auto os = dir.open("reward.csv", rr);
  CsvWriter w(os, {"manifest_hash", "method", "target", "subopt", "max_abs_reward", "reward_bounded"});
  const double a = m.section("reward").value("target", 0.5);
  for (const auto& r : res) {
    w.row({dir.hash(), r.method, a, r.subopt.value, r.subopt.max_abs_reward, r.subopt.reward_bounded ? "true" : "false"});
    if (!r.subopt.reward_bounded) rr.exit_code = 1;
  }
  os.close();
  auto ss = dir.open("seeds.csv", rr);
  seeds.write(ss, dir.hash());
  if (rr.exit_code) rr.summary = "reward exceeded its declared bound";
  return rr;
}

// ---------------------------------------------------------------------------
// validate

inline RunResult run_validate(const Manifest& m, const fs::path& out, const RunOptions& = {}) {
  RunResult rr;
  const auto& j = m.section("validate");
  const double radius = j.value("radius", 5.0);
  const int res = j.value("resolution", 64);
  const auto fast = m.fast_density();
  const ValidationReport rep = fast ? validate_assumptions(*fast, radius, res)
                                    : validate_assumptions(m.density(), radius, res);
  detail::OutputDir dir(out, m.hash());
  auto os = dir.open("validation.csv", rr);
  CsvWriter w(os, {"manifest_hash", "check", "value", "pass"});
  auto b = [](bool v) { return v ? "true" : "false"; };
  w.row({dir.hash(), "envelope_max_violation", rep.envelope_max_violation, b(rep.envelope_pass)});
  w.row({dir.hash(), "weights", "", b(rep.weights_pass)});
  w.row({dir.hash(), "covariance", "", b(rep.covariance_pass)});
  if (rep.f_min) {
    w.row({dir.hash(), "f_min", *rep.f_min, b(*rep.fast_rate_pass)});
    w.row({dir.hash(), "f_max", *rep.f_max, b(*rep.fast_rate_pass)});
  }
  w.row({dir.hash(), "grid_points", static_cast<unsigned long long>(rep.grid_points), b(rep.pass())});
  rr.exit_code = rep.pass() ? 0 : 1;
  rr.summary = rep.pass() ? "assumptions hold on the validation grid" : "assumption check failed";
  return rr;
}

// ---------------------------------------------------------------------------
// Plots: pure functions of a CSV file.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw precondition_error("csv: no column " + name);
  }
};

inline CsvTable read_csv(const fs::path& p) {
  std::ifstream in(p);
  require(static_cast<bool>(in), "cannot open " + p.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

/// Log-log polyline plot of y_col against x_col, one series per distinct
/// combination of group_cols, using rows whose filter_col equals filter_val.
inline void svg_loglog(const CsvTable& t, std::ostream& os, const std::string& x_col, const std::string& y_col,
                       const std::vector<std::string>& group_cols, const std::string& filter_col,
                       const std::string& filter_val, const std::string& title) {
  const int xi = t.column(x_col), yi = t.column(y_col), fi = t.column(filter_col);
  std::vector<int> gis;
  for (const auto& g : group_cols) gis.push_back(t.column(g));
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const auto& r : t.rows) {
    if (r[static_cast<std::size_t>(fi)] != filter_val) continue;
    const double x = std::stod(r[static_cast<std::size_t>(xi)]), y = std::stod(r[static_cast<std::size_t>(yi)]);
    std::string key;
    for (std::size_t k = 0; k < gis.size(); ++k)
      key += (k ? " " : "") + group_cols[k] + "=" + r[static_cast<std::size_t>(gis[k])];
    if (x > 0 && y > 0 && std::isfinite(y)) series[key].emplace_back(std::log10(x), std::log10(y));
  }
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& [g, pts] : series)
    for (const auto& [x, y] : pts) {
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (series.empty()) x0 = y0 = 0, x1 = y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double W = 480, H = 320, pad = 48;
  auto px = [&](double x) { return pad + (x - x0) / (x1 - x0) * (W - 2 * pad); };
  auto py = [&](double y) { return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<text x=\"" << pad << "\" y=\"20\" font-size=\"13\">" << title << "</text>\n";
  os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << W - 2 * pad << "\" height=\"" << H - 2 * pad
     << "\" fill=\"none\" stroke=\"#888\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" font-size=\"11\">log10 " << x_col << "</text>\n";
  os << "<text x=\"4\" y=\"" << H / 2 << "\" font-size=\"11\">log10 " << y_col << "</text>\n";
  std::size_t c = 0;
  for (const auto& [g, pts] : series) {
    const char* col = colors[c % 6];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" points=\"";
    for (const auto& [x, y] : pts) os << fmt_double(px(x)) << ',' << fmt_double(py(y)) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << W - pad + 4 << "\" y=\"" << pad + 14 * (c + 1) << "\" font-size=\"10\" fill=\"" << col << "\">"
       << g << "</text>\n";
    ++c;
  }
  os << "</svg>\n";
}

/// Writes the plots belonging to an experiment's CSVs in `dir`.
inline std::vector<fs::path> write_plots(const std::string& kind, const fs::path& dir) {
  std::vector<fs::path> out;
  auto emit = [&](const std::string& csv, const std::string& svg, const std::string& x, const std::string& y,
                  const std::vector<std::string>& g, const std::string& fcol, const std::string& fval, const std::string& title) {
    const auto t = read_csv(dir / csv);
    std::ofstream os(dir / svg, std::ios::binary);
    svg_loglog(t, os, x, y, g, fcol, fval, title);
    out.push_back(dir / svg);
  };
  if (kind == "approx-rate") emit("approx_rate.csv", "approx_rate.svg", "N", "value", {"method", "t"}, "kind", "error", "weighted L2 error vs N");
  if (kind == "train-risk") emit("train_risk.csv", "train_risk.svg", "n", "value", {"kind"}, "kind", "mean", "score risk vs n");
  if (kind == "tv-sweep") emit("tv_sweep.csv", "tv_sweep.svg", "n", "tv", {"kind"}, "kind", "mean", "mean TV vs n");
  return out;
}

// ---------------------------------------------------------------------------

inline RunResult run_experiment(const Manifest& m, const fs::path& out, const RunOptions& opt = {}) {
  RunResult rr;
  if (m.kind == "approx-rate") rr = run_approx_rate(m, out, opt);
  else if (m.kind == "train-risk") rr = run_train_risk(m, out, opt);
  else if (m.kind == "tv-sweep") rr = run_tv_sweep(m, out, opt);
  else if (m.kind == "inverse") rr = run_inverse(m, out, opt);
  else if (m.kind == "reward") rr = run_reward(m, out, opt);
  else if (m.kind == "validate") rr = run_validate(m, out, opt);
  else throw precondition_error("unknown experiment kind " + m.kind);
  if (m.doc.value("plots", false)) {
    auto plots = write_plots(m.kind, out);
    rr.files.insert(rr.files.end(), plots.begin(), plots.end());
  }
  return rr;
}

}  // namespace cdiff
