// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "cdiff/diffused_poly.hpp"
#include "cdiff/eval.hpp"
#include "cdiff/experiments.hpp"
#include "cdiff/sampler.hpp"
#include "cdiff/trainer.hpp"
#include "moment_oracle.hpp"
#include "oracles.hpp"
#include "specs.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace cdiff;
using specs::v1;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const fs::path kManifests = fs::path(CDIFF_SOURCE_DIR) / "manifests";
const fs::path kScratch = fs::temp_directory_path() / "cdiff_acceptance";

// ---------------------------------------------------------------------------
// Shared manifest runs: every shipped manifest is run twice. Criterion 9
// compares the two runs; criteria 6-8 read the first run's CSVs.

struct ManifestRun {
  fs::path dir_a, dir_b;
  std::vector<fs::path> files;  // relative names
  double seconds = 0.0;
  int exit_code = 0;
};

std::map<std::string, ManifestRun>& runs() {
  static std::map<std::string, ManifestRun> r;
  return r;
}

const ManifestRun& run_manifest(const std::string& name) {
  auto it = runs().find(name);
  if (it != runs().end()) return it->second;
  const Manifest m = load_manifest((kManifests / (name + ".json")).string());
  ManifestRun mr;
  mr.dir_a = kScratch / "a" / name;
  mr.dir_b = kScratch / "b" / name;
  fs::remove_all(mr.dir_a);
  fs::remove_all(mr.dir_b);
  const auto t0 = Clock::now();
  const auto ra = run_experiment(m, mr.dir_a);
  mr.seconds = seconds_since(t0);
  run_experiment(m, mr.dir_b);
  mr.exit_code = ra.exit_code;
  for (const auto& f : ra.files) mr.files.push_back(f.filename());
  return runs().emplace(name, mr).first->second;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double num(const std::string& s) { return std::stod(s); }

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const std::vector<std::pair<std::string, ConditionalDensitySpec>> list{
      {"mixture_1d", specs::mixture_1d()}, {"mixture_2d", specs::mixture_2d()}, {"mixture_2d_y2", specs::mixture_2d_y2()}};
  Rng rng(101);
  double worst = 0.0;
  for (const auto& [name, spec] : list) {
    for (int i = 0; i < 200; ++i) {
      const Vec y = rng.uniform_vec(spec.guidance_dim());
      const double t = std::exp(rng.uniform(std::log(0.01), std::log(10.0)));
      const Vec x = perturb(spec.sample(y, rng), t, rng);
      const Vec fd =
          oracle::fd_gradient([&](const Vec& z) { return spec.log_diffused_density(z, y, t); }, x, 1e-5);
      worst = std::max(worst, oracle::rel_err(spec.exact_score(x, y, t), fd, 1e-3));
    }
  }
  return {worst < 1e-4, "worst relative error " + fmt("%.3g", worst) + " over 600 points (threshold 1e-4)"};
}

Outcome criterion2() {
  Rng rng(202);
  double worst = 0.0;
  int nonzero = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const int N = 4 << rng.index(3);
    const auto cfg = PolyApproxConfig::defaults(N, 2.0);
    const double x = rng.uniform(-cfg.cube_radius(), cfg.cube_radius());
    const int n = static_cast<int>(rng.index(4)), k = static_cast<int>(rng.index(21));
    const int v = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(N)));
    const double t = std::exp(rng.uniform(std::log(0.05), std::log(5.0)));
    const double g = g_moment(x, n, v, k, t, cfg);
    const double ref = oracle::g_quadrature(x, n, v, k, t, cfg, false);
    if (ref == 0.0) {
      if (g != 0.0) worst = std::max(worst, 1.0);
      continue;
    }
    ++nonzero;
    worst = std::max(worst, oracle::rel_err(g, ref));
  }
  return {worst < 1e-6, "worst relative error " + fmt("%.3g", worst) + " over 500 tuples (" +
                            std::to_string(nonzero) + " with nonzero support; threshold 1e-6)"};
}

Outcome criterion3() {
  const auto spec = specs::bump_base();
  const std::vector<int> Ns{4, 8, 16, 32};
  const std::vector<double> ts{0.25, 1.0, 3.0};
  const double window = PolyApproxConfig::defaults(Ns.front(), 2.0).cube_radius();
  std::map<double, std::vector<double>> err;
  for (int N : Ns) {
    const auto f3 = make_score_approximator(spec, PolyApproxConfig::defaults(N, 2.0), ts);
    for (double t : ts) err[t].push_back(weighted_l2_score_error(f3, spec, t, window));
  }
  bool ok = true;
  std::string detail;
  for (double t : ts) {
    const auto& e = err[t];
    for (std::size_t i = 0; i + 1 < e.size(); ++i) ok = ok && e[i + 1] < e[i];
    ok = ok && e.back() <= e.front() / 3.0;
    detail += "t=" + fmt("%g", t) + ": ";
    for (double v : e) detail += fmt("%.3g ", v);
  }
  return {ok, "f3 weighted-L2 errors at N=4,8,16,32; " + detail};
}

Outcome criterion4() {
  const auto fast = specs::bump_fast_rate();
  const int N = 16;
  const double t = 1.0;
  const auto f3 = make_score_approximator(fast.base, PolyApproxConfig::defaults(N, 2.0), {t});
  const auto ff = make_fast_score_approximator(fast, PolyApproxConfig::fast_defaults(N, 2.0, fast.C2));
  const double window = PolyApproxConfig::defaults(N, 2.0).cube_radius();
  const double e3 = weighted_l2_score_error(f3, fast.base, t, window);
  const double ef = weighted_l2_score_error(ff, fast.base, t, window);
  return {ef <= 0.7 * e3, "fast " + fmt("%.3g", ef) + " vs f3 " + fmt("%.3g", e3) + " (ratio " +
                              fmt("%.3f", ef / e3) + ", threshold 0.7)"};
}

ConditionalDensitySpec unit_location() {
  return gaussian_location_family(1, 1, Vec::Zero(1), Mat::Identity(1, 1), 1.0);
}

Outcome criterion5() {
  const auto spec = unit_location();
  Rng drng(derive_seed(505, "dataset"));
  const auto data = sample_dataset(spec, 10000, drng);
  ScoreNetConfig nc;
  nc.t0 = 0.05;
  nc.T = 3.0;
  TrainConfig tc;
  tc.seed = derive_seed(505, "train");
  const auto res = train(data, nc, tc);
  const ScoreNet& net = res.net;
  auto cand = [&net](const Vec& x, const Vec& y, double t) { return net(x, y, t); };
  auto zero = [](const Vec&, const Vec&, double) { return Vec(Vec::Zero(1)); };
  Rng r1(derive_seed(505, "risk")), r2(derive_seed(505, "risk"));
  const auto risk = score_risk(cand, spec, 0.05, 3.0, 6400, r1);
  const auto base = score_risk(zero, spec, 0.05, 3.0, 6400, r2);

  BackwardConfig bc;
  bc.T = 3.0;
  bc.t0 = 0.05;
  bc.steps = 200;
  const Bounds bounds{v1(-5.0), v1(6.0)};
  std::vector<double> tvs;
  for (int k = 1; k <= 9; ++k) {
    const Vec y = v1(0.1 * k);
    bc.seed = derive_seed(505, {std::uint64_t{1}, static_cast<std::uint64_t>(k)});
    BlockScore bs = [&net, y](const Mat& X, double t) { return net.forward_batch(X, GuidanceMask::id, y, t); };
    const auto xs = batch_sample(bs, bc, 10000);
    Rng rr(derive_seed(505, {std::uint64_t{2}, static_cast<std::uint64_t>(k)}));
    std::vector<Vec> ref;
    for (int i = 0; i < 200000; ++i) ref.push_back(spec.sample(y, rr));
    tvs.push_back(tv_histogram(xs, ref, bounds, 64));
  }
  double m = 0, s2 = 0;
  for (double v : tvs) m += v;
  m /= static_cast<double>(tvs.size());
  for (double v : tvs) s2 += (v - m) * (v - m);
  const double se = std::sqrt(s2 / (static_cast<double>(tvs.size()) - 1.0) / static_cast<double>(tvs.size()));
  const bool risk_ok = risk.upper() <= 0.1 * base.value;
  const bool tv_ok = m + 2 * se <= 0.1;
  return {risk_ok && tv_ok, "risk " + fmt("%.4g", risk.value) + " +/- " + fmt("%.2g", risk.mc_std_error) +
                                " vs zero-net " + fmt("%.4g", base.value) + "; mean TV " + fmt("%.4f", m) +
                                " +/- " + fmt("%.4f", se) + " over y=0.1..0.9"};
}

Outcome criterion6() {
  const auto& mr = run_manifest("inverse");
  const auto t = read_csv(mr.dir_a / "inverse.csv");
  const int ri = t.column("route"), ei = t.column("abs_error"), ti = t.column("marginal_tv");
  bool ok = mr.seconds < 300;
  std::string detail;
  for (const auto& row : t.rows) {
    const bool exact = row[ri] == "exact";
    if (exact) ok = ok && num(row[ei]) <= 0.05 && num(row[ti]) <= 0.08;
    detail += row[ri] + (exact ? "" : " (informational)") + ": |mean err| " + fmt("%.4f", num(row[ei])) +
              ", TV " + fmt("%.4f", num(row[ti])) + "; ";
  }
  return {ok && !t.rows.empty(), detail + "run " + fmt("%.0f", mr.seconds) + " s"};
}

Outcome criterion7() {
  const auto& mr = run_manifest("reward");
  const auto t = read_csv(mr.dir_a / "reward.csv");
  const int mi = t.column("method"), si = t.column("subopt");
  bool ok = mr.seconds < 900 && t.rows.size() == 2;
  std::string detail;
  for (const auto& row : t.rows) {
    const double v = num(row[si]);
    ok = ok && std::abs(v) < (row[mi] == "exact" ? 0.03 : 0.1);
    detail += row[mi] + " SubOpt " + fmt("%.4f", v) + "; ";
  }
  return {ok, detail + "run " + fmt("%.0f", mr.seconds) + " s"};
}

Outcome criterion8() {
  const auto& risk = run_manifest("train_risk");
  const auto& tv = run_manifest("tv_sweep");
  const auto rt = read_csv(risk.dir_a / "train_risk.csv");
  const auto tt = read_csv(tv.dir_a / "tv_sweep.csv");
  auto means = [](const CsvTable& t, const std::string& col) {
    std::vector<double> v;
    const int ki = t.column("kind"), vi = t.column(col);
    for (const auto& row : t.rows)
      if (row[ki] == "mean") v.push_back(num(row[vi]));
    return v;
  };
  const auto rm = means(rt, "value"), tm = means(tt, "tv");
  bool ok = rm.size() == 3 && tm.size() == 3;
  for (std::size_t i = 0; ok && i + 1 < 3; ++i) ok = rm[i + 1] < rm[i] && tm[i + 1] < tm[i];
  double slope = 0, r2 = 0;
  const int ki = rt.column("kind");
  for (const auto& row : rt.rows)
    if (row[ki] == "slope") {
      slope = num(row[rt.column("value")]);
      r2 = num(row[rt.column("r2")]);
    }
  ok = ok && slope < 0 && r2 >= 0.7 && risk.seconds + tv.seconds < 2700;
  std::string detail = "risk means";
  for (double v : rm) detail += " " + fmt("%.4g", v);
  detail += "; TV means";
  for (double v : tm) detail += " " + fmt("%.4f", v);
  detail += "; slope " + fmt("%.3f", slope) + ", r2 " + fmt("%.3f", r2) + "; runs " +
            fmt("%.0f", risk.seconds + tv.seconds) + " s";
  return {ok, detail};
}

Outcome criterion9() {
  std::size_t compared = 0;
  std::vector<std::string> mismatched;
  for (const auto& name : {"approx_rate", "train_risk", "tv_sweep", "inverse", "reward", "validate"}) {
    const auto& mr = run_manifest(name);
    for (const auto& f : mr.files) {
      if (f.extension() != ".csv") continue;
      ++compared;
      if (slurp(mr.dir_a / f) != slurp(mr.dir_b / f)) mismatched.push_back(std::string(name) + "/" + f.string());
    }
  }
  std::string detail = std::to_string(compared) + " CSV files compared across two runs of 6 manifests";
  for (const auto& m : mismatched) detail += "; differs: " + m;
  return {mismatched.empty() && compared >= 12, detail};
}

Outcome criterion10() {
  const auto spec = unit_location();
  Rng drng(derive_seed(1010, "dataset"));
  const auto data = sample_dataset(spec, 10000, drng);
  ScoreNetConfig nc;
  nc.t0 = 0.05;
  nc.T = 3.0;
  TrainConfig tc;
  tc.seed = derive_seed(1010, "train");
  tc.mask = MaskPolicy::always_null;
  const auto res = train(data, nc, tc);
  const ScoreNet& net = res.net;
  auto cand = [&net](const Vec& x, double t) { return net.unconditional(x, t); };
  auto zero = [](const Vec&, double) { return Vec(Vec::Zero(1)); };
  Rng r1(derive_seed(1010, "risk")), r2(derive_seed(1010, "risk"));
  const auto e = unconditional_score_risk(cand, spec, 0.05, 3.0, 6400, r1);
  const auto b = unconditional_score_risk(zero, spec, 0.05, 3.0, 6400, r2);
  return {e.upper() <= 0.1 * b.value, "null-branch error " + fmt("%.4g", e.value) + " +/- " +
                                          fmt("%.2g", e.mc_std_error) + " vs zero-net " + fmt("%.4g", b.value)};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},  {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
  const std::map<int, double> budget{{1, 10}, {2, 30}, {3, 300}, {4, 300}, {5, 900}, {10, 900}};
  int failed = 0;
  for (const auto& [k, fn] : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (budget.count(k) && secs > budget.at(k)) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", budget.at(k)) + " s budget";
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << ": " << o.detail << " [" << fmt("%.1f", secs)
              << " s]" << std::endl;
  }
  std::cout << (10 - failed) << "/10 criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
