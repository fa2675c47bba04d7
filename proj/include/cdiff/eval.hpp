#pragma once

// Estimators: weighted-L2 score risk, histogram total variation, reward
// sub-optimality, posterior-mean error and log-log rate fits.

#include "cdiff/common.hpp"
#include "cdiff/csv.hpp"
#include "cdiff/densities.hpp"
#include "cdiff/quadrature.hpp"
#include "cdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace cdiff {

struct RiskEstimate {
  double value = 0.0;
  double mc_std_error = 0.0;
  std::size_t t_nodes = 0;
  std::size_t x_draws_per_t = 0;

  double upper(double k = 2.0) const { return value + k * mc_std_error; }
};

struct MixedRiskEstimate {
  RiskEstimate conditional;    // R
  RiskEstimate unconditional;  // R0
  RiskEstimate mixed;          // (R + R0)/2
};

inline constexpr std::size_t kRiskStrata = 32;

namespace detail {

/// Stratified mean and standard error from per-stratum samples.
inline RiskEstimate stratified_estimate(const std::vector<std::vector<double>>& strata) {
  RiskEstimate r;
  r.t_nodes = strata.size();
  r.x_draws_per_t = strata.empty() ? 0 : strata.front().size();
  const double H = static_cast<double>(strata.size());
  double var = 0.0;
  for (const auto& s : strata) {
    const double n = static_cast<double>(s.size());
    double m = 0.0;
    for (double v : s) m += v;
    m /= n;
    r.value += m / H;
    if (s.size() > 1) {
      double ss = 0.0;
      for (double v : s) ss += (v - m) * (v - m);
      var += ss / (n - 1.0) / n / (H * H);
    }
  }
  r.mc_std_error = std::sqrt(var);
  return r;
}

inline void check_output(const Vec& v, const Vec& x, const Vec& y, double t, const char* who) {
  if (!v.allFinite()) {
    std::string where = std::string(who) + ": non-finite candidate output at t = " + fmt_double(t) + ", x = [";
    for (Eigen::Index i = 0; i < x.size(); ++i) where += (i ? " " : "") + fmt_double(x[i]);
    where += "], y = [";
    for (Eigen::Index i = 0; i < y.size(); ++i) where += (i ? " " : "") + fmt_double(y[i]);
    throw numerical_abort(where + "]");
  }
}

/// Draws (t, y, x_t) on kRiskStrata strata and calls visit(stratum, y, x_t, t).
template <class Visit>
void risk_draws(const ConditionalDensitySpec& spec, double t0, double T, std::size_t draws, Rng& rng,
                Visit&& visit) {
  require(draws >= 1, "score_risk: draws must be at least 1");
  require(t0 > 0 && T > t0, "score_risk: need 0 < t0 < T");
  const std::size_t H = std::min(kRiskStrata, draws);
  const std::size_t per = std::max<std::size_t>(1, draws / H);
  const double w = (T - t0) / static_cast<double>(H);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t i = 0; i < per; ++i) {
      const double t = t0 + w * (static_cast<double>(h) + rng.uniform());
      const Vec y = rng.uniform_vec(spec.guidance_dim());
      const Vec x0 = spec.sample(y, rng);
      const Vec xt = perturb(x0, t, rng);
      visit(h, y, xt, t);
    }
  }
}

}  // namespace detail

/// R(s) = (1/(T - t0)) int E |s(x_t, y, t) - grad log p_t(x_t | y)|^2 dt with
/// (x_0, y) from the spec and t stratified; `draws` is the total draw count.
template <class Candidate, class Oracle>
RiskEstimate score_risk(const Candidate& candidate, const Oracle& oracle, const ConditionalDensitySpec& spec,
                        double t0, double T, std::size_t draws, Rng& rng) {
  std::vector<std::vector<double>> strata(std::min(kRiskStrata, std::max<std::size_t>(draws, 1)));
  detail::risk_draws(spec, t0, T, draws, rng, [&](std::size_t h, const Vec& y, const Vec& xt, double t) {
    const Vec c = candidate(xt, y, t);
    detail::check_output(c, xt, y, t, "score_risk");
    strata[h].push_back((c - oracle(xt, y, t)).squaredNorm());
  });
  return detail::stratified_estimate(strata);
}

template <class Candidate>
RiskEstimate score_risk(const Candidate& candidate, const ConditionalDensitySpec& spec, double t0, double T,
                        std::size_t draws, Rng& rng) {
  return score_risk(
      candidate, [&spec](const Vec& x, const Vec& y, double t) { return spec.exact_score(x, y, t); }, spec, t0,
      T, draws, rng);
}

/// Risk of the null branch against the marginal score grad log p_t(x).
template <class Candidate>
RiskEstimate unconditional_score_risk(const Candidate& candidate_null, const ConditionalDensitySpec& spec,
                                      double t0, double T, std::size_t draws, Rng& rng) {
  std::vector<std::vector<double>> strata(std::min(kRiskStrata, std::max<std::size_t>(draws, 1)));
  detail::risk_draws(spec, t0, T, draws, rng, [&](std::size_t h, const Vec& y, const Vec& xt, double t) {
    const Vec c = candidate_null(xt, t);
    detail::check_output(c, xt, y, t, "unconditional_score_risk");
    strata[h].push_back((c - spec.marginal_score(xt, t)).squaredNorm());
  });
  return detail::stratified_estimate(strata);
}

/// R, R0 and R_star = (R + R0)/2 on shared draws.
template <class Cond, class Null>
MixedRiskEstimate mixed_score_risk(const Cond& candidate, const Null& candidate_null,
                                   const ConditionalDensitySpec& spec, double t0, double T, std::size_t draws,
                                   Rng& rng) {
  const std::size_t H = std::min(kRiskStrata, std::max<std::size_t>(draws, 1));
  std::vector<std::vector<double>> sc(H), su(H), sm(H);
  detail::risk_draws(spec, t0, T, draws, rng, [&](std::size_t h, const Vec& y, const Vec& xt, double t) {
    const Vec c = candidate(xt, y, t);
    const Vec u = candidate_null(xt, t);
    detail::check_output(c, xt, y, t, "mixed_score_risk");
    detail::check_output(u, xt, y, t, "mixed_score_risk");
    const double a = (c - spec.exact_score(xt, y, t)).squaredNorm();
    const double b = (u - spec.marginal_score(xt, t)).squaredNorm();
    sc[h].push_back(a);
    su[h].push_back(b);
    sm[h].push_back(0.5 * a + 0.5 * b);
  });
  return {detail::stratified_estimate(sc), detail::stratified_estimate(su), detail::stratified_estimate(sm)};
}

/// Deterministic weighted L2 error at fixed t for d = 1:
///   int int p_t(x|y) |c(x,y,t) - score(x,y,t)|^2 dx dy / int int p_t(x|y) dx dy
/// over x in [-radius, radius] and y in [0, 1]^{d_y}, d_y <= 1.
template <class Candidate>
double weighted_l2_score_error(const Candidate& candidate, const ConditionalDensitySpec& spec, double t,
                               double radius, std::size_t panels = 40) {
  require(spec.dim() == 1 && spec.guidance_dim() <= 1, "weighted_l2_score_error: needs d = 1, d_y <= 1");
  require(radius > 0 && panels >= 1, "weighted_l2_score_error: bad window");
  const auto xr = composite_gauss_legendre<10>(-radius, radius, panels);
  QuadratureRule yr{{0.0}, {1.0}};
  if (spec.guidance_dim() == 1) yr = gauss_legendre<10>(0.0, 1.0);
  double err = 0.0, mass = 0.0;
  for (std::size_t j = 0; j < yr.nodes.size(); ++j) {
    const Vec y = spec.guidance_dim() == 1 ? Vec::Constant(1, yr.nodes[j]) : Vec(0);
    for (std::size_t i = 0; i < xr.nodes.size(); ++i) {
      const Vec x = Vec::Constant(1, xr.nodes[i]);
      const double w = xr.weights[i] * yr.weights[j] * spec.diffused_density(x, y, t);
      const Vec c = candidate(x, y, t);
      detail::check_output(c, x, y, t, "weighted_l2_score_error");
      err += w * (c - spec.exact_score(x, y, t)).squaredNorm();
      mass += w;
    }
  }
  return err / mass;
}

// ---------------------------------------------------------------------------
// Total variation

struct Bounds {
  Vec lo;
  Vec hi;
};

/// Half the L1 distance between histograms on a regular grid over `bounds`.
/// Each axis gets one overflow cell per side.
inline double tv_histogram(const std::vector<Vec>& A, const std::vector<Vec>& B, const Bounds& bounds,
                           int bins) {
  require(!A.empty() && !B.empty(), "tv_histogram: empty sample set");
  require(bins >= 2, "tv_histogram: bins must be at least 2");
  const auto d = bounds.lo.size();
  require(d >= 1 && d <= 2 && bounds.hi.size() == d, "tv_histogram: supports d in {1, 2}");
  require((bounds.hi - bounds.lo).minCoeff() > 0, "tv_histogram: empty bounds");
  const int side = bins + 2;
  auto cell = [&](const Vec& x) {
    require(x.size() == d, "tv_histogram: sample has wrong dimension");
    std::size_t idx = 0;
    for (Eigen::Index k = 0; k < d; ++k) {
      int c;
      if (x[k] < bounds.lo[k]) {
        c = 0;
      } else if (x[k] >= bounds.hi[k]) {
        c = bins + 1;
      } else {
        c = 1 + static_cast<int>((x[k] - bounds.lo[k]) / (bounds.hi[k] - bounds.lo[k]) * bins);
        c = std::min(c, bins);
      }
      idx = idx * static_cast<std::size_t>(side) + static_cast<std::size_t>(c);
    }
    return idx;
  };
  std::size_t cells = 1;
  for (Eigen::Index k = 0; k < d; ++k) cells *= static_cast<std::size_t>(side);
  std::vector<double> h(cells, 0.0);
  const double wa = 1.0 / static_cast<double>(A.size()), wb = 1.0 / static_cast<double>(B.size());
  for (const auto& x : A) h[cell(x)] += wa;
  for (const auto& x : B) h[cell(x)] -= wb;
  double s = 0.0;
  for (double v : h) s += std::abs(v);
  return std::clamp(0.5 * s, 0.0, 1.0);
}

/// Coordinate k of each sample as a one-dimensional sample set.
inline std::vector<Vec> marginal_samples(const std::vector<Vec>& xs, Eigen::Index k) {
  std::vector<Vec> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(Vec::Constant(1, x[k]));
  return out;
}

// ---------------------------------------------------------------------------
// Rewards and posteriors

struct SubOptResult {
  double value = 0.0;
  double max_abs_reward = 0.0;
  bool reward_bounded = true;  // |r(x)| <= L on every sample
};

/// a - mean_i r(x_i).
template <class Reward>
SubOptResult subopt(const std::vector<Vec>& samples, const Reward& reward, double a, double L) {
  require(!samples.empty(), "subopt: empty sample set");
  require(L > 0, "subopt: reward bound must be positive");
  SubOptResult out;
  double acc = 0.0;
  for (const auto& x : samples) {
    const double r = reward(x);
    out.max_abs_reward = std::max(out.max_abs_reward, std::abs(r));
    acc += r;
  }
  out.reward_bounded = out.max_abs_reward <= L;
  out.value = a - acc / static_cast<double>(samples.size());
  return out;
}

inline Vec sample_mean(const std::vector<Vec>& xs) {
  require(!xs.empty(), "sample_mean: empty sample set");
  Vec m = Vec::Zero(xs.front().size());
  for (const auto& x : xs) m += x;
  return m / static_cast<double>(xs.size());
}

inline Vec sample_variance(const std::vector<Vec>& xs) {
  require(xs.size() >= 2, "sample_variance: need two samples");
  const Vec m = sample_mean(xs);
  Vec v = Vec::Zero(m.size());
  for (const auto& x : xs) v += (x - m).cwiseAbs2();
  return v / static_cast<double>(xs.size() - 1);
}

inline double posterior_mean_error(const std::vector<Vec>& samples, const Vec& oracle_mean) {
  require(!samples.empty(), "posterior_mean_error: empty sample set");
  require(samples.front().size() == oracle_mean.size(), "posterior_mean_error: dimension mismatch");
  return (sample_mean(samples) - oracle_mean).norm();
}

// ---------------------------------------------------------------------------
// Rate fits

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least squares of log(error) on log(size).
inline RateFit rate_fit(const std::vector<double>& sizes, const std::vector<double>& errors) {
  require(sizes.size() == errors.size(), "rate_fit: length mismatch");
  require(sizes.size() >= 3, "rate_fit: need at least three points");
  const auto n = static_cast<double>(sizes.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    require(sizes[i] > 0 && errors[i] > 0, "rate_fit: entries must be positive");
    mx += std::log(sizes[i]);
    my += std::log(errors[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double dx = std::log(sizes[i]) - mx, dy = std::log(errors[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  require(sxx > 0, "rate_fit: sizes must not all be equal");
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  const double sse = std::max(0.0, syy - f.slope * sxy);
  f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
  return f;
}

// ---------------------------------------------------------------------------
// Estimator rows

struct EstimatorRow {
  std::string estimator;
  std::string config_hash;
  double value = 0.0;
  double se = 0.0;
  std::size_t draws = 0;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& estimator_header() {
  static const std::vector<std::string> h{"estimator", "config_hash", "value", "se", "draws", "seed"};
  return h;
}

inline void write_estimator_rows(std::ostream& os, const std::vector<EstimatorRow>& rows) {
  CsvWriter w(os, estimator_header());
  for (const auto& r : rows)
    w.row({r.estimator, r.config_hash, r.value, r.se, static_cast<unsigned long long>(r.draws),
           static_cast<unsigned long long>(r.seed)});
}

}  // namespace cdiff
