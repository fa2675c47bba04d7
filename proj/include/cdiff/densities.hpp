#pragma once

// Analytic conditional densities: Gaussian mixtures whose weights are a
// softmax of affine maps of y and whose means are affine in y. Each component
// diffuses in closed form, so p_t(x|y) and its score are exact oracles.

#include "cdiff/common.hpp"
#include "cdiff/quadrature.hpp"
#include "cdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cdiff {

struct GaussianComponent {
  double logit_bias = 0.0;
  Vec logit_slope;  // d_y
  Vec mean_bias;    // d
  Mat mean_slope;   // d x d_y
  Mat cov;          // d x d, symmetric positive definite
};

/// Constants a family declares about itself. C1 and C2 are checked by
/// validate_assumptions; beta and B are informational.
struct DeclaredConstants {
  double C1 = 1.0;
  double C2 = 1.0;
  double beta = 2.0;
  double B = 1.0;
  double lambda_min = 0.0;
  double lambda_max = std::numeric_limits<double>::infinity();
};

class ConditionalDensitySpec {
 public:
  ConditionalDensitySpec(int d, int d_y, std::vector<GaussianComponent> components,
                         DeclaredConstants declared = {})
      : d_(d), d_y_(d_y), components_(std::move(components)), declared_(declared) {
    require(d >= 1, "density: d must be at least 1");
    require(d_y >= 0, "density: d_y must be nonnegative");
    require(!components_.empty(), "density: need at least one component");
    for (auto& c : components_) {
      if (c.logit_slope.size() == 0) c.logit_slope = Vec::Zero(d_y);
      if (c.mean_slope.size() == 0) c.mean_slope = Mat::Zero(d, d_y);
      require(c.logit_slope.size() == d_y, "density: logit_slope must have d_y entries");
      require(c.mean_bias.size() == d, "density: mean_bias must have d entries");
      require(c.mean_slope.rows() == d && c.mean_slope.cols() == d_y,
              "density: mean_slope must be d x d_y");
      require(c.cov.rows() == d && c.cov.cols() == d, "density: cov must be d x d");
      require(c.cov.allFinite() && c.mean_bias.allFinite() && c.mean_slope.allFinite() &&
                  c.logit_slope.allFinite() && std::isfinite(c.logit_bias),
              "density: parameters must be finite");
      require((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1 + c.cov.norm()),
              "density: covariance must be symmetric");
      Eigen::SelfAdjointEigenSolver<Mat> es(c.cov);
      require(es.eigenvalues().minCoeff() > 0.0, "density: covariance must be positive definite");
      eig_.push_back({es.eigenvectors(), es.eigenvalues()});
    }
  }

  int dim() const { return d_; }
  int guidance_dim() const { return d_y_; }
  const std::vector<GaussianComponent>& components() const { return components_; }
  const DeclaredConstants& declared() const { return declared_; }

  /// Eigenvalues of each covariance, for the [lambda_min, lambda_max] check.
  const Vec& cov_eigenvalues(std::size_t k) const { return eig_[k].values; }

  void check_guidance(const Vec& y) const {
    require(y.size() == d_y_, "guidance has wrong dimension");
    for (Eigen::Index j = 0; j < y.size(); ++j)
      require(std::isfinite(y[j]) && y[j] >= 0.0 && y[j] <= 1.0,
              "guidance must lie in the unit cube");
  }

  Vec weights(const Vec& y) const {
    check_guidance(y);
    return weights_unchecked(y);
  }

  /// Softmax weights; defined for any real y (used by finite differences at
  /// the cube boundary).
  Vec weights_unchecked(const Vec& y) const {
    Vec logits(components_.size());
    for (std::size_t k = 0; k < components_.size(); ++k)
      logits[k] = components_[k].logit_bias + components_[k].logit_slope.dot(y);
    const double mx = logits.maxCoeff();
    Vec w = (logits.array() - mx).exp();
    return w / w.sum();
  }

  Vec mean(std::size_t k, const Vec& y) const {
    return components_[k].mean_bias + components_[k].mean_slope * y;
  }

  double density(const Vec& x, const Vec& y) const {
    check_guidance(y);
    check_point(x);
    return std::exp(log_diffused_unchecked(x, y, 0.0));
  }

  double diffused_density(const Vec& x, const Vec& y, double t) const {
    check_guidance(y);
    check_point(x);
    check_time(t);
    return std::exp(log_diffused_unchecked(x, y, t));
  }

  double log_diffused_density(const Vec& x, const Vec& y, double t) const {
    check_guidance(y);
    check_point(x);
    check_time(t);
    return log_diffused_unchecked(x, y, t);
  }

  /// log p_t(x|y) without range checks on y.
  double log_diffused_unchecked(const Vec& x, const Vec& y, double t) const {
    const auto [alpha, sigma] = alpha_sigma(t);
    const Vec w = weights_unchecked(y);
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(components_.size());
    for (std::size_t k = 0; k < components_.size(); ++k) {
      terms[k] = std::log(w[k]) + component_log_pdf(k, x, y, alpha, sigma);
      mx = std::max(mx, terms[k]);
    }
    double acc = 0.0;
    for (double v : terms) acc += std::exp(v - mx);
    return mx + std::log(acc);
  }

  /// grad_x log p_t(x|y) in closed form via component responsibilities.
  Vec exact_score(const Vec& x, const Vec& y, double t) const {
    check_guidance(y);
    check_point(x);
    check_time(t);
    return score_unchecked(x, y, t);
  }

  Vec score_unchecked(const Vec& x, const Vec& y, double t) const {
    const auto [alpha, sigma] = alpha_sigma(t);
    const Vec w = weights_unchecked(y);
    const std::size_t K = components_.size();
    std::vector<double> logr(K);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      logr[k] = std::log(w[k]) + component_log_pdf(k, x, y, alpha, sigma);
      mx = std::max(mx, logr[k]);
    }
    double norm = 0.0;
    Vec s = Vec::Zero(d_);
    for (std::size_t k = 0; k < K; ++k) {
      const double r = std::exp(logr[k] - mx);
      norm += r;
      s += r * component_score(k, x, y, alpha, sigma);
    }
    return s / norm;
  }

  /// Marginal law of x_t when y is uniform on the unit cube, by
  /// Gauss-Legendre quadrature over y.
  double marginal_density(const Vec& x, double t) const {
    check_point(x);
    check_time(t);
    if (d_y_ == 0) return std::exp(log_diffused_unchecked(x, Vec(0), t));
    double acc = 0.0;
    for_each_y_node([&](const Vec& y, double wy) {
      acc += wy * std::exp(log_diffused_unchecked(x, y, t));
    });
    return acc;
  }

  Vec marginal_score(const Vec& x, double t) const {
    check_point(x);
    check_time(t);
    if (d_y_ == 0) return score_unchecked(x, Vec(0), t);
    std::vector<double> logs;
    std::vector<Vec> scores;
    std::vector<double> wys;
    for_each_y_node([&](const Vec& y, double wy) {
      logs.push_back(log_diffused_unchecked(x, y, t));
      scores.push_back(score_unchecked(x, y, t));
      wys.push_back(wy);
    });
    const double mx = *std::max_element(logs.begin(), logs.end());
    double norm = 0.0;
    Vec s = Vec::Zero(d_);
    for (std::size_t j = 0; j < logs.size(); ++j) {
      const double r = wys[j] * std::exp(logs[j] - mx);
      norm += r;
      s += r * scores[j];
    }
    return s / norm;
  }

  /// One draw of x ~ p(.|y): pick a component by weight, then a Gaussian draw.
  Vec sample(const Vec& y, Rng& rng) const {
    check_guidance(y);
    const Vec w = weights_unchecked(y);
    double u = rng.uniform();
    std::size_t k = 0;
    for (; k + 1 < components_.size(); ++k) {
      if (u < w[k]) break;
      u -= w[k];
    }
    const Vec z = rng.normal_vec(d_);
    const auto& e = eig_[k];
    return mean(k, y) + e.vectors * (e.values.array().sqrt().matrix().asDiagonal() * z);
  }

 private:
  struct Eigen_ {
    Mat vectors;
    Vec values;
  };

  void check_point(const Vec& x) const {
    require(x.size() == d_, "point has wrong dimension");
    require(x.allFinite(), "point must be finite");
  }

  // Component k diffused to time t: N(alpha mu, alpha^2 Sigma + sigma^2 I).
  double component_log_pdf(std::size_t k, const Vec& x, const Vec& y, double alpha,
                           double sigma) const {
    const auto& e = eig_[k];
    const Vec c = alpha * alpha * e.values.array() + sigma * sigma;
    const Vec r = e.vectors.transpose() * (x - alpha * mean(k, y));
    return -0.5 * (r.array().square() / c.array()).sum() - 0.5 * c.array().log().sum() -
           0.5 * d_ * kLogTwoPi;
  }

  Vec component_score(std::size_t k, const Vec& x, const Vec& y, double alpha,
                      double sigma) const {
    const auto& e = eig_[k];
    const Vec c = alpha * alpha * e.values.array() + sigma * sigma;
    const Vec r = e.vectors.transpose() * (x - alpha * mean(k, y));
    return -(e.vectors * (r.array() / c.array()).matrix());
  }

  template <class F>
  void for_each_y_node(F&& f) const {
    static const QuadratureRule rule1 = gauss_legendre<40>(0.0, 1.0);
    static const QuadratureRule rule2 = gauss_legendre<20>(0.0, 1.0);
    const auto& rule = d_y_ == 1 ? rule1 : rule2;
    const std::size_t m = rule.nodes.size();
    std::vector<std::size_t> idx(d_y_, 0);
    Vec y(d_y_);
    while (true) {
      double w = 1.0;
      for (int j = 0; j < d_y_; ++j) {
        y[j] = rule.nodes[idx[j]];
        w *= rule.weights[idx[j]];
      }
      f(y, w);
      int j = 0;
      for (; j < d_y_; ++j) {
        if (++idx[j] < m) break;
        idx[j] = 0;
      }
      if (j == d_y_) break;
    }
  }

  int d_;
  int d_y_;
  std::vector<GaussianComponent> components_;
  std::vector<Eigen_> eig_;
  DeclaredConstants declared_;
};

/// A density satisfying the fast-rate condition: f(x, y) = p(x|y) exp(C2 |x|^2 / 2)
/// stays within [C, B].
struct FastRateDensitySpec {
  ConditionalDensitySpec base;
  double C2 = 1.0;
  double C = 0.0;
  double B = 1.0;

  /// log f(x, y); finite for any real y.
  double log_f(const Vec& x, const Vec& y) const {
    return base.log_diffused_unchecked(x, y, 0.0) + 0.5 * C2 * x.squaredNorm();
  }
  double f(const Vec& x, const Vec& y) const { return std::exp(log_f(x, y)); }
};

// ---------------------------------------------------------------------------
// Convenience constructors

/// x | y ~ N(mean_bias + mean_slope y, variance I) with one component.
inline ConditionalDensitySpec gaussian_location_family(int d, int d_y, Vec mean_bias,
                                                       Mat mean_slope, double variance) {
  GaussianComponent c;
  c.mean_bias = std::move(mean_bias);
  c.mean_slope = std::move(mean_slope);
  c.logit_slope = Vec::Zero(d_y);
  c.cov = variance * Mat::Identity(d, d);
  DeclaredConstants dc;
  dc.C2 = 1.0 / variance;
  dc.lambda_min = dc.lambda_max = variance;
  // Exact for a centred family; shifted families must declare their own.
  dc.C1 = std::pow(2.0 * kPi * variance, -0.5 * d);
  return {d, d_y, {c}, dc};
}

inline ConditionalDensitySpec standard_normal_prior(int d, int d_y = 0) {
  return gaussian_location_family(d, d_y, Vec::Zero(d), Mat::Zero(d, d_y), 1.0);
}

// ---------------------------------------------------------------------------
// Datasets

struct Datum {
  Vec x;
  Vec y;
  std::uint64_t id = 0;
};

using Dataset = std::vector<Datum>;
using GuidanceLaw = std::function<Vec(Rng&)>;

inline GuidanceLaw uniform_guidance(int d_y) {
  return [d_y](Rng& rng) { return rng.uniform_vec(d_y); };
}

/// n i.i.d. pairs: y from y_law (uniform by default), then x ~ p(.|y).
inline Dataset sample_dataset(const ConditionalDensitySpec& spec, std::size_t n, Rng& rng,
                              GuidanceLaw y_law = {}) {
  require(n >= 1, "sample_dataset: n must be at least 1");
  if (!y_law) y_law = uniform_guidance(spec.guidance_dim());
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Datum dt;
    dt.y = y_law(rng);
    dt.x = spec.sample(dt.y, rng);
    dt.id = i;
    out.push_back(std::move(dt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assumption checks

struct ValidationReport {
  double envelope_max_violation = 0.0;  // max of p - C1 exp(-C2 |x|^2 / 2); <= 0 passes
  bool envelope_pass = true;
  bool weights_pass = true;       // strictly positive and summing to one on the y grid
  bool covariance_pass = true;    // eigenvalues inside [lambda_min, lambda_max]
  std::optional<double> f_min;    // fast-rate family only
  std::optional<double> f_max;
  std::optional<bool> fast_rate_pass;
  std::size_t grid_points = 0;

  bool pass() const {
    return envelope_pass && weights_pass && covariance_pass && fast_rate_pass.value_or(true);
  }
};

namespace detail {

inline std::vector<Vec> cube_grid(int dim, double lo, double hi, int res) {
  std::vector<Vec> pts;
  if (dim == 0) {
    pts.emplace_back(0);
    return pts;
  }
  std::vector<int> idx(dim, 0);
  Vec p(dim);
  while (true) {
    for (int j = 0; j < dim; ++j)
      p[j] = res == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * idx[j] / (res - 1.0);
    pts.push_back(p);
    int j = 0;
    for (; j < dim; ++j) {
      if (++idx[j] < res) break;
      idx[j] = 0;
    }
    if (j == dim) break;
  }
  return pts;
}

inline int grid_res_for(int dim, int res) {
  // Keep grids near 64^2 points total in higher dimension.
  if (dim <= 2) return res;
  return std::max(2, static_cast<int>(std::pow(4096.0, 1.0 / dim)));
}

}  // namespace detail

inline void check_base(const ConditionalDensitySpec& spec, double radius, int res,
                       ValidationReport& rep) {
  const auto& dc = spec.declared();
  const auto xs = detail::cube_grid(spec.dim(), -radius, radius,
                                    detail::grid_res_for(spec.dim(), res));
  const auto ys = detail::cube_grid(spec.guidance_dim(), 0.0, 1.0,
                                    std::min(res, detail::grid_res_for(spec.guidance_dim(), 17)));
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& y : ys) {
    const Vec w = spec.weights(y);
    if (!(w.minCoeff() > 0.0) || std::abs(w.sum() - 1.0) > 1e-12) rep.weights_pass = false;
    for (const auto& x : xs) {
      const double p = spec.density(x, y);
      const double env = dc.C1 * std::exp(-0.5 * dc.C2 * x.squaredNorm());
      worst = std::max(worst, p - env);
      ++rep.grid_points;
    }
  }
  rep.envelope_max_violation = worst;
  rep.envelope_pass = worst <= 1e-12 * dc.C1;
  for (std::size_t k = 0; k < spec.components().size(); ++k) {
    const Vec& ev = spec.cov_eigenvalues(k);
    if (ev.minCoeff() < dc.lambda_min * (1 - 1e-12) || ev.maxCoeff() > dc.lambda_max * (1 + 1e-12))
      rep.covariance_pass = false;
  }
}

/// Grid check of the sub-Gaussian envelope, weight positivity and covariance
/// bounds. Failures are reported, never thrown.
inline ValidationReport validate_assumptions(const ConditionalDensitySpec& spec,
                                             double grid_radius = 5.0, int grid_resolution = 64) {
  require(grid_radius > 0 && grid_resolution >= 2, "validate_assumptions: bad grid");
  ValidationReport rep;
  check_base(spec, grid_radius, grid_resolution, rep);
  return rep;
}

/// As above, plus the range of f(x, y) = p(x|y) exp(C2 |x|^2 / 2) against [C, B].
inline ValidationReport validate_assumptions(const FastRateDensitySpec& spec,
                                             double grid_radius = 5.0, int grid_resolution = 64) {
  require(grid_radius > 0 && grid_resolution >= 2, "validate_assumptions: bad grid");
  ValidationReport rep;
  check_base(spec.base, grid_radius, grid_resolution, rep);
  const auto xs = detail::cube_grid(spec.base.dim(), -grid_radius, grid_radius,
                                    detail::grid_res_for(spec.base.dim(), grid_resolution));
  const auto ys = detail::cube_grid(spec.base.guidance_dim(), 0.0, 1.0,
                                    std::min(grid_resolution, 17));
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& y : ys)
    for (const auto& x : xs) {
      const double f = spec.f(x, y);
      lo = std::min(lo, f);
      hi = std::max(hi, f);
    }
  rep.f_min = lo;
  rep.f_max = hi;
  rep.fast_rate_pass = lo >= spec.C * (1 - 1e-12) && hi <= spec.B * (1 + 1e-12) && spec.C > 0;
  return rep;
}

// ---------------------------------------------------------------------------
// Envelope diagnostics

/// Upper envelope of p_t(x|y) implied by the sub-Gaussian bound on p(x|y).
inline double diffused_envelope(const ConditionalDensitySpec& spec, const Vec& x, double t) {
  const auto [alpha, sigma] = alpha_sigma(t);
  const auto& dc = spec.declared();
  const double q = alpha * alpha + dc.C2 * sigma * sigma;
  return dc.C1 / std::pow(q, 0.5 * spec.dim()) * std::exp(-dc.C2 * x.squaredNorm() / (2 * q));
}

/// Largest sigma_t^2 |score|_inf / (|x| + 1) over a grid of (x, y, t); the
/// constant in the linear-growth score envelope.
inline double fit_score_envelope(const ConditionalDensitySpec& spec, const std::vector<double>& ts,
                                 double radius, int res) {
  const auto xs = detail::cube_grid(spec.dim(), -radius, radius,
                                    detail::grid_res_for(spec.dim(), res));
  const auto ys = detail::cube_grid(spec.guidance_dim(), 0.0, 1.0, std::min(res, 9));
  double c = 0.0;
  for (double t : ts) {
    const double s2 = -std::expm1(-t);
    for (const auto& y : ys)
      for (const auto& x : xs) {
        const Vec s = spec.exact_score(x, y, t);
        c = std::max(c, s2 * s.cwiseAbs().maxCoeff() / (x.norm() + 1.0));
      }
  }
  return c;
}

}  // namespace cdiff
