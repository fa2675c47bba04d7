#pragma once

// Forward Ornstein-Uhlenbeck noising: dX = -X/2 dt + dW started at the data.
// Its transition kernel is N(alpha_t x0, sigma_t^2 I) with alpha_t = e^{-t/2}
// and sigma_t^2 = 1 - e^{-t}.

#include "cdiff/common.hpp"

#include <cmath>
#include <string>

namespace cdiff {

struct AlphaSigma {
  double alpha;
  double sigma;
};

inline void check_time(double t) {
  require(std::isfinite(t), "time must be finite");
  require(t >= 0.0, "time must be nonnegative, got " + std::to_string(t));
}

/// (alpha_t, sigma_t). sigma uses expm1 so small t keeps full precision.
inline AlphaSigma alpha_sigma(double t) {
  check_time(t);
  return {std::exp(-0.5 * t), std::sqrt(-std::expm1(-t))};
}

/// Time window [t0, T] of training and sampling.
class DiffusionSchedule {
 public:
  DiffusionSchedule(double t0, double T) : t0_(t0), T_(T) {
    require(std::isfinite(t0) && std::isfinite(T), "schedule times must be finite");
    require(t0 > 0.0, "early-stopping time t0 must be positive");
    require(T > t0, "terminal time T must exceed t0");
  }

  double t0() const { return t0_; }
  double T() const { return T_; }
  double width() const { return T_ - t0_; }
  bool contains(double t) const { return t >= t0_ && t <= T_; }

 private:
  double t0_;
  double T_;
};

/// x_t = alpha_t x0 + sigma_t z with z drawn from rng.
inline Vec perturb(const Vec& x0, double t, Rng& rng) {
  require(all_finite(x0), "perturb: x0 must be finite");
  const auto [alpha, sigma] = alpha_sigma(t);
  Vec xt = alpha * x0;
  for (Eigen::Index i = 0; i < xt.size(); ++i) xt[i] += sigma * rng.normal();
  return xt;
}

/// Score of the forward kernel, -(x_t - alpha_t x0) / sigma_t^2.
inline Vec kernel_score(const Vec& xt, const Vec& x0, double t) {
  check_time(t);
  require(t > 0.0, "kernel_score is undefined at t = 0");
  require(xt.size() == x0.size(), "kernel_score: dimension mismatch");
  const auto [alpha, sigma] = alpha_sigma(t);
  return -(xt - alpha * x0) / (sigma * sigma);
}

}  // namespace cdiff
