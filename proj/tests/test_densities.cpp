#include "cdiff/density_io.hpp"
#include "cdiff/densities.hpp"
#include "oracles.hpp"
#include "specs.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cdiff;
using specs::v1;

namespace {

ConditionalDensitySpec two_bumps() {
  return {1, 0,
          {specs::component(0.0, Vec(0), v1(-1.0), Mat::Zero(1, 0), specs::m11(1.0)),
           specs::component(0.0, Vec(0), v1(1.0), Mat::Zero(1, 0), specs::m11(1.0))}};
}

}  // namespace

TEST(Density, StandardNormalAtOrigin) {
  const auto s = standard_normal_prior(1, 1);
  EXPECT_NEAR(s.density(v1(0.0), v1(0.3)), 0.3989422804014327, 1e-15);
}

TEST(Density, EqualMixtureAtOrigin) {
  EXPECT_NEAR(two_bumps().density(v1(0.0), Vec(0)), std::exp(-0.5) / std::sqrt(2 * kPi), 1e-15);
}

TEST(Density, NormalisedByQuadrature) {
  const auto s = specs::mixture_1d();
  for (double y : {0.0, 0.4, 1.0}) {
    const double mass = oracle::integrate([&](double x) { return s.density(v1(x), v1(y)); }, -20, 20);
    EXPECT_NEAR(mass, 1.0, 1e-6);
  }
}

TEST(Density, RejectsGuidanceOutsideCube) {
  const auto s = specs::mixture_1d();
  EXPECT_THROW(s.density(v1(0.0), v1(1.5)), precondition_error);
  EXPECT_THROW(s.density(v1(0.0), v1(-0.1)), precondition_error);
}

TEST(Density, WeightsOnSimplex) {
  const auto s = specs::mixture_2d_y2();
  for (const auto& y : detail::cube_grid(2, 0.0, 1.0, 9)) {
    const Vec w = s.weights(y);
    EXPECT_GT(w.minCoeff(), 0.0);
    EXPECT_NEAR(w.sum(), 1.0, 1e-14);
  }
}

TEST(DiffusedDensity, StandardNormalIsStationary) {
  const auto s = standard_normal_prior(2, 1);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vec x = rng.normal_vec(2);
    const double t = rng.uniform(0.0, 5.0);
    EXPECT_NEAR(s.diffused_density(x, v1(0.5), t), std::exp(-0.5 * x.squaredNorm()) / (2 * kPi), 1e-15);
  }
}

TEST(DiffusedDensity, MatchesConvolutionQuadrature) {
  const auto s = gaussian_location_family(1, 1, v1(0.7), specs::m11(0.0), 0.36);
  const double t = 1.0;
  const auto [a, sg] = alpha_sigma(t);
  for (double x : {-2.0, -0.3, 0.0, 0.9, 2.5}) {
    const double conv = oracle::integrate(
        [&](double z) {
          return s.density(v1(z), v1(0.2)) * std::exp(-0.5 * (x - a * z) * (x - a * z) / (sg * sg)) /
                 (sg * std::sqrt(2 * kPi));
        },
        -15, 15);
    EXPECT_LT(oracle::rel_err(s.diffused_density(v1(x), v1(0.2), t), conv), 1e-6);
    const double v = a * a * 0.36 + sg * sg;
    const double closed = std::exp(-0.5 * (x - a * 0.7) * (x - a * 0.7) / v) / std::sqrt(2 * kPi * v);
    EXPECT_LT(oracle::rel_err(s.diffused_density(v1(x), v1(0.2), t), closed), 1e-12);
  }
}

TEST(DiffusedDensity, MixesToStandardNormal) {
  const auto s = specs::mixture_2d();
  for (const auto& x : detail::cube_grid(2, -3, 3, 7))
    EXPECT_NEAR(s.diffused_density(x, v1(0.6), 20.0), std::exp(-0.5 * x.squaredNorm()) / (2 * kPi), 1e-4);
}

TEST(ExactScore, StandardNormalIsMinusX) {
  const auto s = standard_normal_prior(2, 1);
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const Vec x = rng.normal_vec(2);
    EXPECT_LT((s.exact_score(x, v1(0.1), rng.uniform(0.0, 3.0)) + x).norm(), 1e-13);
  }
}

TEST(ExactScore, MatchesFiniteDifferences) {
  Rng rng(3);
  for (const auto& s : {specs::mixture_1d(), specs::mixture_2d(), specs::mixture_2d_y2()}) {
    for (double t : {0.1, 1.0, 3.0}) {
      for (int i = 0; i < 10; ++i) {
        const Vec x = 1.5 * rng.normal_vec(s.dim());
        const Vec y = rng.uniform_vec(s.guidance_dim());
        const Vec fd = oracle::fd_gradient([&](const Vec& z) { return s.log_diffused_density(z, y, t); }, x, 1e-5);
        EXPECT_LT(oracle::rel_err(s.exact_score(x, y, t), fd), 1e-4);
      }
    }
  }
}

TEST(ExactScore, LinearGrowthEnvelope) {
  const auto s = specs::mixture_2d();
  const std::vector<double> ts{0.1, 0.5, 1.0, 3.0};
  const double C5 = fit_score_envelope(s, ts, 4.0, 9);
  EXPECT_GT(C5, 0.0);
  // Finer grid: the fitted constant, with the usual 1.5 headroom, still bounds the score.
  for (double t : ts) {
    const double s2 = -std::expm1(-t);
    for (const auto& x : detail::cube_grid(2, -4, 4, 33))
      for (double y : {0.0, 0.37, 0.81, 1.0})
        EXPECT_LE(s.exact_score(x, v1(y), t).cwiseAbs().maxCoeff(), 1.5 * C5 / s2 * (x.norm() + 1.0));
  }
}

TEST(MarginalScore, MatchesFiniteDifferences) {
  const auto s = specs::mixture_1d();
  for (double t : {0.2, 1.0}) {
    for (double x : {-2.0, 0.0, 1.3}) {
      auto logp = [&](const Vec& z) { return std::log(s.marginal_density(z, t)); };
      EXPECT_LT(oracle::rel_err(s.marginal_score(v1(x), t), oracle::fd_gradient(logp, v1(x), 1e-5)), 1e-6);
    }
  }
}

TEST(MarginalDensity, MatchesAdaptiveQuadratureOverY) {
  const auto s = specs::mixture_1d();
  for (double x : {-1.0, 0.5, 2.0}) {
    const double ref = oracle::integrate([&](double y) { return s.diffused_density(v1(x), v1(y), 0.5); }, 0, 1);
    EXPECT_LT(oracle::rel_err(s.marginal_density(v1(x), 0.5), ref), 1e-10);
  }
}

TEST(Sample, MatchesMixtureMoments) {
  const auto s = specs::mixture_1d();
  Rng rng(4);
  const Vec y = v1(0.3);
  const int n = 200000;
  double m = 0;
  for (int i = 0; i < n; ++i) m += s.sample(y, rng)[0];
  m /= n;
  const Vec w = s.weights(y);
  const double expect = w[0] * s.mean(0, y)[0] + w[1] * s.mean(1, y)[0];
  EXPECT_NEAR(m, expect, 0.01);
}

TEST(Validate, StandardNormalPasses) {
  for (int d : {1, 2}) {
    const auto s = standard_normal_prior(d, 1);
    const auto rep = validate_assumptions(s, 5.0, 32);
    EXPECT_TRUE(rep.pass());
    EXPECT_LE(rep.envelope_max_violation, 1e-15);
  }
}

TEST(Validate, LargeMeanWithSmallC1Fails) {
  auto base = gaussian_location_family(1, 1, v1(4.0), specs::m11(0.0), 1.0);
  const auto rep = validate_assumptions(base, 6.0, 64);
  EXPECT_FALSE(rep.envelope_pass);
  EXPECT_GT(rep.envelope_max_violation, 0.0);
}

TEST(Validate, ConstantFastRateFamily) {
  FastRateDensitySpec f{standard_normal_prior(1, 1), 1.0, 1.0 / std::sqrt(2 * kPi), 1.0 / std::sqrt(2 * kPi)};
  const auto rep = validate_assumptions(f, 5.0, 32);
  ASSERT_TRUE(rep.f_min && rep.f_max);
  EXPECT_NEAR(*rep.f_min, *rep.f_max, 1e-15);
  EXPECT_TRUE(rep.pass());
}

TEST(Validate, BumpFamilyRange) {
  const auto f = specs::bump_fast_rate();
  const auto rep = validate_assumptions(f, 6.0, 64);
  EXPECT_TRUE(rep.fast_rate_pass.value());
  EXPECT_NEAR(*rep.f_min, 0.5 / std::sqrt(2 * kPi), 1e-3);
}

TEST(Validate, RejectsBadCovariance) {
  GaussianComponent c = specs::component(0, v1(0), v1(0), specs::m11(0), specs::m11(-1.0));
  EXPECT_THROW(ConditionalDensitySpec(1, 1, {c}), precondition_error);
}

TEST(DiffusedEnvelope, BoundsTheDiffusedDensity) {
  const auto s = standard_normal_prior(1, 1);
  for (double t : {0.1, 1.0, 4.0})
    for (double x = -4; x <= 4; x += 0.25)
      EXPECT_LE(s.diffused_density(v1(x), v1(0.5), t), diffused_envelope(s, v1(x), t) * (1 + 1e-12));
}

TEST(DensityIo, RoundTrip) {
  const auto s = specs::mixture_2d();
  const auto j = to_json(s);
  const auto back = density_from_json(nlohmann::json::parse(j.dump()));
  Rng rng(6);
  for (int i = 0; i < 5; ++i) {
    const Vec x = rng.normal_vec(2), y = rng.uniform_vec(1);
    EXPECT_EQ(back.diffused_density(x, y, 0.3), s.diffused_density(x, y, 0.3));
  }
  const auto f = specs::bump_fast_rate();
  const auto fb = fast_rate_from_json(nlohmann::json::parse(to_json(f).dump()));
  ASSERT_TRUE(fb.has_value());
  EXPECT_EQ(fb->C, f.C);
  EXPECT_FALSE(fast_rate_from_json(j).has_value());
}
