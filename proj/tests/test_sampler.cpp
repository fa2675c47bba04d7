#include "cdiff/eval.hpp"
#include "cdiff/sampler.hpp"
#include "specs.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cdiff;
using specs::v1;

namespace {

Vec std_normal_score(const Vec& x, const Vec&, double) { return -x; }

// Exact score of x_t when x_0 ~ N(m, v) in one dimension.
struct GaussScore {
  double m, v;
  Vec operator()(const Vec& x, const Vec&, double t) const {
    const auto [a, s] = alpha_sigma(t);
    return Vec::Constant(1, -(x[0] - a * m) / (a * a * v + s * s));
  }
};

}  // namespace

TEST(TimeNodes, InsideWindowAndDecreasing) {
  for (TimeGrid g : {TimeGrid::uniform, TimeGrid::geometric}) {
    BackwardConfig cfg;
    cfg.steps = 37;
    cfg.grid = g;
    const auto ts = time_nodes(cfg);
    ASSERT_EQ(ts.size(), 38u);
    EXPECT_EQ(ts.front(), cfg.T);
    EXPECT_EQ(ts.back(), cfg.t0);
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) EXPECT_GT(ts[k], ts[k + 1]);
  }
}

TEST(Sampler, RejectsBadConfigs) {
  BackwardConfig cfg;
  cfg.steps = 0;
  Rng rng(1);
  EXPECT_THROW(backward_sample(std_normal_score, v1(0), cfg, rng), precondition_error);
  cfg = {};
  cfg.t0 = 0;
  EXPECT_THROW(backward_sample(std_normal_score, v1(0), cfg, rng), precondition_error);
  cfg = {};
  EXPECT_THROW(batch_sample(std_normal_score, v1(0), cfg, 0), precondition_error);
}

TEST(Sampler, StandardNormalIsStationary) {
  BackwardConfig cfg;
  cfg.steps = 200;
  cfg.seed = 3;
  const auto xs = batch_sample(std_normal_score, v1(0), cfg, 20000);
  const double m = sample_mean(xs)[0], v = sample_variance(xs)[0];
  EXPECT_NEAR(m, 0.0, 0.03);
  EXPECT_NEAR(v, 1.0, 0.05);
}

TEST(Sampler, GaussianTargetMoments) {
  // The sampler stops at t0, so the target is P_{t0}: mean alpha m, variance alpha^2 v + sigma^2.
  const GaussScore f{1.5, 0.25};
  BackwardConfig cfg;
  cfg.steps = 400;
  cfg.seed = 4;
  const auto xs = batch_sample(f, v1(0), cfg, 20000);
  const auto [a, s] = alpha_sigma(cfg.t0);
  EXPECT_NEAR(sample_mean(xs)[0], a * 1.5, 0.02);
  EXPECT_NEAR(sample_variance(xs)[0], a * a * 0.25 + s * s, 0.02);
}

TEST(Sampler, RefinementReducesBias) {
  const GaussScore f{2.0, 0.1};
  const auto [a, s] = alpha_sigma(0.05);
  const double target = a * a * 0.1 + s * s;
  auto var_err = [&](std::size_t steps) {
    BackwardConfig cfg;
    cfg.steps = steps;
    cfg.grid = TimeGrid::uniform;
    cfg.seed = 5;
    return std::abs(sample_variance(batch_sample(f, v1(0), cfg, 20000))[0] - target);
  };
  EXPECT_LT(var_err(500), var_err(10));
}

TEST(Sampler, SingleSampleUsesDerivedSeed) {
  BackwardConfig cfg;
  cfg.steps = 50;
  cfg.seed = 77;
  const auto xs = batch_sample(std_normal_score, v1(0), cfg, 1);
  Rng rng(sample_seed(cfg, 0));
  EXPECT_EQ(xs[0][0], backward_sample(std_normal_score, v1(0), cfg, rng)[0]);
}

TEST(Sampler, Reproducible) {
  BackwardConfig cfg;
  cfg.steps = 30;
  cfg.seed = 8;
  const GaussScore f{0.5, 2.0};
  const auto a = batch_sample(f, v1(0), cfg, 300), b = batch_sample(f, v1(0), cfg, 300);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i][0], b[i][0]);
  cfg.seed = 9;
  const auto c = batch_sample(f, v1(0), cfg, 300);
  EXPECT_NE(a[0][0], c[0][0]);
}

TEST(Sampler, SplittingAndJobsDoNotMatter) {
  BackwardConfig cfg;
  cfg.steps = 20;
  cfg.seed = 10;
  const GaussScore f{0.5, 2.0};
  const auto whole = batch_sample(f, v1(0), cfg, 1000);
  for (std::size_t part = 0; part < 10; ++part) {
    const auto piece = batch_sample(f, v1(0), cfg, 100, 100 * part);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(piece[i][0], whole[100 * part + i][0]);
  }
  const auto threaded = batch_sample(pointwise_block(f, v1(0)), cfg, 1000, 0, 4, 64);
  for (std::size_t i = 0; i < whole.size(); ++i) EXPECT_EQ(threaded[i][0], whole[i][0]);
}

TEST(Sampler, NonFiniteScoreAborts) {
  auto bad = [](const Vec& x, const Vec&, double) { return Vec(Vec::Constant(x.size(), std::nan(""))); };
  BackwardConfig cfg;
  cfg.steps = 5;
  try {
    batch_sample(bad, v1(0), cfg, 3, 0, 2);
    FAIL() << "expected numerical_abort";
  } catch (const numerical_abort& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Sampler, HugeScoreIsCapped) {
  auto huge = [](const Vec& x, const Vec&, double) { return Vec(Vec::Constant(x.size(), -1e12)); };
  BackwardConfig cfg;
  cfg.steps = 2;
  SamplerStats stats;
  std::vector<Rng> rngs{Rng(1), Rng(2)};
  const Mat X = sample_block(pointwise_block(huge, v1(0)), cfg, rngs, &stats);
  EXPECT_EQ(stats.clamped, 4u);
  EXPECT_TRUE(X.allFinite());
}

TEST(Sampler, TwoDimensionalIsotropic) {
  BackwardConfig cfg;
  cfg.d = 2;
  cfg.steps = 100;
  cfg.seed = 12;
  const auto xs = batch_sample(std_normal_score, Vec(0), cfg, 5000);
  ASSERT_EQ(xs[0].size(), 2);
  const Vec v = sample_variance(xs);
  EXPECT_NEAR(v[0], 1.0, 0.06);
  EXPECT_NEAR(v[1], 1.0, 0.06);
}

TEST(Sampler, CsvLayout) {
  std::ostringstream os;
  write_samples_csv(os, v1(0.25), {v1(1.0), v1(-2.0)});
  EXPECT_EQ(os.str(), "y0,x0\n0.25,1\n0.25,-2\n");
}
