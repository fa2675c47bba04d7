#pragma once

// Classifier-free denoising score matching: per-sample loss, empirical risk
// and an Adam trainer for ScoreNet.

#include "cdiff/common.hpp"
#include "cdiff/densities.hpp"
#include "cdiff/schedule.hpp"
#include "cdiff/score_net.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace cdiff {

enum class MaskPolicy { random, always_null, always_id };

struct TrainConfig {
  std::size_t batch = 256;
  std::size_t steps = 3000;
  double lr = 2e-3;
  std::size_t t_samples_per_datum = 1;
  double t0 = 0.05;
  double T = 3.0;
  std::uint64_t seed = 0;
  double null_rate = 0.5;
  MaskPolicy mask = MaskPolicy::random;

  void validate() const {
    require(batch >= 1 && steps >= 1 && t_samples_per_datum >= 1, "TrainConfig: counts must be positive");
    require(t0 > 0 && T > t0, "TrainConfig: need 0 < t0 < T");
    require(lr > 0 && std::isfinite(lr), "TrainConfig: bad learning rate");
    require(null_rate >= 0 && null_rate <= 1, "TrainConfig: null rate must lie in [0, 1]");
  }
};

/// t_j = t0 + (T - t0)(j + U_j)/m for j = 0..m-1.
inline std::vector<double> stratified_times(std::size_t m, double t0, double T, Rng& rng) {
  std::vector<double> ts(m);
  const double w = (T - t0) / static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) ts[j] = t0 + w * (static_cast<double>(j) + rng.uniform());
  return ts;
}

inline GuidanceMask draw_mask(MaskPolicy policy, double null_rate, Rng& rng) {
  switch (policy) {
    case MaskPolicy::always_null: return GuidanceMask::null;
    case MaskPolicy::always_id: return GuidanceMask::id;
    case MaskPolicy::random: break;
  }
  return rng.bernoulli(null_rate) ? GuidanceMask::null : GuidanceMask::id;
}

/// Monte Carlo estimate of the per-sample loss l(x, y; s). `score` is called
/// as score(x_t, mask, y_or_empty, t).
template <class Score>
double denoising_loss(const Score& score, const Vec& x, const Vec& y, std::size_t t_draws, double t0,
                      double T, Rng& rng, double null_rate = 0.5,
                      MaskPolicy policy = MaskPolicy::random) {
  require(t_draws >= 1, "denoising_loss: t_draws must be at least 1");
  require(t0 > 0 && T > t0, "denoising_loss: need 0 < t0 < T");
  const auto ts = stratified_times(t_draws, t0, T, rng);
  double acc = 0.0;
  for (double t : ts) {
    const GuidanceMask m = draw_mask(policy, null_rate, rng);
    const Vec xt = perturb(x, t, rng);
    const Vec target = kernel_score(xt, x, t);
    const Vec s = m == GuidanceMask::id ? Vec(score(xt, m, y, t)) : Vec(score(xt, m, Vec(0), t));
    acc += (s - target).squaredNorm();
  }
  return acc / static_cast<double>(t_draws);
}

/// Mean per-sample loss over the dataset; datum i uses the stream
/// derive_seed(seed, id_i), so the value does not depend on data order.
template <class Score>
double empirical_risk(const Score& score, const Dataset& data, std::size_t t_draws, double t0, double T,
                      std::uint64_t seed, double null_rate = 0.5, MaskPolicy policy = MaskPolicy::random) {
  require(!data.empty(), "empirical_risk: empty dataset");
  double acc = 0.0;
  for (const auto& z : data) {
    Rng rng(derive_seed(seed, z.id));
    acc += denoising_loss(score, z.x, z.y, t_draws, t0, T, rng, null_rate, policy);
  }
  return acc / static_cast<double>(data.size());
}

inline auto net_callable(const ScoreNet& net) {
  return [&net](const Vec& x, GuidanceMask m, const Vec& y, double t) { return net.forward(x, m, y, t); };
}

struct TrainResult {
  ScoreNet net;
  std::vector<double> loss_trace;
};

class Adam {
 public:
  explicit Adam(const ScoreNet& net, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {
    for (const auto& p : net.tensors()) {
      m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(ScoreNet& net, const std::vector<Mat>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    auto& ps = net.tensors();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i].cwiseAbs2();
      ps[i].value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  std::vector<Mat> m_, v_;
};

/// Assembles one minibatch: `batch` data drawn with replacement, each with
/// t_samples_per_datum (t, mask, x_t) triples, times stratified over the slots.
inline NetBatch make_batch(const Dataset& data, const ScoreNetConfig& nc, const TrainConfig& tc, Rng& rng) {
  const std::size_t M = tc.batch * tc.t_samples_per_datum;
  NetBatch b;
  b.x.resize(nc.d, static_cast<Eigen::Index>(M));
  b.y = Mat::Zero(nc.d_y, static_cast<Eigen::Index>(M));
  b.masked.assign(M, 0);
  b.target.resize(nc.d, static_cast<Eigen::Index>(M));
  const auto ts = stratified_times(M, tc.t0, tc.T, rng);
  b.t = Eigen::Map<const Vec>(ts.data(), static_cast<Eigen::Index>(M));
  for (std::size_t i = 0; i < tc.batch; ++i) {
    const Datum& z = data[rng.index(data.size())];
    for (std::size_t r = 0; r < tc.t_samples_per_datum; ++r) {
      const auto j = static_cast<Eigen::Index>(i * tc.t_samples_per_datum + r);
      const double t = ts[static_cast<std::size_t>(j)];
      const bool null = draw_mask(tc.mask, tc.null_rate, rng) == GuidanceMask::null;
      const Vec xt = perturb(z.x, t, rng);
      b.x.col(j) = xt;
      b.target.col(j) = kernel_score(xt, z.x, t);
      b.masked[static_cast<std::size_t>(j)] = null;
      if (!null) b.y.col(j) = z.y;
    }
  }
  return b;
}

/// Adam on minibatch estimates of the empirical risk. Deterministic under
/// tc.seed; a non-finite loss aborts with the offending step.
inline TrainResult train(const Dataset& data, const ScoreNetConfig& nc, const TrainConfig& tc) {
  nc.validate();
  tc.validate();
  require(!data.empty(), "train: empty dataset");
  require(nc.t0 <= tc.t0 && tc.T <= nc.T, "train: training window must lie inside the network's window");
  for (const auto& z : data)
    require(z.x.size() == nc.d && z.y.size() == nc.d_y, "train: datum has wrong dimensions");

  TrainResult out{ScoreNet(nc, derive_seed(tc.seed, "init")), {}};
  out.loss_trace.reserve(tc.steps);
  Adam opt(out.net, tc.lr);
  Rng rng(derive_seed(tc.seed, "train"));
  std::vector<Mat> grad;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    const NetBatch b = make_batch(data, nc, tc, rng);
    const double loss = out.net.loss_and_grad(b, &grad);
    if (!std::isfinite(loss))
      throw numerical_abort("train: non-finite loss at step " + std::to_string(step));
    out.loss_trace.push_back(loss);
    opt.step(out.net, grad);
  }
  return out;
}

}  // namespace cdiff
