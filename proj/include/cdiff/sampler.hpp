#pragma once

// Euler-Maruyama discretisation of the reverse-time SDE
//   dX = [X/2 + s(X, y, T - t)] dt + dW,  X_0 ~ N(0, I),
// stopped at t0.

#include "cdiff/common.hpp"
#include "cdiff/csv.hpp"
#include "cdiff/schedule.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace cdiff {

enum class TimeGrid { uniform, geometric };

struct BackwardConfig {
  int d = 1;
  double T = 3.0;
  double t0 = 0.05;
  std::size_t steps = 500;
  TimeGrid grid = TimeGrid::geometric;
  std::uint64_t seed = 0;

  void validate() const {
    require(d >= 1, "BackwardConfig: d must be at least 1");
    require(steps >= 1, "BackwardConfig: steps must be at least 1");
    require(t0 > 0 && T > t0 && std::isfinite(T), "BackwardConfig: need 0 < t0 < T");
  }
};

/// steps + 1 reverse-time nodes from T down to t0, strictly decreasing.
inline std::vector<double> time_nodes(const BackwardConfig& cfg) {
  cfg.validate();
  std::vector<double> ts(cfg.steps + 1);
  const double n = static_cast<double>(cfg.steps);
  for (std::size_t k = 0; k <= cfg.steps; ++k) {
    const double u = static_cast<double>(k) / n;
    ts[k] = cfg.grid == TimeGrid::uniform ? cfg.T - u * (cfg.T - cfg.t0)
                                          : cfg.T * std::pow(cfg.t0 / cfg.T, u);
  }
  ts.front() = cfg.T;
  ts.back() = cfg.t0;
  return ts;
}

/// Score evaluated on a block of states (columns) at a shared time.
using BlockScore = std::function<Mat(const Mat& X, double t)>;

/// Wraps a pointwise score (x, y, t) -> R^d, with y empty for the null branch.
template <class F>
BlockScore pointwise_block(F f, Vec y) {
  return [f = std::move(f), y = std::move(y)](const Mat& X, double t) {
    Mat S(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) S.col(j) = f(Vec(X.col(j)), y, t);
    return S;
  };
}

inline constexpr double kScoreCap = 1e6;

struct SamplerStats {
  std::size_t clamped = 0;
};

/// Runs one block of chains; chain j draws all its noise from rngs[j].
inline Mat sample_block(const BlockScore& score, const BackwardConfig& cfg, std::vector<Rng>& rngs,
                        SamplerStats* stats = nullptr, std::size_t first_index = 0) {
  const auto ts = time_nodes(cfg);
  const auto B = static_cast<Eigen::Index>(rngs.size());
  Mat X(cfg.d, B);
  for (Eigen::Index j = 0; j < B; ++j) X.col(j) = rngs[static_cast<std::size_t>(j)].normal_vec(cfg.d);
  std::size_t clamped = 0;
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const double dt = ts[k] - ts[k + 1];
    const double sq = std::sqrt(dt);
    Mat S = score(X, ts[k]);
    require(S.rows() == X.rows() && S.cols() == X.cols(), "sampler: score returned wrong shape");
    for (Eigen::Index j = 0; j < B; ++j) {
      const double nrm = S.col(j).norm();
      if (nrm > kScoreCap) {
        S.col(j) *= kScoreCap / nrm;
        ++clamped;
      }
      X.col(j) += dt * (0.5 * X.col(j) + S.col(j)) + sq * rngs[static_cast<std::size_t>(j)].normal_vec(cfg.d);
      if (!X.col(j).allFinite())
        throw numerical_abort("sampler: non-finite state at step " + std::to_string(k) + " (t = " +
                              fmt_double(ts[k]) + ") for sample " +
                              std::to_string(first_index + static_cast<std::size_t>(j)));
    }
  }
  if (clamped > 0)
    std::cerr << "warning: sampler clamped the score " << clamped << " times at magnitude " << kScoreCap
              << "\n";
  if (stats) stats->clamped += clamped;
  return X;
}

/// One reverse-SDE draw with a pointwise score; y empty means the null branch.
template <class F>
Vec backward_sample(const F& score_fn, const Vec& y, const BackwardConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<Rng> one{rng};
  const Mat X = sample_block(pointwise_block(std::cref(score_fn), y), cfg, one);
  rng = one.front();
  return X.col(0);
}

/// Seed of sample i: derive_seed(cfg.seed, i).
inline std::uint64_t sample_seed(const BackwardConfig& cfg, std::size_t i) { return derive_seed(cfg.seed, i); }

/// Samples offset .. offset+count-1, each from its own derived stream. The
/// result does not depend on `jobs` or on how a range is split across calls.
inline std::vector<Vec> batch_sample(const BlockScore& score, const BackwardConfig& cfg, std::size_t count,
                                     std::size_t offset = 0, unsigned jobs = 1, std::size_t block = 256) {
  cfg.validate();
  require(count >= 1, "batch_sample: count must be at least 1");
  require(block >= 1, "batch_sample: block must be at least 1");
  std::vector<Vec> out(count);
  const std::size_t nblocks = (count + block - 1) / block;
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= nblocks) return;
      const std::size_t lo = b * block, hi = std::min(count, lo + block);
      std::vector<Rng> rngs;
      rngs.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) rngs.emplace_back(sample_seed(cfg, offset + i));
      try {
        const Mat X = sample_block(score, cfg, rngs, nullptr, offset + lo);
        for (std::size_t i = lo; i < hi; ++i) out[i] = X.col(static_cast<Eigen::Index>(i - lo));
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        next.store(nblocks);
        return;
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(nblocks)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

template <class F>
std::vector<Vec> batch_sample(const F& score_fn, const Vec& y, const BackwardConfig& cfg, std::size_t count,
                              std::size_t offset = 0, unsigned jobs = 1) {
  return batch_sample(pointwise_block(std::cref(score_fn), y), cfg, count, offset, jobs);
}

/// One row per sample: y columns, then x columns.
inline void write_samples_csv(std::ostream& os, const Vec& y, const std::vector<Vec>& xs) {
  std::vector<std::string> header;
  for (Eigen::Index i = 0; i < y.size(); ++i) header.push_back("y" + std::to_string(i));
  const Eigen::Index d = xs.empty() ? 0 : xs.front().size();
  for (Eigen::Index i = 0; i < d; ++i) header.push_back("x" + std::to_string(i));
  CsvWriter w(os, header);
  for (const auto& x : xs) {
    std::vector<CsvField> row;
    for (Eigen::Index i = 0; i < y.size(); ++i) row.emplace_back(y[i]);
    for (Eigen::Index i = 0; i < x.size(); ++i) row.emplace_back(x[i]);
    w.row(row);
  }
}

}  // namespace cdiff
